#pragma once

// Dense row-major tensors with a reverse-mode gradient tape.
//
// Tensors are handles onto shared, immutable storage. Only leaf tensors
// (those not produced by a recorded operation) expose mutable storage, and
// only the optimizer, the checkpoint loader and gradcheck are expected to
// write through it.
//
// Operations record themselves on the thread's active Tape (see TapeScope)
// whenever at least one input requires a gradient. Without an active tape
// every operation is a plain forward evaluation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace lfsamba {

/// Element type. Tests and gradcheck rely on 64-bit headroom.
using Real = double;
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<Real> data;
  bool requires_grad = false;
  std::uint64_t id = 0;
  const Tape* tape = nullptr;  // recording tape, null for leaves
  std::size_t node = 0;        // index on that tape
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, Real value);
  static Tensor from(Shape shape, std::vector<Real> data);
  static Tensor scalar(Real value);
  /// Leaf that participates in differentiation.
  static Tensor parameter(Shape shape, std::vector<Real> data);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  std::span<const Real> data() const;
  Real item() const;
  Real operator[](std::size_t flat) const { return data()[flat]; }

  /// Writable storage of a leaf tensor. Throws for operation outputs.
  std::span<Real> mutable_data() const;

  bool requires_grad() const;
  bool is_leaf() const;
  std::uint64_t id() const;

  /// Same values, no gradient participation.
  Tensor detach() const;

  const detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& shared_impl() const { return impl_; }

  // Internal: adopt existing storage.
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Backward rule: receives the output gradient and one accumulator per input
/// (null where the input does not require a gradient). Rules must add into
/// the accumulators, never overwrite them.
using BackwardFn = std::function<void(std::span<const Real> grad_out, std::span<std::vector<Real>*> grad_in)>;

/// Wraps a freshly computed output. Records a tape node when a tape is active
/// and any input requires a gradient.
Tensor record_op(Shape shape, std::vector<Real> data, std::initializer_list<Tensor> inputs, BackwardFn backward);
Tensor record_op_list(Shape shape, std::vector<Real> data, const std::vector<Tensor>& inputs, BackwardFn backward);

/// True when an operation on these inputs would be recorded.
bool will_record(std::initializer_list<Tensor> inputs);

class Tape {
 public:
  struct Node {
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  const Node& node(std::size_t i) const { return nodes_[i]; }

  std::size_t push(Node node);
  /// Releases saved activations; the tape cannot be swept again.
  void consume();

 private:
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// Installs a tape as the thread's active recording context for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Per-parameter gradients keyed by tensor identity.
class Gradients {
 public:
  /// Gradient for `param`; zeros of the parameter's shape when it was not reached.
  Tensor get(const Tensor& param) const;
  bool contains(const Tensor& param) const { return grads_.count(param.id()) != 0; }
  std::size_t size() const { return grads_.size(); }
  void set(const Tensor& param, Tensor grad) { grads_[param.id()] = std::move(grad); }

 private:
  std::unordered_map<std::uint64_t, Tensor> grads_;
};

/// Reverse sweep from a scalar loss. A tape can be swept once.
Gradients backward(const Tensor& loss, Tape& tape);

struct GradcheckOptions {
  Real tol = 1e-4;
  Real abs_tol = 1e-7;
  Real step_scale = 1e-5;
  /// Fraction of input entries probed (at least one per input).
  Real sample_fraction = 1.0;
  std::uint64_t seed = 0;
};

struct GradcheckReport {
  Real max_rel_err = 0;
  Real max_abs_err = 0;
  std::size_t checked = 0;
  bool pass = true;
};

/// Central differences of a scalar function of leaf tensors against the tape.
/// `f` must read the current contents of `inputs`; gradcheck perturbs them in
/// place and restores them afterwards.
GradcheckReport gradcheck(const std::function<Tensor()>& f, std::span<const Tensor> inputs,
                          const GradcheckOptions& opts = {});
GradcheckReport gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                          const GradcheckOptions& opts = {});
/// Same comparison against caller-supplied analytic gradients.
GradcheckReport gradcheck_against(const std::function<Tensor()>& f, std::span<const Tensor> inputs,
                                  const Gradients& analytic, const GradcheckOptions& opts = {});

}  // namespace lfsamba
