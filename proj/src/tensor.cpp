#include "lfsamba/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "lfsamba/errors.hpp"

namespace lfsamba {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local Tape* t_active_tape = nullptr;

std::shared_ptr<detail::TensorImpl> make_impl(Shape shape, std::vector<Real> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor of shape " + shape_str(shape) + " cannot hold " + std::to_string(data.size()) +
                         " values");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  impl->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return impl;
}

const detail::TensorImpl& checked(const std::shared_ptr<detail::TensorImpl>& impl) {
  if (!impl) throw ContractError("use of an undefined tensor");
  return *impl;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, Real value) {
  const auto n = shape_numel(shape);
  return Tensor(make_impl(std::move(shape), std::vector<Real>(n, value), false));
}

Tensor Tensor::from(Shape shape, std::vector<Real> data) {
  return Tensor(make_impl(std::move(shape), std::move(data), false));
}

Tensor Tensor::scalar(Real value) { return from({1}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<Real> data) {
  return Tensor(make_impl(std::move(shape), std::move(data), true));
}

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(impl_).data.size(); }

std::span<const Real> Tensor::data() const { return checked(impl_).data; }

Real Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

std::span<Real> Tensor::mutable_data() const {
  checked(impl_);
  if (impl_->tape != nullptr) throw ContractError("operation outputs are immutable");
  return impl_->data;
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

bool Tensor::is_leaf() const { return checked(impl_).tape == nullptr; }

std::uint64_t Tensor::id() const { return checked(impl_).id; }

Tensor Tensor::detach() const { return Tensor(make_impl(shape(), impl_->data, false)); }

std::size_t Tape::push(Node node) {
  if (consumed_) throw ContractError("tape already swept; re-run the forward pass");
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

void Tape::consume() {
  consumed_ = true;
  nodes_.clear();
  nodes_.shrink_to_fit();
}

TapeScope::TapeScope(Tape& tape) : previous_(t_active_tape) { t_active_tape = &tape; }
TapeScope::~TapeScope() { t_active_tape = previous_; }

Tape* active_tape() { return t_active_tape; }

Tensor record_op(Shape shape, std::vector<Real> data, std::initializer_list<Tensor> inputs, BackwardFn backward) {
  return record_op_list(std::move(shape), std::move(data), std::vector<Tensor>(inputs), std::move(backward));
}

Tensor record_op_list(Shape shape, std::vector<Real> data, const std::vector<Tensor>& inputs, BackwardFn backward) {
  Tape* tape = t_active_tape;
  bool needs = false;
  if (tape != nullptr) {
    for (const auto& in : inputs) {
      if (in.defined() && in.requires_grad()) {
        needs = true;
        break;
      }
    }
  }
  auto impl = make_impl(std::move(shape), std::move(data), needs);
  if (needs) {
    Tape::Node node;
    node.inputs.reserve(inputs.size());
    for (const auto& in : inputs) node.inputs.push_back(in.shared_impl());
    node.output = impl;
    node.backward = std::move(backward);
    impl->tape = tape;
    impl->node = tape->push(std::move(node));
  }
  return Tensor(std::move(impl));
}

bool will_record(std::initializer_list<Tensor> inputs) {
  if (t_active_tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.defined() && t.requires_grad(); });
}

Tensor Gradients::get(const Tensor& param) const {
  auto it = grads_.find(param.id());
  if (it == grads_.end()) return Tensor::zeros(param.shape());
  return it->second;
}

Gradients backward(const Tensor& loss, Tape& tape) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss");
  }
  if (tape.consumed()) throw ContractError("backward called twice on the same tape; re-run the forward pass");
  const auto* root = loss.impl();
  if (root->tape != &tape) throw ContractError("loss was not recorded on this tape");

  std::unordered_map<const detail::TensorImpl*, std::vector<Real>> grads;
  grads[root] = {1.0};
  // Leaves that require gradients, in first-seen order for a stable result.
  std::vector<std::shared_ptr<detail::TensorImpl>> leaves;

  std::vector<std::vector<Real>*> slots;
  for (std::size_t i = root->node + 1; i-- > 0;) {
    const auto& node = tape.node(i);
    auto it = grads.find(node.output.get());
    if (it == grads.end()) continue;
    std::vector<Real> grad_out = std::move(it->second);
    grads.erase(it);

    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const auto& in = node.inputs[k];
      if (!in || !in->requires_grad) continue;
      auto [slot, inserted] = grads.try_emplace(in.get());
      if (inserted) {
        slot->second.assign(in->data.size(), 0.0);
        if (in->tape == nullptr) leaves.push_back(in);
      }
      slots[k] = &slot->second;
    }
    node.backward(grad_out, slots);
  }

  Gradients out;
  for (const auto& leaf : leaves) {
    auto it = grads.find(leaf.get());
    out.set(Tensor(leaf), Tensor::from(leaf->shape, std::move(it->second)));
  }
  tape.consume();
  return out;
}

namespace {

std::vector<std::pair<std::size_t, std::size_t>> probe_entries(std::span<const Tensor> inputs,
                                                                const GradcheckOptions& opts) {
  std::vector<std::pair<std::size_t, std::size_t>> entries;
  std::mt19937_64 rng(opts.seed);
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const auto n = inputs[t].numel();
    if (opts.sample_fraction >= 1.0) {
      for (std::size_t i = 0; i < n; ++i) entries.emplace_back(t, i);
      continue;
    }
    auto count = static_cast<std::size_t>(std::ceil(opts.sample_fraction * static_cast<Real>(n)));
    count = std::clamp<std::size_t>(count, 1, n);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(idx[i], idx[pick(rng)]);
      entries.emplace_back(t, idx[i]);
    }
  }
  return entries;
}

Real eval_scalar(const std::function<Tensor()>& f) {
  const Tensor y = f();
  if (y.numel() != 1) throw ContractError("gradcheck requires a scalar function");
  const Real v = y.item();
  if (!std::isfinite(v)) throw EvaluationError("gradcheck: function value is not finite");
  return v;
}

}  // namespace

GradcheckReport gradcheck_against(const std::function<Tensor()>& f, std::span<const Tensor> inputs,
                                  const Gradients& analytic, const GradcheckOptions& opts) {
  GradcheckReport report;
  eval_scalar(f);
  for (const auto& [t, i] : probe_entries(inputs, opts)) {
    auto values = inputs[t].mutable_data();
    const Real x0 = values[i];
    const Real h = opts.step_scale * std::max<Real>(1.0, std::abs(x0));
    values[i] = x0 + h;
    const Real fp = eval_scalar(f);
    values[i] = x0 - h;
    const Real fm = eval_scalar(f);
    values[i] = x0;
    const Real numeric = (fp - fm) / (2.0 * h);
    const Real exact = analytic.get(inputs[t])[i];
    const Real abs_err = std::abs(numeric - exact);
    const Real scale = std::max(std::abs(numeric), std::abs(exact));
    const Real rel_err = abs_err <= opts.abs_tol ? 0.0 : abs_err / scale;
    report.max_abs_err = std::max(report.max_abs_err, abs_err);
    report.max_rel_err = std::max(report.max_rel_err, rel_err);
    ++report.checked;
  }
  report.pass = report.max_rel_err <= opts.tol;
  return report;
}

GradcheckReport gradcheck(const std::function<Tensor()>& f, std::span<const Tensor> inputs,
                          const GradcheckOptions& opts) {
  for (const auto& in : inputs) {
    if (!in.is_leaf() || !in.requires_grad()) throw ContractError("gradcheck inputs must be parameter leaves");
  }
  Gradients analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor y = f();
    if (!std::isfinite(y.item())) throw EvaluationError("gradcheck: function value is not finite");
    if (y.requires_grad()) analytic = backward(y, tape);
  }
  return gradcheck_against(f, inputs, analytic, opts);
}

GradcheckReport gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                          const GradcheckOptions& opts) {
  const Tensor inputs[] = {x};
  return gradcheck([&] { return f(x); }, inputs, opts);
}

}  // namespace lfsamba
