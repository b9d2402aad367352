#include "lfsamba/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lfsamba/errors.hpp"

namespace lfsamba {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'L', 'F', 'S', 'B'};
constexpr const char* kGeometryName = "meta.geometry";

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> buf, std::string source) : buf_(std::move(buf)), source_(std::move(source)) {}

  template <typename T>
  T get(const char* what) {
    T v;
    bytes(&v, sizeof(T), what);
    return v;
  }
  void bytes(void* out, std::size_t n, const char* what) {
    if (buf_.size() - pos_ < n) {
      throw FormatError("checkpoint truncated while reading " + std::string(what) + ": " + source_);
    }
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  std::vector<char> buf_;
  std::string source_;
  std::size_t pos_ = 0;
};

// Geometry values are small integers, exact in float32; the 64-bit encoder
// seed is split into 16-bit pieces to stay exact.
std::vector<float> encode_geometry(const ModelConfig& c) {
  std::vector<float> g = {static_cast<float>(c.image_size),    static_cast<float>(c.patch),
                          static_cast<float>(c.dim),           static_cast<float>(c.state_size),
                          static_cast<float>(c.groups),        static_cast<float>(c.encoder_blocks),
                          static_cast<float>(c.heads),         static_cast<float>(c.mlp_ratio),
                          static_cast<float>(c.adapter_ratio), static_cast<float>(c.num_slices),
                          c.fusion == FusionKind::concat ? 1.0f : 0.0f};
  for (int i = 0; i < 4; ++i) g.push_back(static_cast<float>((c.encoder_seed >> (16 * i)) & 0xFFFFu));
  return g;
}

}  // namespace

Checkpoint make_checkpoint(ModelParams& params, std::uint64_t step, std::uint64_t seed) {
  Checkpoint ck;
  ck.step = step;
  ck.seed = seed;
  const auto geom = encode_geometry(params.config);
  ck.order.push_back(kGeometryName);
  ck.tensors[kGeometryName] = {Shape{geom.size()}, geom};
  params.visit_all([&](const std::string& name, Tensor& t) {
    StoredTensor s;
    s.shape = t.shape();
    s.values.reserve(t.numel());
    for (Real v : t.data()) s.values.push_back(static_cast<float>(v));
    if (!ck.tensors.emplace(name, std::move(s)).second) throw ContractError("duplicate tensor name: " + name);
    ck.order.push_back(name);
  });
  return ck;
}

void write_checkpoint(const fs::path& path, const Checkpoint& ck) {
  Writer w;
  w.bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(ck.step);
  w.put<std::uint64_t>(ck.seed);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.order.size()));
  for (const auto& name : ck.order) {
    const StoredTensor& t = ck.tensors.at(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.bytes(t.values.data(), t.values.size() * sizeof(float));
  }
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out.flush()) throw IoError("failed writing checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("checkpoint not found: " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(buf), path.string());

  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic): " + path.string());
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + "): " + path.string());
  }
  Checkpoint ck;
  ck.step = r.get<std::uint64_t>("step");
  ck.seed = r.get<std::uint64_t>("seed");
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>("name length");
    std::string name(len, '\0');
    r.bytes(name.data(), len, "tensor name");
    StoredTensor t;
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 8) throw FormatError("implausible rank " + std::to_string(rank) + " for " + name);
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      t.shape.push_back(r.get<std::uint32_t>("dims"));
      n *= t.shape.back();
    }
    if (n > (std::size_t{1} << 31)) throw FormatError("implausible size for " + name);
    t.values.resize(n);
    r.bytes(t.values.data(), n * sizeof(float), "tensor values");
    if (!ck.tensors.emplace(name, std::move(t)).second) throw FormatError("duplicate tensor " + name);
    ck.order.push_back(name);
  }
  if (!r.done()) throw FormatError("trailing bytes after tensor table: " + path.string());
  return ck;
}

void save_checkpoint(ModelParams& params, const fs::path& path, std::uint64_t step, std::uint64_t seed) {
  write_checkpoint(path, make_checkpoint(params, step, seed));
}

ModelConfig geometry_of(const Checkpoint& ck) {
  const auto it = ck.tensors.find(kGeometryName);
  if (it == ck.tensors.end()) throw FormatError(std::string("missing tensor: ") + kGeometryName);
  const auto& g = it->second.values;
  if (g.size() != 15) throw FormatError(std::string("malformed tensor: ") + kGeometryName);
  auto u = [&](std::size_t i) { return static_cast<std::size_t>(g[i]); };
  ModelConfig c;
  c.image_size = u(0);
  c.patch = u(1);
  c.dim = u(2);
  c.state_size = u(3);
  c.groups = u(4);
  c.encoder_blocks = u(5);
  c.heads = u(6);
  c.mlp_ratio = u(7);
  c.adapter_ratio = u(8);
  c.num_slices = u(9);
  c.fusion = g[10] != 0.0f ? FusionKind::concat : FusionKind::mamba;
  c.encoder_seed = 0;
  for (int i = 0; i < 4; ++i) c.encoder_seed |= static_cast<std::uint64_t>(g[11 + i]) << (16 * i);
  return c;
}

void load_into(ModelParams& params, const Checkpoint& ck) {
  params.visit_all([&](const std::string& name, Tensor& t) {
    const auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) throw FormatError("missing tensor in checkpoint: " + name);
    if (it->second.shape != t.shape()) {
      throw DimensionError("shape mismatch for tensor " + name + ": checkpoint " + shape_str(it->second.shape) +
                           ", model " + shape_str(t.shape()));
    }
    const auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Real>(it->second.values[i]);
  });
}

ModelParams load_checkpoint(const fs::path& path) {
  const Checkpoint ck = read_checkpoint(path);
  const ModelConfig config = geometry_of(ck);
  config.validate();
  ModelParams params = ModelParams::init(config, 0);
  load_into(params, ck);
  return params;
}

}  // namespace lfsamba
