#include "lfsamba/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>

#include "json.hpp"

#include "lfsamba/errors.hpp"
#include "lfsamba/image_io.hpp"
#include "lfsamba/params.hpp"

namespace lfsamba {

namespace fs = std::filesystem;

namespace {

std::string slice_name(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "slice_%02zu.png", k);
  return buf;
}

void require_size(const Tensor& t, std::size_t H, std::size_t W, const fs::path& path) {
  const std::size_t h = t.rank() == 3 ? t.dim(1) : t.dim(0), w = t.rank() == 3 ? t.dim(2) : t.dim(1);
  if (h != H || w != W) {
    throw DimensionError("image size mismatch: " + path.string() + " is " + std::to_string(h) + "x" +
                         std::to_string(w) + ", expected " + std::to_string(H) + "x" + std::to_string(W));
  }
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

FocalStack load_sample(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw NotFoundError("sample directory not found: " + dir.string());
  FocalStack s;
  s.id = dir.filename().string();
  const fs::path af = dir / "allfocus.png";
  if (!fs::exists(af)) throw NotFoundError("missing file: " + af.string());
  s.all_focus = read_rgb(af);
  const std::size_t H = s.all_focus.dim(1), W = s.all_focus.dim(2);

  std::vector<std::size_t> present;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    unsigned idx = 0;
    char tail[8] = {};
    if (name.size() == 12 && std::sscanf(name.c_str(), "slice_%2u.%3s", &idx, tail) == 2 && std::string(tail) == "png") {
      present.push_back(idx);
    }
  }
  std::sort(present.begin(), present.end());
  if (present.empty()) throw FormatError("sample has no focal slices: " + dir.string());
  for (std::size_t k = 0; k < present.size(); ++k) {
    if (present[k] != k) throw FormatError("focal slices are not contiguous: missing " + (dir / slice_name(k)).string());
  }
  for (std::size_t k = 0; k < present.size(); ++k) {
    const fs::path p = dir / slice_name(k);
    s.slices.push_back(read_rgb(p));
    require_size(s.slices.back(), H, W, p);
  }

  const fs::path gt = dir / "gt.png";
  if (fs::exists(gt)) {
    const Tensor raw = read_gray_raw(gt);
    require_size(raw, H, W, gt);
    std::vector<Real> v(raw.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = raw[i] >= 128.0 ? 1.0 : 0.0;
    s.gt = Tensor::from({H, W}, std::move(v));
  }
  const fs::path sc = dir / "scribble.png";
  if (fs::exists(sc)) {
    const Tensor raw = read_gray_raw(sc);
    require_size(raw, H, W, sc);
    std::vector<Real> v(raw.numel());
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (raw[i] == 0.0) {
        v[i] = kUnlabeled;
      } else if (raw[i] == 128.0) {
        v[i] = kBackground;
      } else if (raw[i] == 255.0) {
        v[i] = kForeground;
      } else {
        throw DecodeError("scribble value " + std::to_string(raw[i]) + " not in {0,128,255}: " + sc.string());
      }
    }
    s.scribble = Tensor::from({H, W}, std::move(v));
  }
  return s;
}

std::vector<ManifestEntry> read_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.jsonl";
  std::ifstream in(path);
  if (!in) throw NotFoundError("manifest not found: " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("id").get<std::string>(), j.at("k").get<std::size_t>(), j.value("has_scribble", false)});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_manifest(const fs::path& root, const std::vector<ManifestEntry>& entries) {
  fs::create_directories(root);
  const fs::path path = root / "manifest.jsonl";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  for (const auto& e : entries) {
    out << nlohmann::json{{"id", e.id}, {"k", e.k}, {"has_scribble", e.has_scribble}}.dump() << '\n';
  }
  if (!out.flush()) throw IoError("failed writing manifest: " + path.string());
}

std::vector<FocalStack> load_dataset(const fs::path& root) {
  std::vector<FocalStack> out;
  for (const auto& e : read_manifest(root)) {
    out.push_back(load_sample(root / e.id));
    if (out.back().slices.size() != e.k) {
      throw FormatError("manifest lists k=" + std::to_string(e.k) + " for " + e.id + " but " +
                        std::to_string(out.back().slices.size()) + " slices exist");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic focal stacks

namespace {

struct Shape2D {
  int kind;  // 0 ellipse, 1 rectangle
  Real cy, cx, ry, rx, angle;
  Real color[3];
  Real depth;
};

bool inside(const Shape2D& s, Real y, Real x) {
  const Real dy = y - s.cy, dx = x - s.cx;
  const Real c = std::cos(s.angle), sn = std::sin(s.angle);
  const Real u = (c * dx + sn * dy) / s.rx, v = (-sn * dx + c * dy) / s.ry;
  return s.kind == 0 ? u * u + v * v <= 1.0 : std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
}

// Separable Gaussian blur of one plane with clamped borders.
std::vector<Real> blur(const std::vector<Real>& src, std::size_t H, std::size_t W, Real sigma) {
  if (sigma < 0.3) return src;
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<Real> k(2 * r + 1);
  Real sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;
  std::vector<Real> tmp(src.size()), out(src.size());
  const int h = static_cast<int>(H), w = static_cast<int>(W);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      Real acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * src[y * w + std::clamp(x + i, 0, w - 1)];
      tmp[y * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      Real acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[std::clamp(y + i, 0, h - 1) * w + x];
      out[y * w + x] = acc;
    }
  return out;
}

Tensor quantize(const std::vector<Real>& planes, std::size_t H, std::size_t W) {
  std::vector<Real> v(planes.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::lround(std::clamp(planes[i], 0.0, 1.0) * 255.0) / 255.0;
  return Tensor::from({3, H, W}, std::move(v));
}

}  // namespace

FocalStack synth_sample(std::uint64_t seed, std::size_t index, const SynthConfig& cfg) {
  if (cfg.image_size < 16 || cfg.num_slices == 0 || cfg.min_shapes < 1 || cfg.max_shapes < cfg.min_shapes) {
    throw ConfigError("synth: invalid generator configuration");
  }
  Rng rng(mix_seed(seed, index));
  const std::size_t H = cfg.image_size, W = cfg.image_size, plane = H * W;
  const Real S = static_cast<Real>(cfg.image_size);

  // textured background at the far plane
  std::vector<Real> bg(3 * plane);
  Real base[3], tint[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = rng.uniform(0.2, 0.8);
    tint[c] = rng.uniform(-0.25, 0.25);
  }
  const Real fx = rng.uniform(0.15, 0.6), fy = rng.uniform(0.15, 0.6), phase = rng.uniform(0.0, 6.28);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const Real t = std::sin(fx * x + phase) * std::sin(fy * y);
      const Real noise = rng.uniform(-0.06, 0.06);
      for (int c = 0; c < 3; ++c) bg[c * plane + y * W + x] = base[c] + tint[c] * t + noise;
    }

  const std::size_t n_shapes = cfg.min_shapes + rng.index(cfg.max_shapes - cfg.min_shapes + 1);
  std::vector<Shape2D> shapes(n_shapes);
  for (auto& s : shapes) {
    s.kind = static_cast<int>(rng.index(2));
    s.ry = rng.uniform(0.08, 0.18) * S;
    s.rx = rng.uniform(0.08, 0.18) * S;
    s.cy = rng.uniform(0.15, 0.85) * S;
    s.cx = rng.uniform(0.15, 0.85) * S;
    s.angle = rng.uniform(0.0, std::numbers::pi);
    // colors pushed away from the background mean so shapes stay visible
    for (int c = 0; c < 3; ++c) {
      const Real v = rng.uniform(0.0, 1.0);
      s.color[c] = std::abs(v - base[c]) < 0.25 ? std::fmod(v + 0.5, 1.0) : v;
    }
  }
  // the salient shape is the largest; enlarge it and bring it to the front
  std::size_t salient = 0;
  for (std::size_t i = 1; i < n_shapes; ++i)
    if (shapes[i].rx * shapes[i].ry > shapes[salient].rx * shapes[salient].ry) salient = i;
  shapes[salient].rx = std::max(shapes[salient].rx, 0.16 * S);
  shapes[salient].ry = std::max(shapes[salient].ry, 0.16 * S);
  shapes[salient].cy = rng.uniform(0.3, 0.7) * S;
  shapes[salient].cx = rng.uniform(0.3, 0.7) * S;
  // distinct depth layers in [0, 0.8]; the salient shape takes the nearest
  std::vector<Real> depths(n_shapes);
  for (std::size_t i = 0; i < n_shapes; ++i) depths[i] = 0.8 * static_cast<Real>(i) / static_cast<Real>(n_shapes);
  std::size_t next = 1;
  for (std::size_t i = 0; i < n_shapes; ++i) shapes[i].depth = i == salient ? depths[0] : depths[next++];
  std::vector<std::size_t> order(n_shapes);
  for (std::size_t i = 0; i < n_shapes; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return shapes[a].depth > shapes[b].depth; });

  std::vector<std::vector<Real>> masks(n_shapes, std::vector<Real>(plane, 0.0));
  for (std::size_t i = 0; i < n_shapes; ++i)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) masks[i][y * W + x] = inside(shapes[i], y + 0.5, x + 0.5) ? 1.0 : 0.0;

  auto composite = [&](Real focus, bool sharp) {
    std::vector<Real> img(3 * plane);
    const Real bg_sigma = sharp ? 0.0 : cfg.blur_per_depth * std::abs(1.0 - focus);
    for (int c = 0; c < 3; ++c) {
      const std::vector<Real> p(bg.begin() + c * plane, bg.begin() + (c + 1) * plane);
      const auto b = blur(p, H, W, bg_sigma);
      std::copy(b.begin(), b.end(), img.begin() + c * plane);
    }
    for (std::size_t i : order) {
      const Real sigma = sharp ? 0.0 : cfg.blur_per_depth * std::abs(shapes[i].depth - focus);
      const auto alpha = blur(masks[i], H, W, sigma);
      for (int c = 0; c < 3; ++c)
        for (std::size_t q = 0; q < plane; ++q)
          img[c * plane + q] = alpha[q] * shapes[i].color[c] + (1.0 - alpha[q]) * img[c * plane + q];
    }
    return quantize(img, H, W);
  };

  FocalStack s;
  char id[32];
  std::snprintf(id, sizeof id, "s%04zu", index);
  s.id = id;
  s.all_focus = composite(0.0, true);
  for (std::size_t k = 0; k < cfg.num_slices; ++k) {
    const Real focus = cfg.num_slices > 1 ? static_cast<Real>(k) / static_cast<Real>(cfg.num_slices - 1) : 0.5;
    s.slices.push_back(composite(focus, false));
  }
  s.gt = Tensor::from({H, W}, masks[salient]);
  return s;
}

void write_sample(const fs::path& dir, const FocalStack& s) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_png(dir / "allfocus.png", to_image8(s.all_focus));
  for (std::size_t k = 0; k < s.slices.size(); ++k) write_png(dir / slice_name(k), to_image8(s.slices[k]));
  if (s.gt.defined()) write_png(dir / "gt.png", to_image8(s.gt));
  if (s.scribble.defined()) {
    Image8 img;
    img.height = s.scribble.dim(0);
    img.width = s.scribble.dim(1);
    img.channels = 1;
    img.pixels.resize(s.scribble.numel());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      const int v = static_cast<int>(s.scribble[i]);
      img.pixels[i] = v == kForeground ? 255 : (v == kBackground ? 128 : 0);
    }
    write_png(dir / "scribble.png", img);
  }
}

std::vector<ManifestEntry> synth_dataset(std::uint64_t seed, std::size_t n, const fs::path& root,
                                         const SynthConfig& cfg) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create dataset root " + root.string() + ": " + ec.message());
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < n; ++i) {
    const FocalStack s = synth_sample(seed, i, cfg);
    write_sample(root / s.id, s);
    entries.push_back({s.id, s.slices.size(), false});
  }
  write_manifest(root, entries);
  return entries;
}

// ---------------------------------------------------------------------------
// Scribbles

namespace {

std::vector<char> erode(const std::vector<char>& mask, std::size_t H, std::size_t W, int radius) {
  std::vector<char> out(mask.size(), 0);
  const int h = static_cast<int>(H), w = static_cast<int>(W);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool keep = mask[y * w + x];
      for (int dy = -radius; keep && dy <= radius; ++dy)
        for (int dx = -radius; keep && dx <= radius; ++dx) {
          const int yy = y + dy, xx = x + dx;
          keep = yy >= 0 && yy < h && xx >= 0 && xx < w && mask[yy * w + xx];
        }
      out[y * w + x] = keep;
    }
  return out;
}

void draw_stroke(const std::vector<char>& region, std::size_t H, std::size_t W, Rng& rng, std::vector<Real>& out,
                 Real label) {
  std::vector<std::size_t> cells;
  std::size_t y0 = H, y1 = 0, x0 = W, x1 = 0;
  for (std::size_t i = 0; i < region.size(); ++i) {
    if (!region[i]) continue;
    cells.push_back(i);
    y0 = std::min(y0, i / W);
    y1 = std::max(y1, i / W);
    x0 = std::min(x0, i % W);
    x1 = std::max(x1, i % W);
  }
  const Real diag = std::hypot(static_cast<Real>(y1 - y0 + 1), static_cast<Real>(x1 - x0 + 1));
  const auto length = std::max<std::size_t>(3, static_cast<std::size_t>(std::lround(0.2 * diag)));
  static constexpr int kDy[8] = {-1, -1, -1, 0, 0, 1, 1, 1};
  static constexpr int kDx[8] = {-1, 0, 1, -1, 1, -1, 0, 1};
  std::size_t cur = cells[rng.index(cells.size())];
  std::size_t dir = rng.index(8);
  out[cur] = label;
  for (std::size_t step = 1; step < length; ++step) {
    // keep heading with probability 0.7, otherwise turn; stop when boxed in
    if (rng.uniform(0.0, 1.0) >= 0.7) dir = rng.index(8);
    bool moved = false;
    for (std::size_t attempt = 0; attempt < 8 && !moved; ++attempt) {
      const std::size_t d = (dir + attempt) % 8;
      const long y = static_cast<long>(cur / W) + kDy[d], x = static_cast<long>(cur % W) + kDx[d];
      if (y < 0 || x < 0 || y >= static_cast<long>(H) || x >= static_cast<long>(W)) continue;
      const std::size_t nxt = static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x);
      if (!region[nxt]) continue;
      cur = nxt;
      dir = d;
      moved = true;
    }
    if (!moved) break;
    out[cur] = label;
  }
}

}  // namespace

Tensor synth_scribbles(const Tensor& gt, std::uint64_t seed) {
  if (gt.rank() != 2) throw DimensionError("synth_scribbles: gt must be [H,W]");
  const std::size_t H = gt.dim(0), W = gt.dim(1);
  std::vector<char> fg(gt.numel()), bg(gt.numel());
  for (std::size_t i = 0; i < gt.numel(); ++i) {
    fg[i] = gt[i] >= 0.5;
    bg[i] = !fg[i];
  }
  const bool has_fg = std::find(fg.begin(), fg.end(), 1) != fg.end();
  const bool has_bg = std::find(bg.begin(), bg.end(), 1) != bg.end();
  if (!has_fg || !has_bg) throw ContractError("synth_scribbles: ground truth must contain both classes");
  auto shrink = [&](const std::vector<char>& m) {
    auto e = erode(m, H, W, 3);
    return std::find(e.begin(), e.end(), 1) != e.end() ? e : m;
  };
  Rng rng(seed);
  std::vector<Real> out(gt.numel(), static_cast<Real>(kUnlabeled));
  draw_stroke(shrink(fg), H, W, rng, out, kForeground);
  draw_stroke(shrink(bg), H, W, rng, out, kBackground);
  return Tensor::from({H, W}, std::move(out));
}

void scribble_dataset(const fs::path& root, std::uint64_t seed) {
  auto entries = read_manifest(root);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    FocalStack s = load_sample(root / entries[i].id);
    if (!s.gt.defined()) throw NotFoundError("missing ground truth for scribbles: " + (root / entries[i].id).string());
    s.scribble = synth_scribbles(s.gt, mix_seed(seed, i));
    Image8 img;
    img.height = s.scribble.dim(0);
    img.width = s.scribble.dim(1);
    img.channels = 1;
    img.pixels.resize(s.scribble.numel());
    for (std::size_t q = 0; q < img.pixels.size(); ++q) {
      const int v = static_cast<int>(s.scribble[q]);
      img.pixels[q] = v == kForeground ? 255 : (v == kBackground ? 128 : 0);
    }
    write_png(root / entries[i].id / "scribble.png", img);
    entries[i].has_scribble = true;
  }
  write_manifest(root, entries);
}

}  // namespace lfsamba
