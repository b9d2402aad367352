#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <iterator>

#include "lfsamba/checkpoint.hpp"
#include "lfsamba/dataset.hpp"
#include "lfsamba/errors.hpp"
#include "lfsamba/image_io.hpp"
#include "test_support.hpp"

using namespace lfsamba;
using lfsamba::test::bitwise_equal;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lfsamba_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void put_bytes(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

ModelConfig small_config() {
  ModelConfig c;
  c.image_size = 32;
  c.dim = 16;
  c.state_size = 4;
  c.groups = 2;
  c.encoder_blocks = 1;
  c.heads = 2;
  c.num_slices = 2;
  return c;
}

}  // namespace

TEST_CASE("png round trip for gray and RGB") {
  const fs::path dir = scratch("png");
  Image8 g{5, 3, 1, {}};
  for (int i = 0; i < 15; ++i) g.pixels.push_back(static_cast<std::uint8_t>(i * 17));
  write_png(dir / "g.png", g);
  const Image8 g2 = read_png(dir / "g.png");
  CHECK(g2.width == 5);
  CHECK(g2.height == 3);
  CHECK(g2.channels == 1);
  CHECK(g2.pixels == g.pixels);

  const Tensor rgb = lfsamba::test::random_tensor({3, 4, 6}, 1, 0, 1);
  write_png(dir / "c.png", to_image8(rgb));
  const Tensor back = read_rgb(dir / "c.png");
  CHECK(back.shape() == Shape{3, 4, 6});
  CHECK(lfsamba::test::max_abs_diff(back, rgb) <= 0.5 / 255.0 + 1e-12);

  CHECK_THROWS_AS(read_png(dir / "missing.png"), NotFoundError);
  put_bytes(dir / "bad.png", "definitely not a png");
  CHECK_THROWS_AS(read_png(dir / "bad.png"), DecodeError);
}

TEST_CASE("synth_dataset: determinism, layout, loader round trip") {
  const fs::path a = scratch("synth_a"), b = scratch("synth_b");
  const auto ea = synth_dataset(42, 3, a);
  synth_dataset(42, 3, b);
  REQUIRE(ea.size() == 3);
  CHECK(ea[0].id == "s0000");
  CHECK(ea[2].k == 3);
  CHECK(file_bytes(a / "manifest.jsonl") == file_bytes(b / "manifest.jsonl"));
  for (const auto& e : ea) {
    for (const char* f : {"allfocus.png", "slice_00.png", "slice_01.png", "slice_02.png", "gt.png"}) {
      CHECK(file_bytes(a / e.id / f) == file_bytes(b / e.id / f));
    }
  }
  const auto manifest = read_manifest(a);
  REQUIRE(manifest.size() == 3);
  CHECK_FALSE(manifest[1].has_scribble);

  // PNG is lossless: the loader reproduces the generator's quantized values
  const FocalStack mem = synth_sample(42, 1);
  const FocalStack disk = load_sample(a / "s0001");
  CHECK(disk.id == "s0001");
  CHECK(disk.slices.size() == 3);
  CHECK(lfsamba::test::max_abs_diff(disk.all_focus, mem.all_focus) == 0.0);
  for (std::size_t k = 0; k < 3; ++k) CHECK(lfsamba::test::max_abs_diff(disk.slices[k], mem.slices[k]) == 0.0);
  CHECK(bitwise_equal(disk.gt, mem.gt));
  CHECK_FALSE(disk.scribble.defined());

  const fs::path z = scratch("synth_zero");
  CHECK(synth_dataset(1, 0, z).empty());
  CHECK(read_manifest(z).empty());
  CHECK(std::distance(fs::directory_iterator(z), fs::directory_iterator()) == 1);

  CHECK(load_dataset(a).size() == 3);
}

TEST_CASE("synth: slices differ by focus, all-focus is the sharpest") {
  const FocalStack s = synth_sample(3, 0);
  CHECK_FALSE(bitwise_equal(s.slices[0], s.slices[2]));
  auto energy = [](const Tensor& t) {
    Real e = 0;
    const std::size_t W = t.dim(2), plane = t.dim(1) * W;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i + 1 < plane; ++i)
        if ((i + 1) % W) e += std::abs(t[c * plane + i + 1] - t[c * plane + i]);
    return e;
  };
  for (const auto& sl : s.slices) CHECK(energy(s.all_focus) > energy(sl));
}

TEST_CASE("synth: every ground truth has at least 1% foreground (100 seeds)") {
  Real worst = 1.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const FocalStack s = synth_sample(seed, seed % 7);
    Real fg = 0;
    for (Real v : lfsamba::test::values(s.gt)) fg += v;
    worst = std::min(worst, fg / static_cast<Real>(s.gt.numel()));
  }
  CAPTURE(worst);
  CHECK(worst >= 0.01);
}

TEST_CASE("load_sample: contiguity, threshold, scribble decoding, errors") {
  const fs::path root = scratch("load");
  const FocalStack s = synth_sample(5, 0, SynthConfig{.image_size = 16, .num_slices = 3});
  write_sample(root / "x", s);

  fs::copy(root / "x", root / "gap", fs::copy_options::recursive);
  fs::remove(root / "gap" / "slice_01.png");
  CHECK_THROWS_AS(load_sample(root / "gap"), FormatError);

  fs::copy(root / "x", root / "noslice", fs::copy_options::recursive);
  for (const char* f : {"slice_00.png", "slice_01.png", "slice_02.png"}) fs::remove(root / "noslice" / f);
  CHECK_THROWS_AS(load_sample(root / "noslice"), FormatError);

  fs::copy(root / "x", root / "noaf", fs::copy_options::recursive);
  fs::remove(root / "noaf" / "allfocus.png");
  CHECK_THROWS_AS(load_sample(root / "noaf"), NotFoundError);
  CHECK_THROWS_AS(load_sample(root / "nowhere"), NotFoundError);

  // gray 200 binarizes to 1, 100 to 0
  std::vector<std::uint8_t> gpx(256, 100);
  gpx[0] = 200;
  gpx[1] = 128;
  write_png(root / "x" / "gt.png", Image8{16, 16, 1, gpx});
  const FocalStack g = load_sample(root / "x");
  CHECK(g.gt[0] == 1.0);
  CHECK(g.gt[1] == 1.0);
  CHECK(g.gt[2] == 0.0);

  std::vector<std::uint8_t> spx(256, 0);
  spx[3] = 255;
  spx[4] = 128;
  write_png(root / "x" / "scribble.png", Image8{16, 16, 1, spx});
  const FocalStack w = load_sample(root / "x");
  CHECK(w.scribble[3] == static_cast<Real>(kForeground));
  CHECK(w.scribble[4] == static_cast<Real>(kBackground));
  CHECK(w.scribble[5] == static_cast<Real>(kUnlabeled));
  spx[6] = 77;
  write_png(root / "x" / "scribble.png", Image8{16, 16, 1, spx});
  CHECK_THROWS_AS(load_sample(root / "x"), DecodeError);
  fs::remove(root / "x" / "scribble.png");

  write_png(root / "x" / "slice_02.png", Image8{8, 16, 3, std::vector<std::uint8_t>(8 * 16 * 3, 0)});
  CHECK_THROWS_AS(load_sample(root / "x"), DimensionError);
}

TEST_CASE("synth_scribbles: containment, sparsity, determinism, errors") {
  Real worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const FocalStack s = synth_sample(seed + 300, 0);
    const Tensor sc = synth_scribbles(s.gt, seed);
    CHECK(bitwise_equal(sc, synth_scribbles(s.gt, seed)));
    std::size_t fg = 0, bg = 0;
    for (std::size_t i = 0; i < sc.numel(); ++i) {
      if (sc[i] == static_cast<Real>(kForeground)) {
        ++fg;
        CHECK(s.gt[i] == 1.0);
      } else if (sc[i] == static_cast<Real>(kBackground)) {
        ++bg;
        CHECK(s.gt[i] == 0.0);
      } else {
        CHECK(sc[i] == static_cast<Real>(kUnlabeled));
      }
    }
    CHECK(fg >= 1);
    CHECK(bg >= 1);
    worst = std::max(worst, static_cast<Real>(fg + bg) / static_cast<Real>(sc.numel()));
  }
  CAPTURE(worst);
  CHECK(worst <= 0.05);

  // a one-pixel foreground vanishes under erosion and falls back to the raw region
  std::vector<Real> tiny(100, 0.0);
  tiny[55] = 1.0;
  const Tensor t = synth_scribbles(Tensor::from({10, 10}, tiny), 1);
  CHECK(t[55] == static_cast<Real>(kForeground));
  CHECK_THROWS_AS(synth_scribbles(Tensor::zeros({10, 10}), 1), ContractError);
  CHECK_THROWS_AS(synth_scribbles(Tensor::full({10, 10}, 1.0), 1), ContractError);
}

TEST_CASE("scribble_dataset updates files and manifest") {
  const fs::path root = scratch("scribble");
  synth_dataset(9, 2, root, SynthConfig{.image_size = 32});
  scribble_dataset(root, 4);
  for (const auto& e : read_manifest(root)) {
    CHECK(e.has_scribble);
    CHECK(load_sample(root / e.id).scribble.defined());
  }
}

TEST_CASE("checkpoint: bitwise round trip and identical forward outputs") {
  const fs::path dir = scratch("ckpt");
  const ModelConfig c = small_config();
  ModelParams p = ModelParams::init(c, 3);
  Tensor& w_up = p.adapters[1].blocks[0].w_up;
  assign_rounded(w_up, lfsamba::test::random_values(w_up.numel(), 8, -0.1, 0.1));
  save_checkpoint(p, dir / "a.lfsb", 17, 99);

  const Checkpoint raw = read_checkpoint(dir / "a.lfsb");
  CHECK(raw.step == 17);
  CHECK(raw.seed == 99);
  CHECK(raw.tensors.count("adapter.1.block.0.w_down") == 1);
  CHECK(raw.tensors.count("encoder.patch_w") == 1);
  const ModelConfig g = geometry_of(raw);
  CHECK(g.dim == c.dim);
  CHECK(g.num_slices == c.num_slices);
  CHECK(g.encoder_seed == c.encoder_seed);

  ModelParams q = load_checkpoint(dir / "a.lfsb");
  std::vector<Tensor> ta, tb;
  p.visit_all([&](const std::string&, Tensor& t) { ta.push_back(t); });
  q.visit_all([&](const std::string&, Tensor& t) { tb.push_back(t); });
  REQUIRE(ta.size() == tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) CHECK(bitwise_equal(ta[i], tb[i]));

  const FocalStack s = synth_sample(1, 0, SynthConfig{.image_size = 32, .num_slices = 2});
  CHECK(bitwise_equal(forward(s, p), forward(s, q)));

  save_checkpoint(q, dir / "b.lfsb", 17, 99);
  CHECK(file_bytes(dir / "a.lfsb") == file_bytes(dir / "b.lfsb"));
}

TEST_CASE("checkpoint: format errors") {
  const fs::path dir = scratch("ckpt_err");
  const ModelConfig c = small_config();
  ModelParams p = ModelParams::init(c, 3);
  save_checkpoint(p, dir / "good.lfsb");
  const std::string good = file_bytes(dir / "good.lfsb");

  std::string magic = good;
  magic.replace(0, 4, "XXXX");
  put_bytes(dir / "magic.lfsb", magic);
  CHECK_THROWS_AS(read_checkpoint(dir / "magic.lfsb"), FormatError);

  std::string version = good;
  version[4] = static_cast<char>(version[4] + 1);
  put_bytes(dir / "version.lfsb", version);
  CHECK_THROWS_WITH_AS(read_checkpoint(dir / "version.lfsb"), doctest::Contains("version"), FormatError);

  put_bytes(dir / "trunc.lfsb", good.substr(0, good.size() - 3));
  CHECK_THROWS_WITH_AS(read_checkpoint(dir / "trunc.lfsb"), doctest::Contains("truncated"), FormatError);
  put_bytes(dir / "short.lfsb", good.substr(0, 10));
  CHECK_THROWS_AS(read_checkpoint(dir / "short.lfsb"), FormatError);
  CHECK_THROWS_AS(read_checkpoint(dir / "absent.lfsb"), NotFoundError);

  Checkpoint ck = read_checkpoint(dir / "good.lfsb");
  ck.tensors.erase("decoder.head_b");
  CHECK_THROWS_WITH_AS(load_into(p, ck), doctest::Contains("decoder.head_b"), FormatError);

  ModelConfig wider = c;
  wider.dim = 32;
  ModelParams w = ModelParams::init(wider, 0);
  CHECK_THROWS_WITH_AS(load_into(w, read_checkpoint(dir / "good.lfsb")), doctest::Contains("encoder.patch_w"),
                       DimensionError);
}
