#include <doctest.h>

#include <fstream>
#include <functional>
#include <random>

#include "emonet/backbone.hpp"
#include "emonet/binary_io.hpp"
#include "emonet/error.hpp"
#include "support.hpp"

using namespace emonet;

namespace {

BackboneConfig small_config() {
  BackboneConfig c;
  c.d = 16;
  c.n_layers = 3;
  c.n_heads = 2;
  c.input_length = 400;
  c.seed = 5;
  return c;
}

std::vector<double> random_signal(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> x(n);
  for (auto& v : x) v = g(rng);
  return x;
}

std::size_t closed_form_count(const BackboneConfig& c) {
  std::size_t n = 0, in = 1;
  for (const auto& b : c.blocks()) {
    n += b.out_channels * in * b.kernel + b.out_channels;
    in = b.out_channels;
  }
  const std::size_t d = c.d, f = c.ffn_mult * c.d;
  const std::size_t layer = 4 * (d * d + d) + 2 * (2 * d) + (d * f + f) + (f * d + d);
  return n + c.n_layers * layer;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an emonet::Error");
  return ErrorCode::Usage;
}

}  // namespace

TEST_CASE("default geometry: 78 frames, 13 experts") {
  BackboneConfig c;
  CHECK(conv_output_length(2560, {16, 8, 4}) == 639);
  CHECK(conv_output_length(639, {32, 4, 2}) == 318);
  CHECK(conv_output_length(318, {32, 4, 2}) == 158);
  CHECK(conv_output_length(158, {64, 4, 2}) == 78);
  CHECK(c.frames() == 78);
  CHECK(c.experts() == 13);
  const auto blocks = c.blocks();
  REQUIRE(blocks.size() == 4);
  CHECK(blocks[0] == ConvSpec{16, 8, 4});
  CHECK(blocks[3] == ConvSpec{64, 4, 2});
}

TEST_CASE("parameter count equals the closed form and the tensor enumeration") {
  const BackboneConfig def;
  CHECK(closed_form_count(def) == 614416);
  const BackboneParams p = init_backbone(def);
  std::size_t enumerated = 0;
  p.for_each_tensor([&](std::span<const double> t) { enumerated += t.size(); });
  CHECK(p.parameter_count() == closed_form_count(def));
  CHECK(enumerated == closed_form_count(def));

  const BackboneConfig s = small_config();
  CHECK(init_backbone(s).parameter_count() == closed_form_count(s));
}

TEST_CASE("init_backbone is deterministic in the seed") {
  const BackboneConfig c = small_config();
  const BackboneParams a = init_backbone(c), b = init_backbone(c);
  CHECK(a.checksum() == b.checksum());
  std::vector<double> fa, fb;
  a.for_each_tensor([&](std::span<const double> t) { fa.insert(fa.end(), t.begin(), t.end()); });
  b.for_each_tensor([&](std::span<const double> t) { fb.insert(fb.end(), t.begin(), t.end()); });
  CHECK(fa == fb);
  BackboneConfig other = c;
  other.seed = 6;
  CHECK(init_backbone(other).checksum() != a.checksum());
}

TEST_CASE("invalid configurations are rejected") {
  BackboneConfig c;
  c.d = 65;
  CHECK(code_of([&] { init_backbone(c); }) == ErrorCode::InvalidConfig);
  c = {};
  c.conv_blocks = {{16, 8, 0}};
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::InvalidConfig);
  c = {};
  c.conv_blocks = {{16, 8, 4}, {32, 4, 2}};
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::InvalidConfig);
  c = {};
  c.input_length = 10;
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("forward_all shape, nesting and determinism") {
  const BackboneConfig c = small_config();
  const BackboneParams p = init_backbone(c);
  const auto x = random_signal(c.input_length, 1);
  const EmbeddingStack s = forward_all(p, x);
  CHECK(s.experts == c.n_layers + 1);
  CHECK(s.frames == c.frames());
  CHECK(s.dim == c.d);
  for (double v : s.data) REQUIRE(std::isfinite(v));

  CHECK(forward_all(p, x) == s);

  Matrix expert0 = conv_extract(p, x);
  CHECK(expert0 == s.expert_matrix(0));
  for (std::size_t i = 1; i < s.experts; ++i) {
    const Matrix re = encoder_layer_forward(p, i - 1, s.expert_matrix(i - 1));
    const Matrix cap = s.expert_matrix(i);
    for (std::size_t k = 0; k < re.size(); ++k) REQUIRE(std::abs(re.data[k] - cap.data[k]) <= 1e-9);
  }

  CHECK(code_of([&] { forward_all(p, random_signal(c.input_length + 1, 1)); }) ==
        ErrorCode::ShapeMismatch);
}

TEST_CASE("forward_all at default size") {
  const BackboneParams p = init_backbone(BackboneConfig{});
  const EmbeddingStack s = forward_all(p, random_signal(2560, 3));
  CHECK(s.experts == 13);
  CHECK(s.frames == 78);
  CHECK(s.dim == 64);
}

TEST_CASE("frame count follows the per-block law on random configs") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 25; ++trial) {
    BackboneConfig c;
    c.n_heads = 2;
    c.d = 4 * (1 + rng() % 3);
    c.n_layers = 1 + rng() % 2;
    c.ffn_mult = 2;
    const std::size_t blocks = 1 + rng() % 3;
    c.conv_blocks.clear();
    for (std::size_t b = 0; b < blocks; ++b) {
      c.conv_blocks.push_back({b + 1 == blocks ? c.d : 2 + rng() % 5, 1 + rng() % 6, 1 + rng() % 3});
    }
    c.input_length = 40 + rng() % 200;
    std::size_t t = c.input_length;
    bool ok = true;
    for (const auto& b : c.conv_blocks) {
      if (t < b.kernel) {
        ok = false;
        break;
      }
      t = (t - b.kernel) / b.stride + 1;
    }
    if (!ok) continue;
    c.seed = trial;
    const EmbeddingStack s = forward_all(init_backbone(c), random_signal(c.input_length, trial));
    CHECK(s.frames == t);
    CHECK(c.frames() == t);
  }
}

TEST_CASE("embedding stack binary round trip and damage detection") {
  test::TempDir dir("stack");
  std::mt19937_64 rng(8);
  const EmbeddingStack s = test::random_stack(3, 7, 5, rng);
  const auto path = dir.path() / "s.nmoe";
  save_stack(s, path);

  CHECK(std::filesystem::file_size(path) == 4 + 4 * 4 + 3 * 7 * 5 * 4);
  {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic();
    CHECK(r.u32() == kStackVersion);
    CHECK(r.u32() == 3);
    CHECK(r.u32() == 7);
    CHECK(r.u32() == 5);
    CHECK(r.remaining() == 3 * 7 * 5 * 4);
  }

  const EmbeddingStack back = load_stack(path);
  CHECK(back.experts == 3);
  CHECK(back.frames == 7);
  CHECK(back.dim == 5);
  for (std::size_t i = 0; i < s.data.size(); ++i) REQUIRE(test::rel_err(back.data[i], s.data[i], 1e-30) <= 1e-6);

  SUBCASE("truncated") {
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 6);
    CHECK(code_of([&] { load_stack(path); }) == ErrorCode::TruncatedFile);
  }
  SUBCASE("trailing bytes") {
    std::ofstream(path, std::ios::app | std::ios::binary) << "xxxx";
    CHECK(code_of([&] { load_stack(path); }) == ErrorCode::FormatError);
  }
  SUBCASE("bad magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XMOE", 4);
    f.close();
    CHECK(code_of([&] { load_stack(path); }) == ErrorCode::FormatError);
  }
  SUBCASE("bad version") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const char v[4] = {7, 0, 0, 0};
    f.write(v, 4);
    f.close();
    CHECK(code_of([&] { load_stack(path); }) == ErrorCode::FormatError);
  }
  SUBCASE("missing file") {
    CHECK(code_of([&] { load_stack(dir.path() / "none.nmoe"); }) == ErrorCode::IoError);
  }
}

TEST_CASE("backbone weights file round trip") {
  test::TempDir dir("weights");
  const BackboneParams p = init_backbone(small_config());
  save_backbone_weights(p, dir.path() / "w.bin");
  const BackboneParams q = load_backbone_weights(dir.path() / "w.bin");
  CHECK(q.config() == p.config());
  CHECK(q.checksum() == p.checksum());
  const auto x = random_signal(p.config().input_length, 4);
  CHECK(forward_all(q, x) == forward_all(p, x));
}

TEST_CASE("gelu reference values") {
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-14));
  CHECK(gelu(-1.0) == doctest::Approx(-0.15865525393145707).epsilon(1e-13));
}
