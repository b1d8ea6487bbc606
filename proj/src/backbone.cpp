#include "emonet/backbone.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <random>

#include "emonet/binary_io.hpp"
#include "emonet/error.hpp"
#include "emonet/seed.hpp"

namespace emonet {

namespace {

constexpr double kLayerNormEps = 1e-5;

void layer_norm_rows(Matrix& x, const LayerNormParams& ln) {
  const double n = static_cast<double>(x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    auto row = x.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    const double inv = 1.0 / std::sqrt(var / n + kLayerNormEps);
    for (std::size_t j = 0; j < row.size(); ++j) {
      row[j] = (row[j] - mean) * inv * ln.scale[j] + ln.shift[j];
    }
  }
}

void add_bias_rows(Matrix& x, const std::vector<double>& bias) {
  for (std::size_t r = 0; r < x.rows; ++r) {
    auto row = x.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[j];
  }
}

Matrix linear(const Matrix& x, const Matrix& w, const std::vector<double>& b) {
  Matrix y = matmul(x, w);
  add_bias_rows(y, b);
  return y;
}

Matrix sinusoidal_table(std::size_t frames, std::size_t d) {
  Matrix pe(frames, d);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t j = 0; j < d; ++j) {
      const double rate = std::pow(10000.0, -static_cast<double>(j - j % 2) / static_cast<double>(d));
      const double angle = static_cast<double>(t) * rate;
      pe(t, j) = j % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

void write_config(ByteWriter& w, const BackboneConfig& cfg) {
  w.tag("BBCF");
  w.u32(static_cast<std::uint32_t>(cfg.d));
  w.u32(static_cast<std::uint32_t>(cfg.n_layers));
  w.u32(static_cast<std::uint32_t>(cfg.n_heads));
  w.u32(static_cast<std::uint32_t>(cfg.ffn_mult));
  w.u32(static_cast<std::uint32_t>(cfg.input_length));
  const auto blocks = cfg.blocks();
  w.u32(static_cast<std::uint32_t>(blocks.size()));
  for (const auto& b : blocks) {
    w.u32(static_cast<std::uint32_t>(b.out_channels));
    w.u32(static_cast<std::uint32_t>(b.kernel));
    w.u32(static_cast<std::uint32_t>(b.stride));
  }
  w.u64(cfg.seed);
}

BackboneConfig read_config(ByteReader& r) {
  if (r.tag() != "BBCF") fail(ErrorCode::FormatError, r.source() + ": missing BBCF section");
  BackboneConfig cfg;
  cfg.d = r.u32();
  cfg.n_layers = r.u32();
  cfg.n_heads = r.u32();
  cfg.ffn_mult = r.u32();
  cfg.input_length = r.u32();
  const std::uint32_t n_blocks = r.u32();
  if (n_blocks > 64) fail(ErrorCode::FormatError, r.source() + ": implausible conv block count");
  for (std::uint32_t i = 0; i < n_blocks; ++i) {
    ConvSpec s;
    s.out_channels = r.u32();
    s.kernel = r.u32();
    s.stride = r.u32();
    cfg.conv_blocks.push_back(s);
  }
  cfg.seed = r.u64();
  return cfg;
}

}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

std::vector<ConvSpec> BackboneConfig::default_conv_blocks(std::size_t d) {
  return {{d / 4, 8, 4}, {d / 2, 4, 2}, {d / 2, 4, 2}, {d, 4, 2}};
}

std::vector<ConvSpec> BackboneConfig::blocks() const {
  return conv_blocks.empty() ? default_conv_blocks(d) : conv_blocks;
}

std::size_t conv_output_length(std::size_t input_length, const ConvSpec& spec) {
  if (input_length < spec.kernel) return 0;
  return (input_length - spec.kernel) / spec.stride + 1;
}

void BackboneConfig::validate() const {
  require(d >= 1 && n_heads >= 1, ErrorCode::InvalidConfig, "d and n_heads must be positive");
  require(d % n_heads == 0, ErrorCode::InvalidConfig,
          "d=" + std::to_string(d) + " is not divisible by n_heads=" + std::to_string(n_heads));
  require(ffn_mult >= 1, ErrorCode::InvalidConfig, "ffn_mult must be >= 1");
  const auto bl = blocks();
  require(!bl.empty(), ErrorCode::InvalidConfig, "at least one conv block is required");
  for (const auto& b : bl) {
    require(b.stride >= 1 && b.kernel >= 1 && b.out_channels >= 1, ErrorCode::InvalidConfig,
            "conv blocks need positive channels, kernel and stride");
  }
  require(bl.back().out_channels == d, ErrorCode::InvalidConfig,
          "last conv block must output exactly d channels");
  require(frames() >= 1, ErrorCode::InvalidConfig,
          "input_length " + std::to_string(input_length) + " too short for the conv stack");
}

std::size_t BackboneConfig::frames() const {
  std::size_t t = input_length;
  for (const auto& b : blocks()) t = conv_output_length(t, b);
  return t;
}

BackboneParams::BackboneParams(BackboneConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  cfg_.conv_blocks = cfg_.blocks();
  std::size_t in = 1;
  for (const auto& s : cfg_.conv_blocks) {
    ConvBlockParams b;
    b.in_channels = in;
    b.out_channels = s.out_channels;
    b.kernel = s.kernel;
    b.stride = s.stride;
    b.weight.assign(s.out_channels * in * s.kernel, 0.0);
    b.bias.assign(s.out_channels, 0.0);
    conv_.push_back(std::move(b));
    in = s.out_channels;
  }
  const std::size_t d = cfg_.d;
  const std::size_t f = cfg_.ffn_mult * d;
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    EncoderLayerParams p;
    p.wq = p.wk = p.wv = p.wo = Matrix(d, d);
    p.bq = p.bk = p.bv = p.bo = std::vector<double>(d, 0.0);
    p.ln_attn = p.ln_ff = LayerNormParams{std::vector<double>(d, 1.0), std::vector<double>(d, 0.0)};
    p.w_ff1 = Matrix(d, f);
    p.b_ff1.assign(f, 0.0);
    p.w_ff2 = Matrix(f, d);
    p.b_ff2.assign(d, 0.0);
    layers_.push_back(std::move(p));
  }
  positions_ = sinusoidal_table(cfg_.frames(), d);
}

// Fixed enumeration order; weights file, checksum and counts depend on it.
// fan_in == 0 marks layer-norm tensors, which init leaves at (1, 0).
void BackboneParams::for_each_tensor_mut(
    const std::function<void(std::span<double>, std::size_t)>& fn) {
  for (auto& b : conv_) {
    fn(b.weight, b.in_channels * b.kernel);
    fn(b.bias, b.in_channels * b.kernel);
  }
  const std::size_t d = cfg_.d;
  const std::size_t f = cfg_.ffn_mult * d;
  for (auto& p : layers_) {
    for (auto* m : {&p.wq, &p.wk, &p.wv, &p.wo}) fn(m->data, d);
    for (auto* v : {&p.bq, &p.bk, &p.bv, &p.bo}) fn(*v, d);
    fn(p.ln_attn.scale, 0);
    fn(p.ln_attn.shift, 0);
    fn(p.w_ff1.data, d);
    fn(p.b_ff1, d);
    fn(p.w_ff2.data, f);
    fn(p.b_ff2, f);
    fn(p.ln_ff.scale, 0);
    fn(p.ln_ff.shift, 0);
  }
}

void BackboneParams::for_each_tensor(const std::function<void(std::span<const double>)>& fn) const {
  // The mutable walker never writes through the span here.
  const_cast<BackboneParams*>(this)->for_each_tensor_mut(
      [&](std::span<double> t, std::size_t) { fn(t); });
}

std::size_t BackboneParams::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&](std::span<const double> t) { n += t.size(); });
  return n;
}

std::uint64_t BackboneParams::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for_each_tensor([&](std::span<const double> t) {
    for (double v : t) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xff;
        h *= 0x100000001b3ULL;
      }
    }
  });
  return h;
}

BackboneParams init_backbone(const BackboneConfig& cfg) {
  BackboneParams p(cfg);
  std::mt19937_64 rng(derive_seed({cfg.seed, 0xbacbULL}));
  p.for_each_tensor_mut([&](std::span<double> t, std::size_t fan_in) {
    if (fan_in == 0) return;
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    for (double& v : t) v = dist(rng);
  });
  return p;
}

void save_backbone_weights(const BackboneParams& params, const std::filesystem::path& path) {
  ByteWriter w;
  w.magic();
  w.u32(kBackboneWeightsVersion);
  write_config(w, params.config());
  w.u64(params.parameter_count());
  params.for_each_tensor([&](std::span<const double> t) {
    for (double v : t) w.f64(v);
  });
  w.write_file(path);
}

BackboneParams load_backbone_weights(const std::filesystem::path& path) {
  auto r = ByteReader::from_file(path);
  r.expect_magic();
  const std::uint32_t version = r.u32();
  if (version != kBackboneWeightsVersion) {
    fail(ErrorCode::FormatError, path.string() + ": not a backbone weights file (version " +
                                     std::to_string(version) + ")");
  }
  BackboneParams p(read_config(r));
  const std::uint64_t count = r.u64();
  if (count != p.parameter_count()) {
    fail(ErrorCode::FormatError, path.string() + ": parameter count does not match its config");
  }
  p.for_each_tensor_mut([&](std::span<double> t, std::size_t) {
    for (double& v : t) v = r.f64();
  });
  return p;
}

Matrix conv_extract(const BackboneParams& params, std::span<const double> samples) {
  const auto& cfg = params.config();
  if (samples.size() != cfg.input_length) {
    fail(ErrorCode::ShapeMismatch, "window has " + std::to_string(samples.size()) +
                                       " samples, backbone expects " +
                                       std::to_string(cfg.input_length));
  }
  // Activations are frames x channels.
  Matrix x(samples.size(), 1);
  x.data.assign(samples.begin(), samples.end());
  for (const auto& b : params.conv()) {
    const std::size_t t_out = (x.rows - b.kernel) / b.stride + 1;
    Matrix y(t_out, b.out_channels);
    for (std::size_t t = 0; t < t_out; ++t) {
      const std::size_t t0 = t * b.stride;
      for (std::size_t o = 0; o < b.out_channels; ++o) {
        double acc = b.bias[o];
        const double* w = b.weight.data() + o * b.in_channels * b.kernel;
        for (std::size_t k = 0; k < b.kernel; ++k) {
          const double* xin = x.data.data() + (t0 + k) * x.cols;
          for (std::size_t c = 0; c < b.in_channels; ++c) acc += w[c * b.kernel + k] * xin[c];
        }
        y(t, o) = gelu(acc);
      }
    }
    x = std::move(y);
  }
  const Matrix& pe = params.positions();
  for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += pe.data[i];
  return x;
}

Matrix encoder_layer_forward(const BackboneParams& params, std::size_t layer, const Matrix& x) {
  const auto& cfg = params.config();
  require(layer < params.layers().size(), ErrorCode::ShapeMismatch, "layer index out of range");
  require(x.cols == cfg.d, ErrorCode::ShapeMismatch, "encoder input width mismatch");
  const auto& p = params.layers()[layer];
  const std::size_t t_len = x.rows;
  const std::size_t heads = cfg.n_heads;
  const std::size_t dh = cfg.d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Matrix q = linear(x, p.wq, p.bq);
  const Matrix k = linear(x, p.wk, p.bk);
  const Matrix v = linear(x, p.wv, p.bv);
  Matrix ctx(t_len, cfg.d);
  std::vector<double> scores(t_len);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < t_len; ++i) {
      double mx = -INFINITY;
      for (std::size_t j = 0; j < t_len; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += q(i, off + c) * k(j, off + c);
        scores[j] = s * scale;
        mx = std::max(mx, scores[j]);
      }
      double z = 0.0;
      for (auto& s : scores) {
        s = std::exp(s - mx);
        z += s;
      }
      for (std::size_t j = 0; j < t_len; ++j) {
        const double a = scores[j] / z;
        for (std::size_t c = 0; c < dh; ++c) ctx(i, off + c) += a * v(j, off + c);
      }
    }
  }
  Matrix h1 = linear(ctx, p.wo, p.bo);
  for (std::size_t i = 0; i < h1.data.size(); ++i) h1.data[i] += x.data[i];
  layer_norm_rows(h1, p.ln_attn);

  Matrix ff = linear(h1, p.w_ff1, p.b_ff1);
  for (double& val : ff.data) val = gelu(val);
  Matrix h2 = linear(ff, p.w_ff2, p.b_ff2);
  for (std::size_t i = 0; i < h2.data.size(); ++i) h2.data[i] += h1.data[i];
  layer_norm_rows(h2, p.ln_ff);
  return h2;
}

EmbeddingStack forward_all(const BackboneParams& params, std::span<const double> samples) {
  const auto& cfg = params.config();
  Matrix x = conv_extract(params, samples);
  EmbeddingStack stack(cfg.experts(), x.rows, cfg.d);
  std::copy(x.data.begin(), x.data.end(), stack.expert(0).begin());
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    x = encoder_layer_forward(params, l, x);
    std::copy(x.data.begin(), x.data.end(), stack.expert(l + 1).begin());
  }
  return stack;
}

EmbeddingStack forward_all(const BackboneParams& params, const Window& window) {
  return forward_all(params, std::span<const double>(window.samples));
}

void save_stack(const EmbeddingStack& stack, const std::filesystem::path& path) {
  require(stack.data.size() == stack.experts * stack.frames * stack.dim, ErrorCode::ShapeMismatch,
          "stack payload does not match its shape");
  ByteWriter w;
  w.magic();
  w.u32(kStackVersion);
  w.u32(static_cast<std::uint32_t>(stack.experts));
  w.u32(static_cast<std::uint32_t>(stack.frames));
  w.u32(static_cast<std::uint32_t>(stack.dim));
  for (double v : stack.data) {
    require(std::isfinite(v), ErrorCode::NonFiniteInput, "stack contains non-finite values");
    w.f32(static_cast<float>(v));
  }
  w.write_file(path);
}

EmbeddingStack load_stack(const std::filesystem::path& path) {
  auto r = ByteReader::from_file(path);
  r.expect_magic();
  const std::uint32_t version = r.u32();
  if (version != kStackVersion) {
    fail(ErrorCode::FormatError,
         path.string() + ": unsupported embedding cache version " + std::to_string(version));
  }
  const std::size_t e = r.u32(), t = r.u32(), d = r.u32();
  const std::size_t count = e * t * d;
  if (r.remaining() < count * 4) {
    fail(ErrorCode::TruncatedFile, path.string() + ": header declares " + std::to_string(count) +
                                       " floats, payload holds " +
                                       std::to_string(r.remaining() / 4));
  }
  if (r.remaining() > count * 4) {
    fail(ErrorCode::FormatError, path.string() + ": trailing bytes after payload");
  }
  EmbeddingStack s(e, t, d);
  for (double& v : s.data) v = r.f32();
  return s;
}

}  // namespace emonet
