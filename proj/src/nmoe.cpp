#include "emonet/nmoe.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "emonet/binary_io.hpp"
#include "emonet/error.hpp"
#include "emonet/seed.hpp"

namespace emonet {

std::string_view gating_mode_name(GatingMode m) {
  switch (m) {
    case GatingMode::Static: return "static";
    case GatingMode::Conditioned: return "conditioned";
    case GatingMode::LastOnly: return "last_only";
  }
  return "?";
}

GatingMode parse_gating_mode(std::string_view s) {
  if (s == "static") return GatingMode::Static;
  if (s == "conditioned") return GatingMode::Conditioned;
  if (s == "last_only") return GatingMode::LastOnly;
  fail(ErrorCode::InvalidConfig, "unknown gating mode '" + std::string(s) + "'");
}

GatingParams make_gating(GatingMode mode, std::size_t experts, std::size_t dim) {
  require(experts >= 1, ErrorCode::InvalidConfig, "need at least one expert");
  GatingParams g;
  g.mode = mode;
  g.experts = experts;
  if (mode == GatingMode::Static) g.theta.assign(experts, 0.0);
  if (mode == GatingMode::Conditioned) g.w_g = Matrix(experts, dim);
  return g;
}

HeadParams init_head(std::size_t dim, std::uint64_t seed, std::size_t hidden, std::size_t classes) {
  HeadParams h;
  h.dim = dim;
  h.hidden = hidden;
  h.classes = classes;
  std::mt19937_64 rng(derive_seed({seed, 0x4eadULL}));
  auto fill = [&](std::span<double> t, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t) v = dist(rng);
  };
  h.w1 = Matrix(dim, hidden);
  h.b1.assign(hidden, 0.0);
  h.w2 = Matrix(hidden, classes);
  h.b2.assign(classes, 0.0);
  fill(h.w1.data, dim);
  fill(h.b1, dim);
  fill(h.w2.data, hidden);
  fill(h.b2, hidden);
  h.gamma.assign(hidden, 1.0);
  h.beta.assign(hidden, 0.0);
  h.running_mean.assign(hidden, 0.0);
  h.running_var.assign(hidden, 1.0);
  return h;
}

Matrix pool_experts(const EmbeddingStack& stack) {
  require(stack.frames >= 1, ErrorCode::ShapeMismatch, "stack has no frames");
  Matrix pooled(stack.experts, stack.dim);
  const double inv = 1.0 / static_cast<double>(stack.frames);
  for (std::size_t e = 0; e < stack.experts; ++e) {
    auto out = pooled.row(e);
    for (std::size_t t = 0; t < stack.frames; ++t) {
      for (std::size_t j = 0; j < stack.dim; ++j) out[j] += stack.at(e, t, j);
    }
    for (double& v : out) v *= inv;
  }
  return pooled;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

namespace {

void check_gating_shape(const GatingParams& g, const Matrix& pooled) {
  if (pooled.rows != g.experts) {
    fail(ErrorCode::ShapeMismatch, "gating expects " + std::to_string(g.experts) +
                                       " experts, input has " + std::to_string(pooled.rows));
  }
  if (g.mode == GatingMode::Conditioned && g.w_g.cols != pooled.cols) {
    fail(ErrorCode::ShapeMismatch, "gating width " + std::to_string(g.w_g.cols) +
                                       " does not match embedding width " +
                                       std::to_string(pooled.cols));
  }
}

// Pooled input of expert i: expert i-1, or expert 0 itself for i = 0.
std::span<const double> gating_input(const Matrix& pooled, std::size_t i) {
  return pooled.row(i == 0 ? 0 : i - 1);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void check_head_input(const HeadParams& h, std::size_t cols) {
  if (cols != h.dim) {
    fail(ErrorCode::ShapeMismatch,
         "head expects width " + std::to_string(h.dim) + ", got " + std::to_string(cols));
  }
}

}  // namespace

Alphas compute_alphas(const GatingParams& g, const Matrix& pooled) {
  check_gating_shape(g, pooled);
  if (g.mode == GatingMode::LastOnly) {
    Alphas a(g.experts, 0.0);
    a.back() = 1.0;
    return a;
  }
  if (g.mode == GatingMode::Static) return softmax(g.theta);
  std::vector<double> logits(g.experts);
  for (std::size_t i = 0; i < g.experts; ++i) logits[i] = dot(g.w_g.row(i), gating_input(pooled, i));
  return softmax(logits);
}

Alphas compute_alphas(const GatingParams& g, const EmbeddingStack& stack) {
  return compute_alphas(g, pool_experts(stack));
}

Matrix fuse(std::span<const double> alphas, const EmbeddingStack& stack) {
  if (alphas.size() != stack.experts) {
    fail(ErrorCode::ShapeMismatch, std::to_string(alphas.size()) + " weights for " +
                                       std::to_string(stack.experts) + " experts");
  }
  Matrix out(stack.frames, stack.dim);
  for (std::size_t e = 0; e < stack.experts; ++e) {
    const auto src = stack.expert(e);
    for (std::size_t i = 0; i < src.size(); ++i) out.data[i] += alphas[e] * src[i];
  }
  return out;
}

std::vector<double> fuse_pooled(std::span<const double> alphas, const Matrix& pooled) {
  if (alphas.size() != pooled.rows) {
    fail(ErrorCode::ShapeMismatch, std::to_string(alphas.size()) + " weights for " +
                                       std::to_string(pooled.rows) + " experts");
  }
  std::vector<double> v(pooled.cols, 0.0);
  for (std::size_t e = 0; e < pooled.rows; ++e) {
    const auto row = pooled.row(e);
    for (std::size_t j = 0; j < v.size(); ++j) v[j] += alphas[e] * row[j];
  }
  return v;
}

HeadOutput head_forward_pooled(const HeadParams& h, const Matrix& v, Phase phase,
                               std::uint64_t dropout_seed) {
  check_head_input(h, v.cols);
  const std::size_t batch = v.rows;
  require(batch >= 1, ErrorCode::ShapeMismatch, "empty batch");
  if (phase == Phase::Train && batch < 2) {
    fail(ErrorCode::BatchTooSmall, "train-phase batch norm needs at least 2 items, got " +
                                       std::to_string(batch));
  }
  const std::size_t hid = h.hidden;
  HeadOutput out;
  HeadCache& c = out.cache;
  c.v = v;
  c.pre = matmul(v, h.w1);
  c.relu = Matrix(batch, hid);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t k = 0; k < hid; ++k) {
      c.pre(b, k) += h.b1[k];
      c.relu(b, k) = std::max(0.0, c.pre(b, k));
    }
  }

  c.xhat = Matrix(batch, hid);
  c.bn_out = Matrix(batch, hid);
  c.inv_std.assign(hid, 0.0);
  if (phase == Phase::Train) {
    c.batch_mean.assign(hid, 0.0);
    c.batch_var.assign(hid, 0.0);
    const double n = static_cast<double>(batch);
    for (std::size_t k = 0; k < hid; ++k) {
      double mean = 0.0;
      for (std::size_t b = 0; b < batch; ++b) mean += c.relu(b, k);
      mean /= n;
      double var = 0.0;
      for (std::size_t b = 0; b < batch; ++b) var += (c.relu(b, k) - mean) * (c.relu(b, k) - mean);
      var /= n;
      c.batch_mean[k] = mean;
      c.batch_var[k] = var;
      c.inv_std[k] = 1.0 / std::sqrt(var + h.bn_eps);
      for (std::size_t b = 0; b < batch; ++b) c.xhat(b, k) = (c.relu(b, k) - mean) * c.inv_std[k];
    }
  } else {
    for (std::size_t k = 0; k < hid; ++k) {
      c.inv_std[k] = 1.0 / std::sqrt(h.running_var[k] + h.bn_eps);
      for (std::size_t b = 0; b < batch; ++b) {
        c.xhat(b, k) = (c.relu(b, k) - h.running_mean[k]) * c.inv_std[k];
      }
    }
  }
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t k = 0; k < hid; ++k) c.bn_out(b, k) = h.gamma[k] * c.xhat(b, k) + h.beta[k];
  }

  c.mask = Matrix(batch, hid, 1.0);
  if (phase == Phase::Train && h.dropout > 0.0) {
    std::mt19937_64 rng(derive_seed({dropout_seed, 0xd20bULL}));
    std::bernoulli_distribution keep(1.0 - h.dropout);
    const double scale = 1.0 / (1.0 - h.dropout);
    for (double& m : c.mask.data) m = keep(rng) ? scale : 0.0;
  }
  c.dropped = Matrix(batch, hid);
  for (std::size_t i = 0; i < c.dropped.data.size(); ++i) c.dropped.data[i] = c.bn_out.data[i] * c.mask.data[i];

  out.logits = matmul(c.dropped, h.w2);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < h.classes; ++j) out.logits(b, j) += h.b2[j];
  }
  return out;
}

HeadOutput head_forward(const HeadParams& h, std::span<const Matrix> h_agg, Phase phase,
                        std::uint64_t dropout_seed) {
  require(!h_agg.empty(), ErrorCode::ShapeMismatch, "empty batch");
  Matrix v(h_agg.size(), h.dim);
  for (std::size_t b = 0; b < h_agg.size(); ++b) {
    const Matrix& seq = h_agg[b];
    check_head_input(h, seq.cols);
    require(seq.rows >= 1, ErrorCode::ShapeMismatch, "aggregated sequence has no frames");
    auto row = v.row(b);
    for (std::size_t t = 0; t < seq.rows; ++t) {
      for (std::size_t j = 0; j < seq.cols; ++j) row[j] += seq(t, j);
    }
    for (double& x : row) x /= static_cast<double>(seq.rows);
  }
  return head_forward_pooled(h, v, phase, dropout_seed);
}

namespace {

GradientSet zero_gradients(const Model& m) {
  GradientSet g;
  if (m.gating.mode == GatingMode::Static) g.theta.assign(m.gating.theta.size(), 0.0);
  if (m.gating.mode == GatingMode::Conditioned) g.w_g = Matrix(m.gating.w_g.rows, m.gating.w_g.cols);
  const auto& h = m.head;
  g.w1 = Matrix(h.w1.rows, h.w1.cols);
  g.b1.assign(h.hidden, 0.0);
  g.gamma.assign(h.hidden, 0.0);
  g.beta.assign(h.hidden, 0.0);
  g.w2 = Matrix(h.w2.rows, h.w2.cols);
  g.b2.assign(h.classes, 0.0);
  return g;
}

}  // namespace

LossResult loss_and_grads(const Model& m, std::span<const PooledExample> batch, Phase phase,
                          std::uint64_t dropout_seed) {
  require(!batch.empty(), ErrorCode::ShapeMismatch, "loss_and_grads: empty batch");
  const auto& h = m.head;
  const std::size_t n = batch.size();
  const std::size_t dim = h.dim;

  std::vector<Alphas> alphas(n);
  Matrix v(n, dim);
  for (std::size_t b = 0; b < n; ++b) {
    const auto& ex = batch[b];
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= h.classes) {
      fail(ErrorCode::InvalidArgument, "label " + std::to_string(ex.label) + " out of range");
    }
    check_head_input(h, ex.pooled.cols);
    alphas[b] = compute_alphas(m.gating, ex.pooled);
    const auto fused = fuse_pooled(alphas[b], ex.pooled);
    std::copy(fused.begin(), fused.end(), v.row(b).begin());
  }

  const HeadOutput fwd = head_forward_pooled(h, v, phase, dropout_seed);
  const HeadCache& c = fwd.cache;

  LossResult res;
  res.grads = zero_gradients(m);
  GradientSet& g = res.grads;

  // d loss / d logits = (softmax - onehot) / B
  Matrix dlogits(n, h.classes);
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const auto row = fwd.logits.row(b);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double x : row) z += std::exp(x - mx);
    const double lse = mx + std::log(z);
    total += lse - row[static_cast<std::size_t>(batch[b].label)];
    for (std::size_t j = 0; j < h.classes; ++j) {
      const double p = std::exp(row[j] - lse);
      dlogits(b, j) = (p - (static_cast<int>(j) == batch[b].label ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }
  res.loss = total / static_cast<double>(n);
  if (!std::isfinite(res.loss)) fail(ErrorCode::NonFiniteLoss, "cross-entropy is not finite");

  const std::size_t hid = h.hidden;
  Matrix dy(n, hid);  // gradient at batch-norm output, after the dropout mask
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t j = 0; j < h.classes; ++j) {
      const double dl = dlogits(b, j);
      g.b2[j] += dl;
      for (std::size_t k = 0; k < hid; ++k) g.w2(k, j) += c.dropped(b, k) * dl;
    }
    for (std::size_t k = 0; k < hid; ++k) {
      double dq = 0.0;
      for (std::size_t j = 0; j < h.classes; ++j) dq += h.w2(k, j) * dlogits(b, j);
      dy(b, k) = dq * c.mask(b, k);
    }
  }

  Matrix dpre(n, hid);
  for (std::size_t k = 0; k < hid; ++k) {
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      g.gamma[k] += dy(b, k) * c.xhat(b, k);
      g.beta[k] += dy(b, k);
      const double dxhat = dy(b, k) * h.gamma[k];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * c.xhat(b, k);
    }
    for (std::size_t b = 0; b < n; ++b) {
      const double dxhat = dy(b, k) * h.gamma[k];
      double drelu;
      if (phase == Phase::Train) {
        const double nb = static_cast<double>(n);
        drelu = c.inv_std[k] / nb * (nb * dxhat - sum_dxhat - c.xhat(b, k) * sum_dxhat_xhat);
      } else {
        drelu = dxhat * c.inv_std[k];
      }
      dpre(b, k) = c.pre(b, k) > 0.0 ? drelu : 0.0;
    }
  }

  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t k = 0; k < hid; ++k) g.b1[k] += dpre(b, k);
    for (std::size_t j = 0; j < dim; ++j) {
      const double vj = v(b, j);
      for (std::size_t k = 0; k < hid; ++k) g.w1(j, k) += vj * dpre(b, k);
    }
  }

  if (m.gating.mode != GatingMode::LastOnly) {
    const std::size_t e_count = m.gating.experts;
    std::vector<double> dalpha(e_count);
    std::vector<double> dv(dim);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t j = 0; j < dim; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < hid; ++k) s += h.w1(j, k) * dpre(b, k);
        dv[j] = s;
      }
      const Matrix& pooled = batch[b].pooled;
      double weighted = 0.0;
      for (std::size_t i = 0; i < e_count; ++i) {
        dalpha[i] = dot(dv, pooled.row(i));
        weighted += alphas[b][i] * dalpha[i];
      }
      for (std::size_t i = 0; i < e_count; ++i) {
        const double dz = alphas[b][i] * (dalpha[i] - weighted);
        if (m.gating.mode == GatingMode::Static) {
          g.theta[i] += dz;
        } else {
          const auto in = gating_input(pooled, i);
          auto gw = g.w_g.row(i);
          for (std::size_t j = 0; j < dim; ++j) gw[j] += dz * in[j];
        }
      }
    }
  }

  if (phase == Phase::Train) {
    res.batch_mean = c.batch_mean;
    res.batch_var_unbiased = c.batch_var;
    const double scale = static_cast<double>(n) / static_cast<double>(n - 1);
    for (double& x : res.batch_var_unbiased) x *= scale;
  }
  return res;
}

LossResult loss_and_grads(const Model& m, std::span<const EmbeddingStack> stacks,
                          std::span<const int> labels, Phase phase, std::uint64_t dropout_seed) {
  require(stacks.size() == labels.size(), ErrorCode::ShapeMismatch,
          "stack and label counts differ");
  std::vector<PooledExample> batch;
  batch.reserve(stacks.size());
  for (std::size_t i = 0; i < stacks.size(); ++i) batch.push_back({pool_experts(stacks[i]), labels[i]});
  return loss_and_grads(m, batch, phase, dropout_seed);
}

void update_running_stats(HeadParams& h, std::span<const double> batch_mean,
                          std::span<const double> batch_var_unbiased) {
  require(batch_mean.size() == h.hidden && batch_var_unbiased.size() == h.hidden,
          ErrorCode::ShapeMismatch, "running-stat update shape mismatch");
  const double mom = h.bn_momentum;
  for (std::size_t k = 0; k < h.hidden; ++k) {
    h.running_mean[k] = (1.0 - mom) * h.running_mean[k] + mom * batch_mean[k];
    h.running_var[k] = (1.0 - mom) * h.running_var[k] + mom * batch_var_unbiased[k];
  }
}

Prediction predict_from_logits(std::span<const double> logits) {
  Prediction p;
  p.probabilities = softmax(logits);
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  p.label = static_cast<int>(best);
  return p;
}

Prediction predict(const Model& m, const Matrix& pooled) {
  const auto alphas = compute_alphas(m.gating, pooled);
  const auto fused = fuse_pooled(alphas, pooled);
  Matrix v(1, fused.size());
  v.data = fused;
  const HeadOutput out = head_forward_pooled(m.head, v, Phase::Eval, 0);
  return predict_from_logits(out.logits.row(0));
}

Prediction predict(const Model& m, const EmbeddingStack& stack) {
  return predict(m, pool_experts(stack));
}

std::vector<double> last_layer_logits(const HeadParams& h, const Matrix& pooled) {
  require(pooled.rows >= 1, ErrorCode::ShapeMismatch, "no experts");
  Matrix v(1, pooled.cols);
  const auto last = pooled.row(pooled.rows - 1);
  v.data.assign(last.begin(), last.end());
  const HeadOutput out = head_forward_pooled(h, v, Phase::Eval, 0);
  const auto row = out.logits.row(0);
  return {row.begin(), row.end()};
}

std::vector<std::span<double>> trainable_tensors(Model& m) {
  std::vector<std::span<double>> t;
  if (m.gating.mode == GatingMode::Static) t.emplace_back(m.gating.theta);
  if (m.gating.mode == GatingMode::Conditioned) t.emplace_back(m.gating.w_g.data);
  auto& h = m.head;
  t.emplace_back(h.w1.data);
  t.emplace_back(h.b1);
  t.emplace_back(h.gamma);
  t.emplace_back(h.beta);
  t.emplace_back(h.w2.data);
  t.emplace_back(h.b2);
  return t;
}

std::vector<std::span<const double>> trainable_tensors(const Model& m) {
  auto mut = trainable_tensors(const_cast<Model&>(m));
  return {mut.begin(), mut.end()};
}

std::vector<std::span<double>> gradient_tensors(GradientSet& g) {
  std::vector<std::span<double>> t;
  if (!g.theta.empty()) t.emplace_back(g.theta);
  if (!g.w_g.empty()) t.emplace_back(g.w_g.data);
  t.emplace_back(g.w1.data);
  t.emplace_back(g.b1);
  t.emplace_back(g.gamma);
  t.emplace_back(g.beta);
  t.emplace_back(g.w2.data);
  t.emplace_back(g.b2);
  return t;
}

std::vector<std::string> trainable_names(const Model& m) {
  std::vector<std::string> names;
  if (m.gating.mode == GatingMode::Static) names.emplace_back("gating.theta");
  if (m.gating.mode == GatingMode::Conditioned) names.emplace_back("gating.w_g");
  for (const char* n : {"head.w1", "head.b1", "head.gamma", "head.beta", "head.w2", "head.b2"}) {
    names.emplace_back(n);
  }
  return names;
}

std::size_t trainable_count(const Model& m) {
  std::size_t n = 0;
  for (const auto& t : trainable_tensors(m)) n += t.size();
  return n;
}

std::size_t trainable_count_formula(GatingMode mode, std::size_t experts, std::size_t dim,
                                    std::size_t hidden, std::size_t classes) {
  std::size_t gating = 0;
  if (mode == GatingMode::Static) gating = experts;
  if (mode == GatingMode::Conditioned) gating = experts * dim;
  return gating + dim * hidden + hidden + 2 * hidden + hidden * classes + classes;
}

namespace {

void write_tensor(ByteWriter& w, std::string_view tag, std::size_t rows, std::size_t cols,
                  std::span<const double> data) {
  w.tag(tag);
  w.u32(static_cast<std::uint32_t>(rows));
  w.u32(static_cast<std::uint32_t>(cols));
  for (double v : data) w.f64(v);
}

std::vector<double> read_tensor(ByteReader& r, std::string_view tag, std::size_t rows,
                                std::size_t cols) {
  const std::string got = r.tag();
  if (got != tag) {
    fail(ErrorCode::FormatError,
         r.source() + ": expected section " + std::string(tag) + ", found " + got);
  }
  const std::size_t fr = r.u32(), fc = r.u32();
  if (fr != rows || fc != cols) {
    fail(ErrorCode::FormatError, r.source() + ": section " + std::string(tag) + " has shape " +
                                     std::to_string(fr) + "x" + std::to_string(fc));
  }
  std::vector<double> out(rows * cols);
  for (double& v : out) v = r.f64();
  return out;
}

std::string encode_meta(const CheckpointMeta& meta) {
  std::string s;
  for (const auto& [k, v] : meta) s += k + "=" + v + "\n";
  return s;
}

CheckpointMeta decode_meta(const std::string& text) {
  CheckpointMeta meta;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

}  // namespace

void save_checkpoint(const Model& m, const CheckpointMeta& meta, const std::filesystem::path& path) {
  ByteWriter w;
  w.magic();
  w.u32(kCheckpointVersion);
  w.tag("META");
  w.text(encode_meta(meta));

  const auto& g = m.gating;
  w.tag("GATE");
  w.u32(static_cast<std::uint32_t>(g.mode));
  w.u32(static_cast<std::uint32_t>(g.experts));
  if (g.mode == GatingMode::Static) write_tensor(w, "THTA", g.theta.size(), 1, g.theta);
  if (g.mode == GatingMode::Conditioned) write_tensor(w, "WGAT", g.w_g.rows, g.w_g.cols, g.w_g.data);

  const auto& h = m.head;
  w.tag("HEAD");
  w.u32(static_cast<std::uint32_t>(h.dim));
  w.u32(static_cast<std::uint32_t>(h.hidden));
  w.u32(static_cast<std::uint32_t>(h.classes));
  w.f64(h.bn_eps);
  w.f64(h.bn_momentum);
  w.f64(h.dropout);
  write_tensor(w, "W1  ", h.dim, h.hidden, h.w1.data);
  write_tensor(w, "B1  ", h.hidden, 1, h.b1);
  write_tensor(w, "GAMA", h.hidden, 1, h.gamma);
  write_tensor(w, "BETA", h.hidden, 1, h.beta);
  write_tensor(w, "RMEA", h.hidden, 1, h.running_mean);
  write_tensor(w, "RVAR", h.hidden, 1, h.running_var);
  write_tensor(w, "W2  ", h.hidden, h.classes, h.w2.data);
  write_tensor(w, "B2  ", h.classes, 1, h.b2);
  w.tag("END ");
  w.write_file(path);
}

Model load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta) {
  auto r = ByteReader::from_file(path);
  r.expect_magic();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    fail(ErrorCode::FormatError,
         path.string() + ": not a checkpoint (version " + std::to_string(version) + ")");
  }
  if (r.tag() != "META") fail(ErrorCode::FormatError, path.string() + ": missing META section");
  const CheckpointMeta decoded = decode_meta(r.text());
  if (meta) *meta = decoded;

  Model m;
  if (r.tag() != "GATE") fail(ErrorCode::FormatError, path.string() + ": missing GATE section");
  const std::uint32_t mode = r.u32();
  if (mode > 2) fail(ErrorCode::FormatError, path.string() + ": unknown gating mode");
  m.gating.mode = static_cast<GatingMode>(mode);
  m.gating.experts = r.u32();
  if (m.gating.mode == GatingMode::Static) {
    m.gating.theta = read_tensor(r, "THTA", m.gating.experts, 1);
  }

  // The conditioned gate width is only known from its own section header.
  std::size_t gate_dim = 0;
  std::vector<double> wg;
  if (m.gating.mode == GatingMode::Conditioned) {
    const std::string got = r.tag();
    if (got != "WGAT") fail(ErrorCode::FormatError, path.string() + ": missing WGAT section");
    const std::size_t rows = r.u32();
    gate_dim = r.u32();
    if (rows != m.gating.experts) fail(ErrorCode::FormatError, path.string() + ": WGAT rows mismatch");
    wg.resize(rows * gate_dim);
    for (double& v : wg) v = r.f64();
    m.gating.w_g = Matrix(rows, gate_dim);
    m.gating.w_g.data = std::move(wg);
  }

  if (r.tag() != "HEAD") fail(ErrorCode::FormatError, path.string() + ": missing HEAD section");
  auto& h = m.head;
  h.dim = r.u32();
  h.hidden = r.u32();
  h.classes = r.u32();
  h.bn_eps = r.f64();
  h.bn_momentum = r.f64();
  h.dropout = r.f64();
  if (m.gating.mode == GatingMode::Conditioned && gate_dim != h.dim) {
    fail(ErrorCode::FormatError, path.string() + ": gating width differs from head width");
  }
  h.w1 = Matrix(h.dim, h.hidden);
  h.w1.data = read_tensor(r, "W1  ", h.dim, h.hidden);
  h.b1 = read_tensor(r, "B1  ", h.hidden, 1);
  h.gamma = read_tensor(r, "GAMA", h.hidden, 1);
  h.beta = read_tensor(r, "BETA", h.hidden, 1);
  h.running_mean = read_tensor(r, "RMEA", h.hidden, 1);
  h.running_var = read_tensor(r, "RVAR", h.hidden, 1);
  h.w2 = Matrix(h.hidden, h.classes);
  h.w2.data = read_tensor(r, "W2  ", h.hidden, h.classes);
  h.b2 = read_tensor(r, "B2  ", h.classes, 1);
  if (r.tag() != "END ") fail(ErrorCode::FormatError, path.string() + ": missing END marker");
  return m;
}

}  // namespace emonet
