#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "emonet/signals.hpp"
#include "emonet/tensor.hpp"

namespace emonet {

// Gating over the captured experts.
//   Static:      alpha = softmax(theta), theta has one entry per expert.
//   Conditioned: logit_i = W_g[i] . meanpool(input of expert i) with the input
//                of expert i being expert i-1 (expert 0 uses its own output),
//                alpha = softmax over all experts jointly.
//   LastOnly:    alpha is one-hot on the final expert and not trainable; this
//                is the last-layer probing baseline.
enum class GatingMode { Static, Conditioned, LastOnly };

std::string_view gating_mode_name(GatingMode m);
GatingMode parse_gating_mode(std::string_view s);

struct GatingParams {
  GatingMode mode = GatingMode::Conditioned;
  std::size_t experts = 0;
  std::vector<double> theta;  // Static: experts
  Matrix w_g;                 // Conditioned: experts x dim
};

GatingParams make_gating(GatingMode mode, std::size_t experts, std::size_t dim);

struct HeadParams {
  std::size_t dim = 0;
  std::size_t hidden = 128;
  std::size_t classes = kNumClasses;
  Matrix w1;  // dim x hidden
  std::vector<double> b1;
  std::vector<double> gamma, beta;
  std::vector<double> running_mean, running_var;
  Matrix w2;  // hidden x classes
  std::vector<double> b2;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  double dropout = 0.3;
};

// W1, W2 and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); gamma=1, beta=0,
// running statistics (0, 1).
HeadParams init_head(std::size_t dim, std::uint64_t seed, std::size_t hidden = 128,
                     std::size_t classes = kNumClasses);

struct Model {
  GatingParams gating;
  HeadParams head;
};

using Alphas = std::vector<double>;

// Time-mean of every expert: experts x dim. Everything downstream of the
// backbone only ever needs this summary, because pooling commutes with the
// convex combination.
Matrix pool_experts(const EmbeddingStack& stack);

std::vector<double> softmax(std::span<const double> logits);

Alphas compute_alphas(const GatingParams& g, const Matrix& pooled);
Alphas compute_alphas(const GatingParams& g, const EmbeddingStack& stack);

// h_agg[t, j] = sum_i alpha_i * expert_i[t, j]
Matrix fuse(std::span<const double> alphas, const EmbeddingStack& stack);
// Same combination applied to the pooled summary: sum_i alpha_i * pooled[i].
std::vector<double> fuse_pooled(std::span<const double> alphas, const Matrix& pooled);

enum class Phase { Train, Eval };

// Intermediate activations of one head pass over a batch (B rows each).
struct HeadCache {
  Matrix v;          // B x dim, pooled input
  Matrix pre;        // B x hidden, W1^T v + b1
  Matrix relu;       // B x hidden
  Matrix xhat;       // B x hidden, normalized
  Matrix bn_out;     // B x hidden
  Matrix mask;       // B x hidden, 0 or 1/(1-p); all ones in eval
  Matrix dropped;    // B x hidden
  std::vector<double> batch_mean, batch_var;  // biased variance, train only
  std::vector<double> inv_std;
};

struct HeadOutput {
  Matrix logits;  // B x classes
  HeadCache cache;
};

// Batch forward on pooled vectors (B x dim).
HeadOutput head_forward_pooled(const HeadParams& h, const Matrix& v, Phase phase,
                               std::uint64_t dropout_seed);
// Batch forward on full aggregated sequences (each T' x dim); mean-pools first.
HeadOutput head_forward(const HeadParams& h, std::span<const Matrix> h_agg, Phase phase,
                        std::uint64_t dropout_seed);

struct GradientSet {
  std::vector<double> theta;
  Matrix w_g;
  Matrix w1;
  std::vector<double> b1, gamma, beta;
  Matrix w2;
  std::vector<double> b2;
};

struct LossResult {
  double loss = 0.0;
  GradientSet grads;
  // Train phase only: batch statistics for the running-average update.
  std::vector<double> batch_mean, batch_var_unbiased;
};

struct PooledExample {
  Matrix pooled;  // experts x dim
  int label = 0;
};

// Mean cross-entropy over the batch and its analytic gradient w.r.t. the
// gating and head parameters. Pure: running statistics are not touched.
LossResult loss_and_grads(const Model& m, std::span<const PooledExample> batch, Phase phase,
                          std::uint64_t dropout_seed);
// Convenience overload on full stacks.
LossResult loss_and_grads(const Model& m, std::span<const EmbeddingStack> stacks,
                          std::span<const int> labels, Phase phase, std::uint64_t dropout_seed);

void update_running_stats(HeadParams& h, std::span<const double> batch_mean,
                          std::span<const double> batch_var_unbiased);

struct Prediction {
  int label = 0;
  std::vector<double> probabilities;
};

// Lowest index wins ties.
Prediction predict_from_logits(std::span<const double> logits);
Prediction predict(const Model& m, const Matrix& pooled);
Prediction predict(const Model& m, const EmbeddingStack& stack);

// Logits of the last-layer baseline: the head applied directly to the final
// expert, no gating involved.
std::vector<double> last_layer_logits(const HeadParams& h, const Matrix& pooled);

// Trainable tensors in a fixed order, paired with the matching gradient
// tensors. Running statistics are not trainable.
std::vector<std::span<double>> trainable_tensors(Model& m);
std::vector<std::span<const double>> trainable_tensors(const Model& m);
std::vector<std::span<double>> gradient_tensors(GradientSet& g);
std::vector<std::string> trainable_names(const Model& m);
std::size_t trainable_count(const Model& m);
// Closed form: gating + dim*hidden + hidden + 2*hidden + hidden*classes + classes.
std::size_t trainable_count_formula(GatingMode mode, std::size_t experts, std::size_t dim,
                                    std::size_t hidden, std::size_t classes);

// Key/value text stored alongside the parameters (backbone config, split
// settings, preprocessing) so evaluation can rebuild the same pipeline.
using CheckpointMeta = std::map<std::string, std::string>;

void save_checkpoint(const Model& m, const CheckpointMeta& meta, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

}  // namespace emonet
