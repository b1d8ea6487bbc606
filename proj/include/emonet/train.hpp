#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "emonet/backbone.hpp"
#include "emonet/dataset.hpp"
#include "emonet/metrics.hpp"
#include "emonet/nmoe.hpp"
#include "emonet/signals.hpp"

namespace emonet {

struct TrainConfig {
  int epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 42;
  int folds = 5;
  double train_fraction = 0.8;
  double overlap_percent = 75.0;
  GatingMode gating = GatingMode::Conditioned;
  std::size_t hidden = 128;
  double dropout = 0.3;
  int threads = 1;

  void validate() const;
};

struct OptimizerState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t step = 0;
};

OptimizerState make_optimizer_state(const Model& model);

// Bias-corrected Adam over matching parameter/gradient tensors.
void adam_step(std::span<const std::span<double>> params,
               std::span<const std::span<double>> grads, OptimizerState& state,
               const TrainConfig& cfg);
void adam_step(Model& model, GradientSet& grads, OptimizerState& state, const TrainConfig& cfg);

// A window after the backbone, reduced to its per-expert time means.
struct EmbeddedWindow {
  std::string trial_id;
  EmotionClass label = EmotionClass::Neutral;
  std::size_t start_index = 0;
  Matrix pooled;  // experts x dim
};

struct PipelineConfig {
  PreprocessConfig preprocess;
  double overlap_percent = 75.0;       // training windows
  double eval_overlap_percent = 0.0;   // validation and test windows
};

struct EmbeddedDataset {
  SplitPlan plan;
  std::vector<EmbeddedWindow> train;       // train trials, training stride
  std::vector<EmbeddedWindow> train_eval;  // train trials, evaluation stride (fold validation)
  std::vector<EmbeddedWindow> test;        // test trials, evaluation stride
  std::size_t experts = 0;
  std::size_t dim = 0;
};

// Per-expert time means of the stack taken at f32 storage precision, so cached
// and freshly computed windows agree bit for bit.
Matrix pooled_embedding(const EmbeddingStack& stack);

// Windows of the given trials after preprocessing, in trial order.
std::vector<Window> make_windows(const std::vector<EcgRecord>& records,
                                 const std::vector<TrialRef>& trials,
                                 const PreprocessConfig& pre, double overlap_percent);

// Runs preprocessing and the frozen backbone over every window the protocol
// needs. With a cache directory, full stacks are read from / written to
// "<trial_id>@<start>.nmoe" files there.
EmbeddedDataset embed_dataset(const std::vector<EcgRecord>& records, const SplitPlan& plan,
                              const PipelineConfig& pipe, const BackboneParams& backbone,
                              int threads = 1,
                              const std::optional<std::filesystem::path>& cache_dir = std::nullopt);

std::vector<EmbeddedWindow> embed_windows(const std::vector<Window>& windows,
                                          const BackboneParams& backbone, int threads = 1,
                                          const std::optional<std::filesystem::path>& cache_dir = std::nullopt);

struct HistoryRow {
  std::string run;  // "fold0".."fold{k-1}" or "final"
  int epoch = 0;
  double mean_loss = 0.0;
};

struct TrainedRun {
  Model model;
  std::vector<HistoryRow> history;
};

Model init_model(const TrainConfig& cfg, std::size_t experts, std::size_t dim);

// Trains gating + head on the given windows. Batches of batch_size; a
// trailing batch of one is merged into the previous batch.
TrainedRun train_model(const TrainConfig& cfg, std::span<const EmbeddedWindow> windows,
                       std::size_t experts, std::size_t dim, const std::string& run_name);

Metrics evaluate_metrics(const Model& model, std::span<const EmbeddedWindow> windows);

struct FoldResult {
  int fold = 0;
  Metrics val;
};

struct FitResult {
  Model model;  // trained on the whole train split
  std::vector<FoldResult> folds;
  Metrics test;
  std::vector<HistoryRow> history;
  std::size_t trainable_parameters = 0;
  double val_accuracy_mean = 0.0, val_accuracy_std = 0.0;
  double val_f1_mean = 0.0, val_f1_std = 0.0;
};

FitResult fit(const TrainConfig& cfg, const EmbeddedDataset& data);

struct FullFitResult {
  FitResult result;
  EmbeddedDataset data;
  std::uint64_t backbone_checksum_before = 0;
  std::uint64_t backbone_checksum_after = 0;
};

// Split, embed and fit in one go.
FullFitResult fit(const TrainConfig& cfg, const std::vector<EcgRecord>& records,
                  const BackboneParams& backbone, const PreprocessConfig& pre = {},
                  const std::optional<std::filesystem::path>& cache_dir = std::nullopt);

struct SweepRow {
  double snr_db = 0.0;
  Metrics metrics;
};

std::uint64_t noise_seed(std::uint64_t seed, const Window& w, double snr_db);

// Noise goes onto preprocessed windows; embeddings are recomputed.
std::vector<SweepRow> noise_sweep(const Model& model, const BackboneParams& backbone,
                                  const std::vector<Window>& windows,
                                  std::span<const double> snr_db, std::uint64_t seed,
                                  int threads = 1);

struct CompareReport {
  FitResult nmoe;
  FitResult last_layer;
  Alphas baseline_alphas_before;
  Alphas baseline_alphas_after;
};

CompareReport compare_last_layer(const TrainConfig& cfg, const EmbeddedDataset& data);

// Static: softmax(theta). Conditioned: mean alpha over the windows.
// LastOnly: one-hot on the final expert.
std::vector<double> report_alphas(const Model& model, std::span<const EmbeddedWindow> windows);

}  // namespace emonet
