#include "emonet/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>

#include "emonet/error.hpp"
#include "emonet/seed.hpp"
#include "parallel.hpp"

namespace emonet {

void TrainConfig::validate() const {
  require(epochs >= 1, ErrorCode::InvalidConfig, "epochs must be >= 1");
  require(batch_size >= 2, ErrorCode::InvalidConfig, "batch_size must be >= 2");
  require(learning_rate > 0.0, ErrorCode::InvalidConfig, "learning rate must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorCode::InvalidConfig,
          "Adam betas must be in [0, 1)");
  require(adam_eps > 0.0, ErrorCode::InvalidConfig, "Adam eps must be positive");
  require(folds >= 2, ErrorCode::InvalidConfig, "folds must be >= 2");
  require(train_fraction > 0.0 && train_fraction < 1.0, ErrorCode::InvalidConfig,
          "train_fraction must be in (0, 1)");
  require(overlap_percent >= 0.0 && overlap_percent < 100.0, ErrorCode::InvalidConfig,
          "overlap must be in [0, 100)");
  require(dropout >= 0.0 && dropout < 1.0, ErrorCode::InvalidConfig, "dropout must be in [0, 1)");
  require(hidden >= 1, ErrorCode::InvalidConfig, "hidden width must be >= 1");
  require(threads >= 1, ErrorCode::InvalidConfig, "threads must be >= 1");
}

OptimizerState make_optimizer_state(const Model& model) {
  OptimizerState s;
  for (const auto& t : trainable_tensors(model)) {
    s.m.emplace_back(t.size(), 0.0);
    s.v.emplace_back(t.size(), 0.0);
  }
  return s;
}

void adam_step(std::span<const std::span<double>> params,
               std::span<const std::span<double>> grads, OptimizerState& state,
               const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    fail(ErrorCode::ShapeMismatch, "adam_step: tensor count mismatch");
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != grads[t].size() || params[t].size() != state.m[t].size()) {
      fail(ErrorCode::ShapeMismatch, "adam_step: tensor " + std::to_string(t) + " shape mismatch");
    }
  }
  ++state.step;
  const double step = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, step);
  const double bc2 = 1.0 - std::pow(cfg.beta2, step);
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& m = state.m[t];
    auto& v = state.v[t];
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double g = grads[t][i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      params[t][i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

void adam_step(Model& model, GradientSet& grads, OptimizerState& state, const TrainConfig& cfg) {
  const auto p = trainable_tensors(model);
  const auto g = gradient_tensors(grads);
  adam_step(p, g, state, cfg);
}

Model init_model(const TrainConfig& cfg, std::size_t experts, std::size_t dim) {
  Model m;
  m.gating = make_gating(cfg.gating, experts, dim);
  m.head = init_head(dim, cfg.seed, cfg.hidden);
  m.head.dropout = cfg.dropout;
  return m;
}

TrainedRun train_model(const TrainConfig& cfg, std::span<const EmbeddedWindow> windows,
                       std::size_t experts, std::size_t dim, const std::string& run_name) {
  cfg.validate();
  require(windows.size() >= 2, ErrorCode::BatchTooSmall,
          "run " + run_name + " has fewer than 2 training windows");
  TrainedRun run;
  run.model = init_model(cfg, experts, dim);
  OptimizerState opt = make_optimizer_state(run.model);

  std::vector<std::size_t> order(windows.size());
  std::vector<PooledExample> batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed({cfg.seed, 0x5e0cULL, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      ranges.emplace_back(s, std::min(order.size(), s + cfg.batch_size));
    }
    if (ranges.size() > 1 && ranges.back().second - ranges.back().first < 2) {
      ranges[ranges.size() - 2].second = ranges.back().second;
      ranges.pop_back();
    }

    double loss_sum = 0.0;
    std::size_t step = 0;
    for (const auto& [lo, hi] : ranges) {
      batch.clear();
      for (std::size_t i = lo; i < hi; ++i) {
        const auto& w = windows[order[i]];
        batch.push_back({w.pooled, class_index(w.label)});
      }
      const std::uint64_t dropout_seed = derive_seed(
          {cfg.seed, 0xd0ULL, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(step++)});
      LossResult res = loss_and_grads(run.model, batch, Phase::Train, dropout_seed);
      adam_step(run.model, res.grads, opt, cfg);
      update_running_stats(run.model.head, res.batch_mean, res.batch_var_unbiased);
      loss_sum += res.loss * static_cast<double>(hi - lo);
    }
    run.history.push_back({run_name, epoch + 1, loss_sum / static_cast<double>(order.size())});
  }
  return run;
}

Metrics evaluate_metrics(const Model& model, std::span<const EmbeddedWindow> windows) {
  require(!windows.empty(), ErrorCode::EmptyEvalSet, "no windows to evaluate");
  std::vector<int> truth, predicted;
  truth.reserve(windows.size());
  predicted.reserve(windows.size());
  for (const auto& w : windows) {
    truth.push_back(class_index(w.label));
    predicted.push_back(predict(model, w.pooled).label);
  }
  return metrics_from_predictions(truth, predicted);
}

namespace {

bool contains(const std::vector<TrialRef>& trials, const std::string& id) {
  return std::any_of(trials.begin(), trials.end(), [&](const TrialRef& t) { return t.trial_id == id; });
}

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
  mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  sd = std::sqrt(var / static_cast<double>(xs.size()));
}

}  // namespace

FitResult fit(const TrainConfig& cfg, const EmbeddedDataset& data) {
  cfg.validate();
  const auto& folds = data.plan.folds;
  require(static_cast<int>(folds.size()) == cfg.folds, ErrorCode::InvalidConfig,
          "split plan has " + std::to_string(folds.size()) + " folds, config asks for " +
              std::to_string(cfg.folds));

  FitResult out;
  std::vector<TrainedRun> fold_runs(folds.size());
  std::vector<Metrics> fold_metrics(folds.size());
  detail::run_parallel(folds.size(), cfg.threads, [&](std::size_t f) {
    std::vector<EmbeddedWindow> fold_train, fold_val;
    for (const auto& w : data.train) {
      if (!contains(folds[f], w.trial_id)) fold_train.push_back(w);
    }
    for (const auto& w : data.train_eval) {
      if (contains(folds[f], w.trial_id)) fold_val.push_back(w);
    }
    fold_runs[f] = train_model(cfg, fold_train, data.experts, data.dim, "fold" + std::to_string(f));
    fold_metrics[f] = evaluate_metrics(fold_runs[f].model, fold_val);
  });

  std::vector<double> accs, f1s;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    out.folds.push_back({static_cast<int>(f), fold_metrics[f]});
    out.history.insert(out.history.end(), fold_runs[f].history.begin(), fold_runs[f].history.end());
    accs.push_back(fold_metrics[f].accuracy);
    f1s.push_back(fold_metrics[f].macro_f1);
  }
  mean_std(accs, out.val_accuracy_mean, out.val_accuracy_std);
  mean_std(f1s, out.val_f1_mean, out.val_f1_std);

  TrainedRun final_run = train_model(cfg, data.train, data.experts, data.dim, "final");
  out.history.insert(out.history.end(), final_run.history.begin(), final_run.history.end());
  out.model = std::move(final_run.model);
  out.test = evaluate_metrics(out.model, data.test);
  out.trainable_parameters = trainable_count(out.model);
  return out;
}

FullFitResult fit(const TrainConfig& cfg, const std::vector<EcgRecord>& records,
                  const BackboneParams& backbone, const PreprocessConfig& pre,
                  const std::optional<std::filesystem::path>& cache_dir) {
  cfg.validate();
  FullFitResult out;
  out.backbone_checksum_before = backbone.checksum();
  const SplitPlan plan =
      make_split_plan(trial_refs(records), cfg.train_fraction, cfg.folds, cfg.seed);
  PipelineConfig pipe;
  pipe.preprocess = pre;
  pipe.overlap_percent = cfg.overlap_percent;
  out.data = embed_dataset(records, plan, pipe, backbone, cfg.threads, cache_dir);
  out.result = fit(cfg, out.data);
  out.backbone_checksum_after = backbone.checksum();
  return out;
}

std::uint64_t noise_seed(std::uint64_t seed, const Window& w, double snr_db) {
  return derive_seed({seed, fnv1a(w.trial_id), static_cast<std::uint64_t>(w.start_index),
                      std::bit_cast<std::uint64_t>(snr_db)});
}

std::vector<SweepRow> noise_sweep(const Model& model, const BackboneParams& backbone,
                                  const std::vector<Window>& windows,
                                  std::span<const double> snr_db, std::uint64_t seed, int threads) {
  require(!windows.empty(), ErrorCode::EmptyEvalSet, "noise sweep needs windows");
  std::vector<SweepRow> rows;
  for (double snr : snr_db) {
    std::vector<int> truth(windows.size()), predicted(windows.size());
    detail::run_parallel(windows.size(), threads, [&](std::size_t i) {
      const Window noisy = inject_noise(windows[i], snr, noise_seed(seed, windows[i], snr));
      truth[i] = class_index(windows[i].label);
      predicted[i] = predict(model, pooled_embedding(forward_all(backbone, noisy))).label;
    });
    rows.push_back({snr, metrics_from_predictions(truth, predicted)});
  }
  return rows;
}

CompareReport compare_last_layer(const TrainConfig& cfg, const EmbeddedDataset& data) {
  CompareReport rep;
  rep.nmoe = fit(cfg, data);
  TrainConfig base = cfg;
  base.gating = GatingMode::LastOnly;
  const Model untrained = init_model(base, data.experts, data.dim);
  rep.baseline_alphas_before = compute_alphas(untrained.gating, data.test.front().pooled);
  rep.last_layer = fit(base, data);
  rep.baseline_alphas_after = compute_alphas(rep.last_layer.model.gating, data.test.front().pooled);
  return rep;
}

std::vector<double> report_alphas(const Model& model, std::span<const EmbeddedWindow> windows) {
  const auto& g = model.gating;
  if (g.mode == GatingMode::Static) return softmax(g.theta);
  if (g.mode == GatingMode::LastOnly) {
    std::vector<double> a(g.experts, 0.0);
    a.back() = 1.0;
    return a;
  }
  require(!windows.empty(), ErrorCode::EmptyEvalSet, "conditioned alpha report needs windows");
  std::vector<double> mean(g.experts, 0.0);
  for (const auto& w : windows) {
    const auto a = compute_alphas(g, w.pooled);
    for (std::size_t i = 0; i < a.size(); ++i) mean[i] += a[i];
  }
  for (double& x : mean) x /= static_cast<double>(windows.size());
  return mean;
}

}  // namespace emonet
