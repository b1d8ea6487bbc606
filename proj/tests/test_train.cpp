#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <set>

#include "emonet/error.hpp"
#include "emonet/metrics.hpp"
#include "emonet/train.hpp"
#include "support.hpp"

using namespace emonet;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an emonet::Error");
  return ErrorCode::Usage;
}

struct Tiny {
  std::vector<EcgRecord> records;
  BackboneParams backbone;
  PreprocessConfig pre;
  TrainConfig cfg;
};

// 5 trials per class of 8 s at 64 Hz, 2 s windows, a 2-layer d=8 backbone.
Tiny tiny() {
  SynthConfig s;
  s.trials_per_class = 5;
  s.duration_s = 8.0;
  s.fs = 64.0;
  PreprocessConfig pre;
  pre.window_seconds = 2.0;
  BackboneConfig b;
  b.d = 8;
  b.n_layers = 2;
  b.n_heads = 2;
  b.input_length = window_length(pre, s.fs);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.folds = 2;
  cfg.hidden = 16;
  return {generate_dataset(s), init_backbone(b), pre, cfg};
}

}  // namespace

TEST_CASE("Adam single step and two-step unroll") {
  TrainConfig cfg;
  std::vector<double> p{0.0}, g{1.0};
  OptimizerState st;
  st.m = {{0.0}};
  st.v = {{0.0}};
  const std::vector<std::span<double>> ps{p}, gs{g};
  adam_step(ps, gs, st, cfg);
  CHECK(std::abs(p[0] - (-1e-3 / (1.0 + 1e-8))) < 1e-15);
  CHECK(p[0] == doctest::Approx(-0.000999999990).epsilon(1e-9));

  adam_step(ps, gs, st, cfg);
  double m = 0.0, v = 0.0, x = 0.0;
  for (int t = 1; t <= 2; ++t) {
    m = 0.9 * m + 0.1;
    v = 0.999 * v + 0.001;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    x -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
  }
  CHECK(std::abs(p[0] - x) < 1e-12);
  CHECK(st.step == 2);
}

TEST_CASE("Adam with zero gradients leaves parameters unchanged") {
  TrainConfig cfg;
  std::vector<double> p{0.3, -1.2, 5.0}, g{0.0, 0.0, 0.0};
  const auto orig = p;
  OptimizerState st;
  st.m = {{0, 0, 0}};
  st.v = {{0, 0, 0}};
  const std::vector<std::span<double>> ps{p}, gs{g};
  for (int i = 0; i < 5; ++i) adam_step(ps, gs, st, cfg);
  CHECK(p == orig);

  std::vector<double> wrong{1.0};
  const std::vector<std::span<double>> ws{wrong};
  CHECK(code_of([&] { adam_step(ps, ws, st, cfg); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("TrainConfig validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 1;
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::InvalidConfig);
  c = {};
  c.overlap_percent = 100.0;
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::InvalidConfig);
  c = {};
  c.epochs = 0;
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("metrics examples") {
  const std::vector<int> truth{0, 1, 2, 3, 4, 0, 1, 2, 3, 4};
  const Metrics perfect = metrics_from_predictions(truth, truth);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.macro_f1 == 1.0);
  for (std::size_t k = 0; k < 5; ++k) CHECK(perfect.confusion[k][k] == 2);

  const std::vector<int> zeros(10, 0);
  const Metrics all0 = metrics_from_predictions(truth, zeros);
  CHECK(all0.accuracy == doctest::Approx(0.2));
  CHECK(all0.precision[0] == doctest::Approx(0.2));
  CHECK(all0.recall[0] == doctest::Approx(1.0));
  CHECK(all0.macro_f1 == doctest::Approx((1.0 / 3.0) / 5.0));
  CHECK(all0.count == 10);
}

TEST_CASE("metrics are consistent with the confusion matrix") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 80;
    std::vector<int> t(n), p(n);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = static_cast<int>(rng() % 5);
      p[i] = rng() % 3 == 0 ? t[i] : static_cast<int>(rng() % 5);
      if (t[i] == p[i]) ++hits;
    }
    const Metrics m = metrics_from_predictions(t, p);
    std::size_t total = 0, trace = 0;
    for (std::size_t a = 0; a < 5; ++a) {
      std::size_t row = 0;
      for (std::size_t b = 0; b < 5; ++b) {
        total += m.confusion[a][b];
        row += m.confusion[a][b];
      }
      trace += m.confusion[a][a];
      if (row > 0) REQUIRE(m.recall[a] == doctest::Approx(static_cast<double>(m.confusion[a][a]) / row));
    }
    REQUIRE(total == n);
    REQUIRE(m.accuracy == static_cast<double>(trace) / static_cast<double>(n));
    REQUIRE(m.accuracy == static_cast<double>(hits) / static_cast<double>(n));
    double mf = 0.0;
    for (double f : m.f1) mf += f;
    REQUIRE(m.macro_f1 == doctest::Approx(mf / 5.0));
  }
}

TEST_CASE("binomial tail and interval") {
  // Hand values: n=4, p=0.5.
  CHECK(binomial_upper_tail(4, 4, 0.5) == doctest::Approx(1.0 / 16.0).epsilon(1e-12));
  CHECK(binomial_upper_tail(4, 3, 0.5) == doctest::Approx(5.0 / 16.0).epsilon(1e-12));
  CHECK(binomial_upper_tail(4, 0, 0.5) == doctest::Approx(1.0));
  CHECK(binomial_cdf(4, 1, 0.5) == doctest::Approx(5.0 / 16.0).epsilon(1e-12));
  // Direct summation oracle for n=60, p=0.2.
  double lower = 0.0, term_sum = 0.0;
  for (int k = 0; k <= 60; ++k) {
    const double term = std::exp(std::lgamma(61.0) - std::lgamma(k + 1.0) - std::lgamma(61.0 - k) +
                                 k * std::log(0.2) + (60 - k) * std::log(0.8));
    term_sum += term;
    if (k <= 10) lower += term;
  }
  CHECK(term_sum == doctest::Approx(1.0));
  CHECK(binomial_cdf(60, 10, 0.2) == doctest::Approx(lower).epsilon(1e-10));

  const CountInterval iv = binomial_interval(60, 0.2, 0.99);
  CHECK(iv.lo <= 12);
  CHECK(iv.hi >= 12);
  CHECK(binomial_cdf(60, iv.lo - 1, 0.2) <= 0.005);
  CHECK(binomial_upper_tail(60, iv.hi + 1, 0.2) <= 0.005);
  CHECK(binomial_cdf(60, iv.lo, 0.2) > 0.005);
  CHECK(binomial_upper_tail(60, iv.hi, 0.2) > 0.005);
}

TEST_CASE("evaluate_metrics rejects an empty set") {
  Model m = init_model(TrainConfig{}, 3, 4);
  CHECK(code_of([&] { evaluate_metrics(m, {}); }) == ErrorCode::EmptyEvalSet);
}

TEST_CASE("embed_dataset keeps trials on their side and dedups windows") {
  Tiny t = tiny();
  const SplitPlan plan = make_split_plan(trial_refs(t.records), 0.8, 2, 42);
  PipelineConfig pipe;
  pipe.preprocess = t.pre;
  const EmbeddedDataset d = embed_dataset(t.records, plan, pipe, t.backbone);
  std::set<std::string> train_ids, test_ids;
  for (const auto& r : plan.train) train_ids.insert(r.trial_id);
  for (const auto& r : plan.test) test_ids.insert(r.trial_id);
  for (const auto& w : d.train) CHECK(train_ids.count(w.trial_id) == 1);
  for (const auto& w : d.train_eval) CHECK(train_ids.count(w.trial_id) == 1);
  for (const auto& w : d.test) CHECK(test_ids.count(w.trial_id) == 1);
  // 8 s trials, 2 s windows: 13 windows at 75% overlap, 4 at 0%.
  CHECK(d.train.size() == 13 * plan.train.size());
  CHECK(d.train_eval.size() == 4 * plan.train.size());
  CHECK(d.test.size() == 4 * plan.test.size());
  CHECK(d.experts == 3);
}

TEST_CASE("cache files are reused and shape checked") {
  Tiny t = tiny();
  test::TempDir dir("cache");
  const SplitPlan plan = make_split_plan(trial_refs(t.records), 0.8, 2, 42);
  PipelineConfig pipe;
  pipe.preprocess = t.pre;
  const auto a = embed_dataset(t.records, plan, pipe, t.backbone, 1, dir.path());
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir.path())) files += e.is_regular_file();
  CHECK(files == 13 * t.records.size() - 13 * plan.test.size() + 4 * plan.test.size());
  const auto b = embed_dataset(t.records, plan, pipe, t.backbone, 1, dir.path());
  REQUIRE(a.test.size() == b.test.size());
  for (std::size_t i = 0; i < a.test.size(); ++i) {
    for (std::size_t k = 0; k < a.test[i].pooled.size(); ++k) {
      REQUIRE(a.test[i].pooled.data[k] == b.test[i].pooled.data[k]);
    }
  }

  BackboneConfig other = t.backbone.config();
  other.n_layers = 3;
  const BackboneParams deeper = init_backbone(other);
  CHECK(code_of([&] { embed_dataset(t.records, plan, pipe, deeper, 1, dir.path()); }) ==
        ErrorCode::ShapeMismatch);
}

TEST_CASE("fit is deterministic, reports folds and leaves the backbone untouched") {
  Tiny t = tiny();
  const FullFitResult a = fit(t.cfg, t.records, t.backbone, t.pre);
  const FullFitResult b = fit(t.cfg, t.records, t.backbone, t.pre);
  CHECK(a.backbone_checksum_before == a.backbone_checksum_after);
  CHECK(a.result.folds.size() == 2);
  REQUIRE(a.result.history.size() == 3 * 3);
  for (std::size_t i = 0; i < a.result.history.size(); ++i) {
    CHECK(a.result.history[i].mean_loss == b.result.history[i].mean_loss);
    CHECK(a.result.history[i].run == b.result.history[i].run);
  }
  CHECK(a.result.test.confusion == b.result.test.confusion);
  CHECK(a.result.model.head.w1 == b.result.model.head.w1);
  CHECK(a.result.trainable_parameters ==
        trainable_count_formula(GatingMode::Conditioned, 3, 8, 16, kNumClasses));

  TrainConfig threaded = t.cfg;
  threaded.threads = 2;
  const FullFitResult c = fit(threaded, t.records, t.backbone, t.pre);
  CHECK(c.result.test.confusion == a.result.test.confusion);
}

TEST_CASE("train_model merges a trailing batch of one") {
  Tiny t = tiny();
  const SplitPlan plan = make_split_plan(trial_refs(t.records), 0.8, 2, 42);
  PipelineConfig pipe;
  pipe.preprocess = t.pre;
  const EmbeddedDataset d = embed_dataset(t.records, plan, pipe, t.backbone);
  TrainConfig cfg = t.cfg;
  cfg.batch_size = 8;
  // 17 windows: batches of 8 and 9, never a lone window.
  std::vector<EmbeddedWindow> w(d.train.begin(), d.train.begin() + 17);
  CHECK_NOTHROW(train_model(cfg, w, d.experts, d.dim, "x"));
  CHECK(code_of([&] { train_model(cfg, std::span(w).first(1), d.experts, d.dim, "x"); }) ==
        ErrorCode::BatchTooSmall);
}

TEST_CASE("report_alphas matches a brute-force mean") {
  Tiny t = tiny();
  const SplitPlan plan = make_split_plan(trial_refs(t.records), 0.8, 2, 42);
  PipelineConfig pipe;
  pipe.preprocess = t.pre;
  const EmbeddedDataset d = embed_dataset(t.records, plan, pipe, t.backbone);

  Model m = init_model(t.cfg, d.experts, d.dim);
  std::mt19937_64 rng(1);
  m.gating.w_g = test::random_matrix(d.experts, d.dim, rng);
  const auto rep = report_alphas(m, d.test);
  std::vector<double> brute(d.experts, 0.0);
  for (const auto& w : d.test) {
    std::vector<double> z(d.experts);
    for (std::size_t i = 0; i < d.experts; ++i) {
      const std::size_t src = i == 0 ? 0 : i - 1;
      for (std::size_t j = 0; j < d.dim; ++j) z[i] += m.gating.w_g(i, j) * w.pooled(src, j);
    }
    double mx = *std::max_element(z.begin(), z.end()), s = 0.0;
    for (auto& v : z) s += (v = std::exp(v - mx));
    for (std::size_t i = 0; i < d.experts; ++i) brute[i] += z[i] / s / static_cast<double>(d.test.size());
  }
  double total = 0.0;
  for (std::size_t i = 0; i < d.experts; ++i) {
    CHECK(rep[i] == doctest::Approx(brute[i]).epsilon(1e-12));
    total += rep[i];
  }
  CHECK(std::abs(total - 1.0) < 1e-6);

  TrainConfig st = t.cfg;
  st.gating = GatingMode::Static;
  const Model sm = init_model(st, 13, 4);
  for (double v : report_alphas(sm, {})) CHECK(v == doctest::Approx(1.0 / 13.0));
}

TEST_CASE("noise sweep rows and vanishing-noise limit") {
  Tiny t = tiny();
  const FullFitResult f = fit(t.cfg, t.records, t.backbone, t.pre);
  const auto windows = make_windows(t.records, f.data.plan.test, t.pre, 0.0);
  const std::vector<double> snrs{300.0, 0.0, -40.0};
  const auto rows = noise_sweep(f.result.model, t.backbone, windows, snrs, 99);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].metrics.confusion == f.result.test.confusion);
  CHECK(rows[0].snr_db == 300.0);
  const auto again = noise_sweep(f.result.model, t.backbone, windows, snrs, 99);
  CHECK(again[2].metrics.confusion == rows[2].metrics.confusion);
}

TEST_CASE("compare_last_layer keeps the baseline gate frozen") {
  Tiny t = tiny();
  const SplitPlan plan = make_split_plan(trial_refs(t.records), 0.8, 2, 42);
  PipelineConfig pipe;
  pipe.preprocess = t.pre;
  const EmbeddedDataset d = embed_dataset(t.records, plan, pipe, t.backbone);
  const CompareReport r = compare_last_layer(t.cfg, d);
  CHECK(r.baseline_alphas_before == r.baseline_alphas_after);
  CHECK(r.baseline_alphas_after.back() == 1.0);
  CHECK(r.last_layer.model.gating.mode == GatingMode::LastOnly);
  CHECK(r.nmoe.model.gating.mode == GatingMode::Conditioned);
  CHECK(r.nmoe.trainable_parameters - r.last_layer.trainable_parameters == d.experts * d.dim);
}
