#include "emonet/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "emonet/backbone.hpp"
#include "emonet/dataset.hpp"
#include "emonet/error.hpp"
#include "emonet/metrics.hpp"
#include "emonet/nmoe.hpp"
#include "emonet/train.hpp"

namespace emonet::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string manifest;
  std::string out;
  std::string cache;
  std::string checkpoint;
  std::string config;
  int threads = 1;

  SynthConfig synth;
  std::vector<double> heart_rates;
  std::vector<double> rr_stds;

  BackboneConfig backbone;
  PreprocessConfig pre;
  TrainConfig train;
  std::string gating = "conditioned";

  std::vector<double> snrs = {300.0, 20.0, 10.0, 0.0, -10.0, -40.0};
  std::uint64_t noise_seed = 99;
};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// --- config files ---------------------------------------------------------

// key=value lines ('#' comments) or a flat JSON object.
std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  std::vector<std::pair<std::string, std::string>> items;

  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::Usage, path.string() + ": invalid JSON config: " + e.what());
    }
    if (!j.is_object()) fail(ErrorCode::Usage, path.string() + ": JSON config must be an object");
    for (const auto& [key, value] : j.items()) {
      auto scalar = [&](const nlohmann::json& v) {
        return v.is_string() ? v.get<std::string>() : v.dump();
      };
      if (value.is_array()) {
        std::string joined;
        for (const auto& v : value) joined += (joined.empty() ? "" : ",") + scalar(v);
        items.emplace_back(key, joined);
      } else {
        items.emplace_back(key, scalar(value));
      }
    }
    return items;
  }

  std::istringstream lines(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(lines, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::Usage, path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    items.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return items;
}

// Appends config-file entries as flags unless the same flag was given on the
// command line, so explicit flags always win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
  }
  if (config_path.empty()) return args;
  auto given = [&](const std::string& flag) {
    for (const auto& a : args) {
      if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    }
    return false;
  };
  std::vector<std::string> out = args;
  for (auto [key, value] : read_config_file(config_path)) {
    std::replace(key.begin(), key.end(), '_', '-');
    const std::string flag = "--" + key;
    if (key == "config" || given(flag)) continue;
    out.push_back(flag + "=" + value);
  }
  return out;
}

// --- option wiring --------------------------------------------------------

void add_common(CLI::App* sub, Options& o, bool needs_out) {
  sub->add_option("--config", o.config, "key=value or JSON config file; flags override it");
  sub->add_option("--threads", o.threads, "worker threads (1 = deterministic single-threaded)")
      ->check(CLI::PositiveNumber);
  auto* out = sub->add_option("--out", o.out, "output directory");
  if (needs_out) out->required();
}

void add_preprocess(CLI::App* sub, Options& o) {
  sub->add_option("--cutoff", o.pre.cutoff_hz, "high-pass cutoff in Hz");
  sub->add_option("--window-seconds", o.pre.window_seconds, "window length in seconds");
}

void add_backbone(CLI::App* sub, Options& o) {
  sub->add_option("--d", o.backbone.d, "backbone width");
  sub->add_option("--layers", o.backbone.n_layers, "transformer depth");
  sub->add_option("--heads", o.backbone.n_heads, "attention heads");
  sub->add_option("--ffn-mult", o.backbone.ffn_mult, "feed-forward expansion");
  sub->add_option("--backbone-seed", o.backbone.seed, "seed of the frozen backbone weights");
}

void add_train(CLI::App* sub, Options& o) {
  sub->add_option("--epochs", o.train.epochs)->check(CLI::PositiveNumber);
  sub->add_option("--batch-size", o.train.batch_size);
  sub->add_option("--lr", o.train.learning_rate, "Adam learning rate");
  sub->add_option("--beta1", o.train.beta1);
  sub->add_option("--beta2", o.train.beta2);
  sub->add_option("--adam-eps", o.train.adam_eps);
  sub->add_option("--seed", o.train.seed, "split, init, shuffle and dropout seed");
  sub->add_option("--folds", o.train.folds);
  sub->add_option("--train-fraction", o.train.train_fraction);
  sub->add_option("--overlap", o.train.overlap_percent, "training window overlap in percent");
  sub->add_option("--gating", o.gating, "conditioned | static | last_only")
      ->check(CLI::IsMember({"conditioned", "static", "last_only"}));
  sub->add_option("--hidden", o.train.hidden, "head hidden width");
  sub->add_option("--dropout", o.train.dropout);
  sub->add_option("--cache", o.cache, "embedding cache directory");
}

void add_input(CLI::App* sub, Options& o) {
  sub->add_option("--manifest", o.manifest, "dataset manifest.csv")->required();
}

// --- helpers --------------------------------------------------------------

fs::path prepare_out(const Options& o) {
  const fs::path dir = o.out;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) fail(ErrorCode::IoError, "cannot create output dir " + dir.string());
  return dir;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCode::IoError, "cannot write " + path.string());
  return f;
}

void echo_config(const fs::path& dir, const CLI::App* sub) {
  auto f = open_out(dir / "config.echo");
  f << "# effective configuration for '" << sub->get_name() << "'\n" << sub->config_to_str(true, false);
}

double common_fs(const std::vector<EcgRecord>& records) {
  require(!records.empty(), ErrorCode::InvalidArgument, "dataset is empty");
  const double rate = records.front().fs;
  for (const auto& r : records) {
    require(r.fs == rate, ErrorCode::InvalidArgument, "all trials must share one sampling rate");
  }
  return rate;
}

BackboneConfig resolved_backbone(const Options& o, double rate) {
  BackboneConfig cfg = o.backbone;
  cfg.input_length = window_length(o.pre, rate);
  return cfg;
}

TrainConfig resolved_train(const Options& o) {
  TrainConfig t = o.train;
  t.gating = parse_gating_mode(o.gating);
  t.threads = o.threads;
  return t;
}

CheckpointMeta make_meta(const Options& o, const BackboneParams& bb, const TrainConfig& t) {
  const auto& c = bb.config();
  return {
      {"backbone.d", std::to_string(c.d)},
      {"backbone.layers", std::to_string(c.n_layers)},
      {"backbone.heads", std::to_string(c.n_heads)},
      {"backbone.ffn_mult", std::to_string(c.ffn_mult)},
      {"backbone.seed", std::to_string(c.seed)},
      {"backbone.input_length", std::to_string(c.input_length)},
      {"backbone.checksum", std::to_string(bb.checksum())},
      {"pre.cutoff_hz", num(o.pre.cutoff_hz)},
      {"pre.window_seconds", num(o.pre.window_seconds)},
      {"train.overlap", num(t.overlap_percent)},
      {"split.seed", std::to_string(t.seed)},
      {"split.train_fraction", num(t.train_fraction)},
      {"split.folds", std::to_string(t.folds)},
      {"gating", std::string(gating_mode_name(t.gating))},
  };
}

const std::string& meta_get(const CheckpointMeta& meta, const std::string& key) {
  const auto it = meta.find(key);
  if (it == meta.end()) fail(ErrorCode::FormatError, "checkpoint metadata lacks '" + key + "'");
  return it->second;
}

// Everything evaluation needs, rebuilt from a checkpoint and its metadata.
struct LoadedRun {
  Model model;
  std::vector<EcgRecord> records;
  SplitPlan plan;
  PreprocessConfig pre;
  BackboneParams backbone;
};

LoadedRun load_run(const Options& o) {
  CheckpointMeta meta;
  Model model = load_checkpoint(o.checkpoint, &meta);
  BackboneConfig bc;
  bc.d = std::stoul(meta_get(meta, "backbone.d"));
  bc.n_layers = std::stoul(meta_get(meta, "backbone.layers"));
  bc.n_heads = std::stoul(meta_get(meta, "backbone.heads"));
  bc.ffn_mult = std::stoul(meta_get(meta, "backbone.ffn_mult"));
  bc.seed = std::stoull(meta_get(meta, "backbone.seed"));
  bc.input_length = std::stoul(meta_get(meta, "backbone.input_length"));
  PreprocessConfig pre;
  pre.cutoff_hz = std::stod(meta_get(meta, "pre.cutoff_hz"));
  pre.window_seconds = std::stod(meta_get(meta, "pre.window_seconds"));

  auto records = load_dataset(o.manifest);
  BackboneParams bb = init_backbone(bc);
  if (std::to_string(bb.checksum()) != meta_get(meta, "backbone.checksum")) {
    fail(ErrorCode::FormatError, "rebuilt backbone does not match the checkpoint checksum");
  }
  require(window_length(pre, common_fs(records)) == bc.input_length, ErrorCode::ShapeMismatch,
          "dataset sampling rate does not match the checkpoint's window length");
  SplitPlan plan = make_split_plan(trial_refs(records), std::stod(meta_get(meta, "split.train_fraction")),
                                   std::stoi(meta_get(meta, "split.folds")),
                                   std::stoull(meta_get(meta, "split.seed")));
  return {std::move(model), std::move(records), std::move(plan), pre, std::move(bb)};
}

// --- writers --------------------------------------------------------------

const char* kMetricsHeader =
    "scope,fold,n,accuracy,macro_f1,f1_anger,f1_fear,f1_neutral,f1_sadness,f1_surprise\n";

void metrics_row(std::ostream& f, const std::string& scope, const std::string& fold, const Metrics& m) {
  f << scope << ',' << fold << ',' << m.count << ',' << num(m.accuracy) << ',' << num(m.macro_f1);
  for (double v : m.f1) f << ',' << num(v);
  f << '\n';
}

void write_confusion(const fs::path& path, const Metrics& m) {
  auto f = open_out(path);
  f << "true\\pred";
  for (auto c : kAllClasses) f << ',' << class_name(c);
  f << '\n';
  for (std::size_t t = 0; t < kNumClasses; ++t) {
    f << class_name(static_cast<EmotionClass>(t));
    for (std::size_t p = 0; p < kNumClasses; ++p) f << ',' << m.confusion[t][p];
    f << '\n';
  }
}

void write_fit_metrics(const fs::path& path, const FitResult& r) {
  auto f = open_out(path);
  f << kMetricsHeader;
  for (const auto& fold : r.folds) metrics_row(f, "val", std::to_string(fold.fold), fold.val);
  f << "val_mean,-,-," << num(r.val_accuracy_mean) << ',' << num(r.val_f1_mean) << ",,,,,\n";
  f << "val_std,-,-," << num(r.val_accuracy_std) << ',' << num(r.val_f1_std) << ",,,,,\n";
  metrics_row(f, "test", "-", r.test);
}

void write_history(const fs::path& path, const std::vector<HistoryRow>& rows) {
  auto f = open_out(path);
  f << "run,epoch,mean_loss\n";
  for (const auto& h : rows) f << h.run << ',' << h.epoch << ',' << num(h.mean_loss) << '\n';
}

void write_alphas(const fs::path& dir, const std::vector<double>& alphas) {
  {
    auto f = open_out(dir / "alphas.csv");
    f << "expert,alpha\n";
    for (std::size_t i = 0; i < alphas.size(); ++i) f << i << ',' << num(alphas[i]) << '\n';
  }
  const double width = 40.0 * static_cast<double>(alphas.size()) + 80.0;
  const double height = 320.0, plot_h = 240.0, base_y = 280.0;
  const double top = std::max(1e-12, *std::max_element(alphas.begin(), alphas.end()));
  auto f = open_out(dir / "alphas.svg");
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\""
    << num(height) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  f << "<text x=\"10\" y=\"20\">expert weights (alpha)</text>\n";
  f << "<line x1=\"50\" y1=\"" << num(base_y) << "\" x2=\"" << num(width - 20) << "\" y2=\""
    << num(base_y) << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    const double h = plot_h * alphas[i] / top;
    const double x = 60.0 + 40.0 * static_cast<double>(i);
    f << "<rect x=\"" << num(x) << "\" y=\"" << num(base_y - h) << "\" width=\"28\" height=\""
      << num(h) << "\" fill=\"steelblue\"><title>" << num(alphas[i]) << "</title></rect>\n";
    f << "<text x=\"" << num(x + 14) << "\" y=\"" << num(base_y + 14)
      << "\" text-anchor=\"middle\">" << i << "</text>\n";
  }
  f << "</svg>\n";
}

std::vector<EmbeddedWindow> alpha_windows(const EmbeddedDataset& d) {
  std::vector<EmbeddedWindow> all = d.train_eval;
  all.insert(all.end(), d.test.begin(), d.test.end());
  return all;
}

// --- subcommands ----------------------------------------------------------

int cmd_synth(Options& o, std::ostream& out) {
  SynthConfig cfg = o.synth;
  if (!o.heart_rates.empty()) {
    require(o.heart_rates.size() == kNumClasses, ErrorCode::InvalidConfig, "--hr needs 5 values");
    std::copy(o.heart_rates.begin(), o.heart_rates.end(), cfg.heart_rate_bpm.begin());
  }
  if (!o.rr_stds.empty()) {
    require(o.rr_stds.size() == kNumClasses, ErrorCode::InvalidConfig, "--rr-std needs 5 values");
    std::copy(o.rr_stds.begin(), o.rr_stds.end(), cfg.rr_std_s.begin());
  }
  const auto dir = prepare_out(o);
  const auto records = generate_dataset(cfg);
  const auto manifest = write_dataset(records, dir);
  out << "wrote " << manifest.entries.size() << " trials to " << (dir / kManifestName).string() << '\n';
  return kExitOk;
}

int cmd_preprocess(Options& o, std::ostream& out) {
  const auto dir = prepare_out(o);
  const auto records = load_dataset(o.manifest);
  auto f = open_out(dir / "windows.csv");
  f << "trial_id,label,samples,window_length,stride,windows\n";
  std::size_t total = 0;
  for (const auto& r : records) {
    const EcgRecord clean = preprocess_record(r, o.pre);
    const std::size_t n = window_length(o.pre, clean.fs);
    const std::size_t stride = stride_for_overlap(n, o.train.overlap_percent);
    const auto ws = segment_overlap(clean, n, stride);
    total += ws.size();
    f << r.trial_id << ',' << class_name(r.label) << ',' << clean.samples.size() << ',' << n << ','
      << stride << ',' << ws.size() << '\n';
  }
  out << records.size() << " trials, " << total << " windows at " << num(o.train.overlap_percent)
      << "% overlap\n";
  return kExitOk;
}

int cmd_embed(Options& o, std::ostream& out) {
  require(!o.cache.empty(), ErrorCode::Usage, "embed needs --cache");
  const auto records = load_dataset(o.manifest);
  const TrainConfig t = resolved_train(o);
  const BackboneParams bb = init_backbone(resolved_backbone(o, common_fs(records)));
  const SplitPlan plan = make_split_plan(trial_refs(records), t.train_fraction, t.folds, t.seed);
  PipelineConfig pipe;
  pipe.preprocess = o.pre;
  pipe.overlap_percent = t.overlap_percent;
  const auto data = embed_dataset(records, plan, pipe, bb, o.threads, fs::path(o.cache));
  out << "cached embeddings for " << data.train.size() << " training and " << data.test.size()
      << " test windows in " << o.cache << '\n';
  return kExitOk;
}

int cmd_train(Options& o, const CLI::App* sub, std::ostream& out) {
  const auto dir = prepare_out(o);
  const auto records = load_dataset(o.manifest);
  const TrainConfig t = resolved_train(o);
  const BackboneParams bb = init_backbone(resolved_backbone(o, common_fs(records)));
  std::optional<fs::path> cache;
  if (!o.cache.empty()) cache = o.cache;
  const FullFitResult r = fit(t, records, bb, o.pre, cache);
  require(r.backbone_checksum_before == r.backbone_checksum_after, ErrorCode::InvalidArgument,
          "backbone parameters changed during training");

  echo_config(dir, sub);
  write_fit_metrics(dir / "metrics.csv", r.result);
  write_confusion(dir / "confusion.csv", r.result.test);
  write_history(dir / "history.csv", r.result.history);
  write_alphas(dir, report_alphas(r.result.model, alpha_windows(r.data)));
  save_checkpoint(r.result.model, make_meta(o, bb, t), dir / "model.nmoe");
  {
    auto f = open_out(dir / "split.csv");
    f << "trial_id,label,side,fold\n";
    for (std::size_t k = 0; k < r.data.plan.folds.size(); ++k) {
      for (const auto& tr : r.data.plan.folds[k]) {
        f << tr.trial_id << ',' << class_name(tr.label) << ",train," << k << '\n';
      }
    }
    for (const auto& tr : r.data.plan.test) f << tr.trial_id << ',' << class_name(tr.label) << ",test,-\n";
  }
  {
    auto f = open_out(dir / "model_info.txt");
    f << "trainable_parameters=" << r.result.trainable_parameters << '\n'
      << "trainable_parameters_formula="
      << trainable_count_formula(t.gating, bb.config().experts(), bb.config().d, t.hidden, kNumClasses)
      << '\n'
      << "backbone_parameters=" << bb.parameter_count() << '\n'
      << "backbone_checksum_before=" << r.backbone_checksum_before << '\n'
      << "backbone_checksum_after=" << r.backbone_checksum_after << '\n'
      << "train_windows=" << r.data.train.size() << '\n'
      << "test_windows=" << r.data.test.size() << '\n';
  }
  out << "val accuracy " << num(r.result.val_accuracy_mean) << " +- " << num(r.result.val_accuracy_std)
      << ", test accuracy " << num(r.result.test.accuracy) << ", test macro-F1 "
      << num(r.result.test.macro_f1) << " (" << r.result.trainable_parameters
      << " trainable parameters)\n";
  return kExitOk;
}

int cmd_eval(Options& o, const CLI::App* sub, std::ostream& out) {
  const auto dir = prepare_out(o);
  LoadedRun run = load_run(o);
  const auto test_w = make_windows(run.records, run.plan.test, run.pre, 0.0);
  const auto embedded = embed_windows(test_w, run.backbone, o.threads);
  const Metrics m = evaluate_metrics(run.model, embedded);
  echo_config(dir, sub);
  {
    auto f = open_out(dir / "metrics.csv");
    f << kMetricsHeader;
    metrics_row(f, "test", "-", m);
  }
  write_confusion(dir / "confusion.csv", m);
  out << "test accuracy " << num(m.accuracy) << ", macro-F1 " << num(m.macro_f1) << " over "
      << m.count << " windows\n";
  return kExitOk;
}

int cmd_sweep(Options& o, const CLI::App* sub, std::ostream& out) {
  const auto dir = prepare_out(o);
  LoadedRun run = load_run(o);
  const auto test_w = make_windows(run.records, run.plan.test, run.pre, 0.0);
  const auto rows = noise_sweep(run.model, run.backbone, test_w, o.snrs, o.noise_seed, o.threads);
  echo_config(dir, sub);
  auto f = open_out(dir / "noise_sweep.csv");
  f << "snr_db,n,accuracy,macro_f1,f1_anger,f1_fear,f1_neutral,f1_sadness,f1_surprise\n";
  for (const auto& r : rows) {
    f << num(r.snr_db) << ',' << r.metrics.count << ',' << num(r.metrics.accuracy) << ','
      << num(r.metrics.macro_f1);
    for (double v : r.metrics.f1) f << ',' << num(v);
    f << '\n';
  }
  out << "noise sweep over " << rows.size() << " SNR levels written to "
      << (dir / "noise_sweep.csv").string() << '\n';
  return kExitOk;
}

int cmd_compare(Options& o, const CLI::App* sub, std::ostream& out) {
  const auto dir = prepare_out(o);
  const auto records = load_dataset(o.manifest);
  const TrainConfig t = resolved_train(o);
  const BackboneParams bb = init_backbone(resolved_backbone(o, common_fs(records)));
  const SplitPlan plan = make_split_plan(trial_refs(records), t.train_fraction, t.folds, t.seed);
  PipelineConfig pipe;
  pipe.preprocess = o.pre;
  pipe.overlap_percent = t.overlap_percent;
  std::optional<fs::path> cache;
  if (!o.cache.empty()) cache = o.cache;
  const auto data = embed_dataset(records, plan, pipe, bb, o.threads, cache);
  const CompareReport rep = compare_last_layer(t, data);

  echo_config(dir, sub);
  auto f = open_out(dir / "compare.txt");
  f << "# all experts (gated fusion) vs. final expert only, identical seeds and protocol\n";
  f << "strategy,val_accuracy,val_macro_f1,test_accuracy,test_macro_f1,trainable_parameters\n";
  auto row = [&](const char* name, const FitResult& r) {
    f << name << ',' << num(r.val_accuracy_mean) << ',' << num(r.val_f1_mean) << ','
      << num(r.test.accuracy) << ',' << num(r.test.macro_f1) << ',' << r.trainable_parameters << '\n';
  };
  row("nmoe", rep.nmoe);
  row("last_layer", rep.last_layer);
  f << "# baseline_alpha_unchanged=" << (rep.baseline_alphas_before == rep.baseline_alphas_after ? "true" : "false")
    << '\n';
  out << "nmoe test accuracy " << num(rep.nmoe.test.accuracy) << " vs last-layer "
      << num(rep.last_layer.test.accuracy) << '\n';
  return kExitOk;
}

int cmd_report_alphas(Options& o, const CLI::App* sub, std::ostream& out) {
  const auto dir = prepare_out(o);
  LoadedRun run = load_run(o);
  // Same window order as the report written by train: train trials, then test.
  std::vector<TrialRef> ordered = run.plan.train;
  ordered.insert(ordered.end(), run.plan.test.begin(), run.plan.test.end());
  const auto windows = make_windows(run.records, ordered, run.pre, 0.0);
  const auto embedded = embed_windows(windows, run.backbone, o.threads);
  const auto alphas = report_alphas(run.model, embedded);
  echo_config(dir, sub);
  write_alphas(dir, alphas);
  out << "wrote " << alphas.size() << " expert weights to " << (dir / "alphas.csv").string() << '\n';
  return kExitOk;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Usage: return kExitUsage;
    case ErrorCode::IoError: return kExitIo;
    default: return kExitDomain;
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"ECG emotion recognition with gated fusion over frozen encoder layers", "emonet"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  auto* synth = app.add_subcommand("synth", "generate a synthetic 5-class ECG dataset");
  add_common(synth, o, true);
  synth->add_option("--trials-per-class", o.synth.trials_per_class)->check(CLI::PositiveNumber);
  synth->add_option("--seed", o.synth.seed, "dataset seed");
  synth->add_option("--duration", o.synth.duration_s, "trial duration in seconds");
  synth->add_option("--fs", o.synth.fs, "sampling rate in Hz");
  synth->add_option("--hr", o.heart_rates, "five per-class mean heart rates (bpm)")->delimiter(',');
  synth->add_option("--rr-std", o.rr_stds, "five per-class RR-interval std (s)")->delimiter(',');

  auto* pre = app.add_subcommand("preprocess", "filter, normalize and segment; emit window stats");
  add_common(pre, o, true);
  add_input(pre, o);
  add_preprocess(pre, o);
  pre->add_option("--overlap", o.train.overlap_percent, "window overlap in percent");

  auto* embed = app.add_subcommand("embed", "fill the embedding cache");
  add_common(embed, o, false);
  add_input(embed, o);
  add_preprocess(embed, o);
  add_backbone(embed, o);
  add_train(embed, o);

  auto* train = app.add_subcommand("train", "cross-validate, fit and write a checkpoint");
  add_common(train, o, true);
  add_input(train, o);
  add_preprocess(train, o);
  add_backbone(train, o);
  add_train(train, o);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the held-out trials");
  add_common(eval, o, true);
  add_input(eval, o);
  eval->add_option("--checkpoint", o.checkpoint)->required();

  auto* sweep = app.add_subcommand("sweep-noise", "accuracy under additive Gaussian noise");
  add_common(sweep, o, true);
  add_input(sweep, o);
  sweep->add_option("--checkpoint", o.checkpoint)->required();
  sweep->add_option("--snr", o.snrs, "SNR levels in dB")->delimiter(',');
  sweep->add_option("--noise-seed", o.noise_seed);

  auto* compare = app.add_subcommand("compare", "all experts vs. last expert only");
  add_common(compare, o, true);
  add_input(compare, o);
  add_preprocess(compare, o);
  add_backbone(compare, o);
  add_train(compare, o);

  auto* alphas = app.add_subcommand("report-alphas", "per-expert weight table and bar chart");
  add_common(alphas, o, true);
  add_input(alphas, o);
  alphas->add_option("--checkpoint", o.checkpoint)->required();

  try {
    std::vector<std::string> expanded = expand_config(args);
    std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << '\n' << app.help();
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  }

  try {
    if (synth->parsed()) return cmd_synth(o, out);
    if (pre->parsed()) return cmd_preprocess(o, out);
    if (embed->parsed()) return cmd_embed(o, out);
    if (train->parsed()) return cmd_train(o, train, out);
    if (eval->parsed()) return cmd_eval(o, eval, out);
    if (sweep->parsed()) return cmd_sweep(o, sweep, out);
    if (compare->parsed()) return cmd_compare(o, compare, out);
    if (alphas->parsed()) return cmd_report_alphas(o, alphas, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitDomain;
  }
  err << "error: no subcommand\n" << app.help();
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace emonet::cli
