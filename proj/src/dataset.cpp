#include "emonet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "emonet/error.hpp"
#include "emonet/seed.hpp"

namespace emonet {

namespace fs = std::filesystem;

namespace {

struct Wave {
  double offset_s;
  double width_s;
  double amplitude;
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

double parse_number(const std::string& text, const fs::path& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::FormatError, where.string() + ": '" + text + "' is not a number");
  }
}

std::string format_double(double v, int digits) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::ifstream open_for_read(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  return in;
}

}  // namespace

void SynthConfig::validate() const {
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    require(heart_rate_bpm[c] >= 30.0 && heart_rate_bpm[c] <= 200.0, ErrorCode::InvalidConfig,
            "heart rate must be within [30, 200] bpm");
    require(rr_std_s[c] >= 0.0 && std::isfinite(rr_std_s[c]), ErrorCode::InvalidConfig,
            "RR std must be non-negative");
  }
  require(fs > 0.0 && duration_s > 0.0, ErrorCode::InvalidConfig,
          "duration and fs must be positive");
  const double n = duration_s * fs;
  require(std::abs(n - std::round(n)) < 1e-9, ErrorCode::InvalidConfig,
          "duration * fs must be an integer sample count");
  require(trials_per_class >= 1, ErrorCode::InvalidConfig, "trials_per_class must be >= 1");
}

std::size_t SynthConfig::sample_count() const {
  return static_cast<std::size_t>(std::llround(duration_s * fs));
}

EcgRecord generate_trial(EmotionClass cls, const SynthConfig& cfg, std::uint64_t trial_seed) {
  cfg.validate();
  const auto c = static_cast<std::size_t>(cls);
  std::mt19937_64 rng(derive_seed({trial_seed, static_cast<std::uint64_t>(c)}));
  std::normal_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  const std::size_t n = cfg.sample_count();
  const double mean_rr = 60.0 / cfg.heart_rate_bpm[c];
  const double rr_std = cfg.rr_std_s[c];
  const double duration = static_cast<double>(n) / cfg.fs;

  // Beat times: start one beat before t=0 so the first P/T waves are complete.
  std::vector<double> beats;
  double t = -mean_rr * uniform(rng);
  while (t < duration + 0.5) {
    beats.push_back(t);
    t += std::max(0.25, mean_rr + rr_std * unit(rng));
  }

  EcgRecord rec;
  rec.label = cls;
  rec.fs = cfg.fs;
  rec.samples.assign(n, 0.0);

  for (std::size_t b = 0; b < beats.size(); ++b) {
    const double rr = b + 1 < beats.size() ? beats[b + 1] - beats[b] : mean_rr;
    const std::array<Wave, 5> waves = {{
        {-0.20, 0.025, cfg.amp_p},
        {-0.035, 0.010, -0.12 * cfg.amp_qrs},
        {0.0, 0.012, cfg.amp_qrs},
        {0.035, 0.010, -0.25 * cfg.amp_qrs},
        {0.25 * std::sqrt(rr), 0.045, cfg.amp_t},
    }};
    for (const Wave& w : waves) {
      const double centre = beats[b] + w.offset_s;
      const double lo = std::max(0.0, std::ceil((centre - 5.0 * w.width_s) * cfg.fs));
      const double hi = std::min(static_cast<double>(n) - 1.0,
                                 std::floor((centre + 5.0 * w.width_s) * cfg.fs));
      for (double i = lo; i <= hi; i += 1.0) {
        const double dt = i / cfg.fs - centre;
        rec.samples[static_cast<std::size_t>(i)] +=
            w.amplitude * std::exp(-0.5 * dt * dt / (w.width_s * w.width_s));
      }
    }
  }

  const double phase1 = 2.0 * std::numbers::pi * uniform(rng);
  const double phase2 = 2.0 * std::numbers::pi * uniform(rng);
  for (std::size_t i = 0; i < n; ++i) {
    const double ti = static_cast<double>(i) / cfg.fs;
    rec.samples[i] += cfg.wander_mv * (std::sin(2.0 * std::numbers::pi * 0.25 * ti + phase1) +
                                       0.5 * std::sin(2.0 * std::numbers::pi * 0.05 * ti + phase2));
    rec.samples[i] += cfg.noise_mv * unit(rng);
  }
  return rec;
}

std::vector<EcgRecord> generate_dataset(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<EcgRecord> out;
  out.reserve(kNumClasses * static_cast<std::size_t>(cfg.trials_per_class));
  for (EmotionClass cls : kAllClasses) {
    for (int j = 0; j < cfg.trials_per_class; ++j) {
      EcgRecord rec = generate_trial(
          cls, cfg, derive_seed({cfg.seed, static_cast<std::uint64_t>(class_index(cls)),
                                 static_cast<std::uint64_t>(j)}));
      char id[64];
      std::snprintf(id, sizeof id, "%s_%03d", std::string(class_name(cls)).c_str(), j);
      rec.trial_id = id;
      out.push_back(std::move(rec));
    }
  }
  return out;
}

DatasetManifest write_dataset(const std::vector<EcgRecord>& records, const fs::path& dir) {
  require(!records.empty(), ErrorCode::InvalidArgument, "write_dataset: no records");
  std::set<std::string> seen;
  for (const auto& r : records) {
    r.validate();
    require(seen.insert(r.trial_id).second, ErrorCode::InvalidArgument,
            "duplicate trial id " + r.trial_id);
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());

  DatasetManifest manifest;
  for (const auto& r : records) {
    const std::string file = r.trial_id + ".csv";
    std::ofstream out(dir / file, std::ios::binary);
    if (!out) fail(ErrorCode::IoError, "cannot write " + (dir / file).string());
    out << "trial_id,label,fs\n"
        << r.trial_id << ',' << class_name(r.label) << ',' << format_double(r.fs, 17) << '\n';
    for (double v : r.samples) out << format_double(static_cast<float>(v), 9) << '\n';
    if (!out) fail(ErrorCode::IoError, "write failed for " + (dir / file).string());
    manifest.entries.push_back({file, r.trial_id, r.label, r.fs});
  }

  std::ofstream out(dir / kManifestName, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + (dir / kManifestName).string());
  out << "# emonet-manifest " << manifest.format_version << '\n' << "path,trial_id,label,fs\n";
  for (const auto& e : manifest.entries) {
    out << e.path << ',' << e.trial_id << ',' << class_name(e.label) << ','
        << format_double(e.fs, 17) << '\n';
  }
  if (!out) fail(ErrorCode::IoError, "write failed for " + (dir / kManifestName).string());
  return manifest;
}

DatasetManifest read_manifest(const fs::path& manifest_path) {
  if (!fs::is_regular_file(manifest_path)) {
    fail(ErrorCode::IoError, "manifest not found: " + manifest_path.string());
  }
  auto in = open_for_read(manifest_path);
  std::string line;
  DatasetManifest m;
  if (!std::getline(in, line)) fail(ErrorCode::FormatError, manifest_path.string() + ": empty");
  strip_cr(line);
  const std::string magic = "# emonet-manifest ";
  if (line.rfind(magic, 0) != 0) {
    fail(ErrorCode::FormatError, manifest_path.string() + ": missing manifest version line");
  }
  m.format_version = static_cast<int>(parse_number(line.substr(magic.size()), manifest_path));
  if (m.format_version != 1) {
    fail(ErrorCode::FormatError,
         manifest_path.string() + ": unsupported version " + std::to_string(m.format_version));
  }
  if (!std::getline(in, line)) fail(ErrorCode::FormatError, manifest_path.string() + ": no header");
  strip_cr(line);
  if (line != "path,trial_id,label,fs") {
    fail(ErrorCode::FormatError, manifest_path.string() + ": bad header '" + line + "'");
  }
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    strip_cr(line);
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 4) {
      fail(ErrorCode::FormatError, manifest_path.string() + ": expected 4 columns, got " +
                                       std::to_string(cells.size()));
    }
    ManifestEntry e{cells[0], cells[1], parse_class(cells[2]), parse_number(cells[3], manifest_path)};
    require(ids.insert(e.trial_id).second, ErrorCode::FormatError,
            manifest_path.string() + ": duplicate trial id " + e.trial_id);
    m.entries.push_back(std::move(e));
  }
  return m;
}

EcgRecord read_trial_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) fail(ErrorCode::IoError, "trial file not found: " + path.string());
  auto in = open_for_read(path);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::FormatError, path.string() + ": empty file");
  strip_cr(line);
  if (line != "trial_id,label,fs") {
    fail(ErrorCode::FormatError, path.string() + ": bad header '" + line + "'");
  }
  if (!std::getline(in, line)) fail(ErrorCode::FormatError, path.string() + ": missing values line");
  strip_cr(line);
  const auto cells = split_csv(line);
  if (cells.size() != 3) {
    fail(ErrorCode::FormatError,
         path.string() + ": expected 3 columns, got " + std::to_string(cells.size()));
  }
  EcgRecord rec;
  rec.trial_id = cells[0];
  rec.label = parse_class(cells[1]);
  rec.fs = parse_number(cells[2], path);
  while (std::getline(in, line)) {
    strip_cr(line);
    if (line.empty()) continue;
    rec.samples.push_back(parse_number(line, path));
  }
  rec.validate();
  return rec;
}

std::vector<EcgRecord> load_dataset(const fs::path& manifest_path) {
  const DatasetManifest m = read_manifest(manifest_path);
  const fs::path base = manifest_path.parent_path();
  std::vector<EcgRecord> out;
  out.reserve(m.entries.size());
  for (const auto& e : m.entries) {
    EcgRecord rec = read_trial_file(base / e.path);
    if (rec.trial_id != e.trial_id || rec.label != e.label || rec.fs != e.fs) {
      fail(ErrorCode::FormatError, (base / e.path).string() + ": header disagrees with manifest");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<TrialRef> trial_refs(const DatasetManifest& manifest) {
  std::vector<TrialRef> out;
  for (const auto& e : manifest.entries) out.push_back({e.trial_id, e.label});
  return out;
}

std::vector<TrialRef> trial_refs(const std::vector<EcgRecord>& records) {
  std::vector<TrialRef> out;
  for (const auto& r : records) out.push_back({r.trial_id, r.label});
  return out;
}

namespace {

// Trials grouped per class, sorted by id so input order does not matter.
std::array<std::vector<TrialRef>, kNumClasses> by_class(const std::vector<TrialRef>& trials) {
  std::array<std::vector<TrialRef>, kNumClasses> groups;
  for (const auto& t : trials) groups[static_cast<std::size_t>(t.label)].push_back(t);
  for (auto& g : groups) {
    std::sort(g.begin(), g.end(),
              [](const TrialRef& a, const TrialRef& b) { return a.trial_id < b.trial_id; });
  }
  return groups;
}

}  // namespace

SplitPlan split_stratified(const std::vector<TrialRef>& trials, double train_fraction,
                           std::uint64_t seed) {
  require(train_fraction > 0.0 && train_fraction < 1.0, ErrorCode::InvalidConfig,
          "train_fraction must be in (0, 1)");
  auto groups = by_class(trials);
  SplitPlan plan;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto& g = groups[c];
    if (g.empty()) continue;
    if (g.size() < 2) {
      fail(ErrorCode::TooFewTrials,
           "class " + std::string(class_name(static_cast<EmotionClass>(c))) +
               " needs at least 2 trials for a train/test split");
    }
    std::mt19937_64 rng(derive_seed({seed, 0x5117ULL, c}));
    std::shuffle(g.begin(), g.end(), rng);
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(g.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, g.size() - 1);
    plan.train.insert(plan.train.end(), g.begin(), g.begin() + static_cast<std::ptrdiff_t>(n_train));
    plan.test.insert(plan.test.end(), g.begin() + static_cast<std::ptrdiff_t>(n_train), g.end());
  }
  require(!plan.train.empty(), ErrorCode::TooFewTrials, "no trials to split");
  return plan;
}

std::vector<std::vector<TrialRef>> make_folds(const std::vector<TrialRef>& train, int k,
                                              std::uint64_t seed) {
  require(k >= 2, ErrorCode::InvalidConfig, "fold count must be >= 2");
  auto groups = by_class(train);
  std::vector<std::vector<TrialRef>> folds(static_cast<std::size_t>(k));
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto& g = groups[c];
    if (g.empty()) continue;
    if (g.size() < static_cast<std::size_t>(k)) {
      fail(ErrorCode::TooFewTrials, "class " +
                                        std::string(class_name(static_cast<EmotionClass>(c))) +
                                        " has " + std::to_string(g.size()) +
                                        " train trials, fewer than k=" + std::to_string(k));
    }
    std::mt19937_64 rng(derive_seed({seed, 0xf01dULL, c}));
    std::shuffle(g.begin(), g.end(), rng);
    for (std::size_t i = 0; i < g.size(); ++i) folds[i % folds.size()].push_back(g[i]);
  }
  return folds;
}

SplitPlan make_split_plan(const std::vector<TrialRef>& trials, double train_fraction, int k,
                          std::uint64_t seed) {
  SplitPlan plan = split_stratified(trials, train_fraction, seed);
  plan.folds = make_folds(plan.train, k, seed);
  return plan;
}

}  // namespace emonet
