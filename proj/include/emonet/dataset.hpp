#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "emonet/signals.hpp"

namespace emonet {

// Class-conditional synthetic ECG. Beats are PQRST Gaussian bumps placed at
// RR intervals drawn from N(60/hr, rr_std), on top of slow baseline wander and
// white measurement noise.
struct SynthConfig {
  std::array<double, kNumClasses> heart_rate_bpm = {60.0, 75.0, 90.0, 105.0, 120.0};
  std::array<double, kNumClasses> rr_std_s = {0.10, 0.08, 0.06, 0.04, 0.02};
  double amp_p = 0.15;
  double amp_qrs = 1.0;
  double amp_t = 0.30;
  double wander_mv = 0.10;
  double noise_mv = 0.02;
  double duration_s = 30.0;
  double fs = 256.0;
  int trials_per_class = 20;
  std::uint64_t seed = 7;

  void validate() const;
  std::size_t sample_count() const;
};

EcgRecord generate_trial(EmotionClass cls, const SynthConfig& cfg, std::uint64_t trial_seed);

// trials_per_class records per class, ids "<label>_<nnn>".
std::vector<EcgRecord> generate_dataset(const SynthConfig& cfg);

struct ManifestEntry {
  std::string path;  // relative to the manifest directory
  std::string trial_id;
  EmotionClass label = EmotionClass::Neutral;
  double fs = 256.0;
};

struct DatasetManifest {
  int format_version = 1;
  std::vector<ManifestEntry> entries;
};

inline constexpr const char* kManifestName = "manifest.csv";

// Writes one text file per trial plus manifest.csv into dir.
DatasetManifest write_dataset(const std::vector<EcgRecord>& records,
                              const std::filesystem::path& dir);
DatasetManifest read_manifest(const std::filesystem::path& manifest_path);
EcgRecord read_trial_file(const std::filesystem::path& path);
std::vector<EcgRecord> load_dataset(const std::filesystem::path& manifest_path);

struct TrialRef {
  std::string trial_id;
  EmotionClass label = EmotionClass::Neutral;
};

struct SplitPlan {
  std::vector<TrialRef> train;
  std::vector<TrialRef> test;
  std::vector<std::vector<TrialRef>> folds;  // partition of train
};

std::vector<TrialRef> trial_refs(const DatasetManifest& manifest);
std::vector<TrialRef> trial_refs(const std::vector<EcgRecord>& records);

// Per class: round(train_fraction * count) trials go to train. Folds are left
// empty; see make_folds / make_split_plan.
SplitPlan split_stratified(const std::vector<TrialRef>& trials, double train_fraction,
                           std::uint64_t seed);

std::vector<std::vector<TrialRef>> make_folds(const std::vector<TrialRef>& train, int k,
                                              std::uint64_t seed);

SplitPlan make_split_plan(const std::vector<TrialRef>& trials, double train_fraction, int k,
                          std::uint64_t seed);

}  // namespace emonet
