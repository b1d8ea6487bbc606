#include "emonet/signals.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "emonet/error.hpp"

namespace emonet {

namespace {

constexpr std::array<std::string_view, kNumClasses> kClassNames = {"anger", "fear", "neutral",
                                                                   "sadness", "surprise"};

void require_finite(std::span<const double> x, std::string_view what) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) {
      fail(ErrorCode::NonFiniteInput,
           std::string(what) + ": sample " + std::to_string(i) + " is not finite");
    }
  }
}

}  // namespace

std::string_view class_name(EmotionClass c) { return kClassNames.at(static_cast<std::size_t>(c)); }

EmotionClass parse_class(std::string_view name) {
  for (std::size_t i = 0; i < kClassNames.size(); ++i) {
    if (kClassNames[i] == name) return static_cast<EmotionClass>(i);
  }
  fail(ErrorCode::UnknownLabel, "unknown emotion label '" + std::string(name) + "'");
}

void EcgRecord::validate() const {
  require(fs > 0.0 && std::isfinite(fs), ErrorCode::InvalidArgument,
          "record " + trial_id + ": sampling rate must be positive");
  require(!samples.empty(), ErrorCode::InvalidArgument, "record " + trial_id + " has no samples");
  require_finite(samples, "record " + trial_id);
}

bool BiquadCoeffs::is_stable() const { return std::abs(a2) < 1.0 && std::abs(a1) < 1.0 + a2; }

BiquadCoeffs design_highpass(double fc, double fs) {
  if (!(fs > 0.0) || !(fc > 0.0) || !(fc < fs / 2.0)) {
    fail(ErrorCode::InvalidCutoff, "cutoff " + std::to_string(fc) + " Hz outside (0, " +
                                       std::to_string(fs / 2.0) + ") Hz");
  }
  // Prewarped analog corner, normalized so that s -> (1 - z^-1) / (1 + z^-1).
  const double k = std::tan(std::numbers::pi * fc / fs);
  const double k2 = k * k;
  const double norm = 1.0 / (1.0 + std::numbers::sqrt2 * k + k2);
  BiquadCoeffs c;
  c.b0 = norm;
  c.b1 = -2.0 * norm;
  c.b2 = norm;
  c.a1 = 2.0 * (k2 - 1.0) * norm;
  c.a2 = (1.0 - std::numbers::sqrt2 * k + k2) * norm;
  return c;
}

std::vector<double> apply_iir(const BiquadCoeffs& c, std::span<const double> x) {
  require(!x.empty(), ErrorCode::InvalidArgument, "apply_iir: empty input");
  require_finite(x, "apply_iir");
  std::vector<double> y(x.size());
  double x1 = 0.0, x2 = 0.0, y1 = 0.0, y2 = 0.0;
  for (std::size_t n = 0; n < x.size(); ++n) {
    const double out = c.b0 * x[n] + c.b1 * x1 + c.b2 * x2 - c.a1 * y1 - c.a2 * y2;
    x2 = x1;
    x1 = x[n];
    y2 = y1;
    y1 = out;
    y[n] = out;
  }
  return y;
}

double magnitude_response(const BiquadCoeffs& c, double f, double fs) {
  const double w = 2.0 * std::numbers::pi * f / fs;
  const std::complex<double> z1 = std::polar(1.0, -w);
  const std::complex<double> z2 = z1 * z1;
  const auto num = c.b0 + c.b1 * z1 + c.b2 * z2;
  const auto den = 1.0 + c.a1 * z1 + c.a2 * z2;
  return std::abs(num / den);
}

std::vector<double> zscore(std::span<const double> x) {
  require(x.size() >= 2, ErrorCode::DegenerateSignal, "zscore needs at least 2 samples");
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  require(sd >= 1e-12, ErrorCode::DegenerateSignal, "signal is constant (std < 1e-12)");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) / sd;
  return out;
}

std::vector<Window> segment_overlap(const EcgRecord& record, std::size_t n, std::size_t stride) {
  require(n >= 1, ErrorCode::InvalidArgument, "window length must be >= 1");
  require(stride >= 1, ErrorCode::InvalidArgument, "stride must be >= 1");
  const std::size_t length = record.samples.size();
  if (length < n) {
    fail(ErrorCode::NotEnoughSamples, "record " + record.trial_id + " has " +
                                          std::to_string(length) + " samples, window needs " +
                                          std::to_string(n));
  }
  const std::size_t count = window_count(length, n, stride);
  std::vector<Window> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t start = i * stride;
    Window w;
    w.trial_id = record.trial_id;
    w.label = record.label;
    w.start_index = start;
    w.samples.assign(record.samples.begin() + static_cast<std::ptrdiff_t>(start),
                     record.samples.begin() + static_cast<std::ptrdiff_t>(start + n));
    out.push_back(std::move(w));
  }
  return out;
}

double signal_power(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double p = 0.0;
  for (double v : x) p += v * v;
  return p / static_cast<double>(x.size());
}

Window inject_noise(const Window& w, double snr_db, std::uint64_t seed) {
  const double power = signal_power(w.samples);
  require(power > 0.0, ErrorCode::ZeroPowerSignal,
          "window " + w.trial_id + "@" + std::to_string(w.start_index) + " has zero power");
  const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  Window out = w;
  for (double& v : out.samples) v += noise(rng);
  return out;
}

EcgRecord preprocess_record(const EcgRecord& record, const PreprocessConfig& cfg) {
  record.validate();
  const BiquadCoeffs hp = design_highpass(cfg.cutoff_hz, record.fs);
  EcgRecord out;
  out.trial_id = record.trial_id;
  out.label = record.label;
  out.fs = record.fs;
  out.samples = zscore(apply_iir(hp, record.samples));
  return out;
}

std::size_t window_length(const PreprocessConfig& cfg, double fs) {
  const double n = cfg.window_seconds * fs;
  require(n >= 1.0 && std::abs(n - std::round(n)) < 1e-9, ErrorCode::InvalidConfig,
          "window_seconds * fs must be a positive integer");
  return static_cast<std::size_t>(std::llround(n));
}

std::size_t stride_for_overlap(std::size_t n, double overlap_percent) {
  require(overlap_percent >= 0.0 && overlap_percent < 100.0, ErrorCode::InvalidConfig,
          "overlap must be in [0, 100)");
  const double s = std::floor(static_cast<double>(n) * (1.0 - overlap_percent / 100.0));
  return s < 1.0 ? 1 : static_cast<std::size_t>(s);
}

}  // namespace emonet
