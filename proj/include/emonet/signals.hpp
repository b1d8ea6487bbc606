#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace emonet {

enum class EmotionClass : int { Anger = 0, Fear = 1, Neutral = 2, Sadness = 3, Surprise = 4 };

inline constexpr std::size_t kNumClasses = 5;
inline constexpr std::array<EmotionClass, kNumClasses> kAllClasses = {
    EmotionClass::Anger, EmotionClass::Fear, EmotionClass::Neutral, EmotionClass::Sadness,
    EmotionClass::Surprise};

std::string_view class_name(EmotionClass c);
// Throws UnknownLabel for anything outside the five lowercase names.
EmotionClass parse_class(std::string_view name);
inline int class_index(EmotionClass c) { return static_cast<int>(c); }

// One labelled trial, samples in mV.
struct EcgRecord {
  std::string trial_id;
  EmotionClass label = EmotionClass::Neutral;
  double fs = 256.0;
  std::vector<double> samples;

  void validate() const;
};

struct BiquadCoeffs {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;  // a0 normalized to 1

  // Poles of z^2 + a1 z + a2 strictly inside the unit circle.
  bool is_stable() const;
};

struct Window {
  std::string trial_id;
  EmotionClass label = EmotionClass::Neutral;
  std::size_t start_index = 0;
  std::vector<double> samples;
};

// Second-order Butterworth high-pass via the bilinear transform with
// prewarping at fc. Throws InvalidCutoff unless 0 < fc < fs/2.
BiquadCoeffs design_highpass(double fc, double fs);

// Direct form I, zero initial state, single causal pass.
std::vector<double> apply_iir(const BiquadCoeffs& c, std::span<const double> x);

// |H(e^{jw})| at frequency f for sampling rate fs.
double magnitude_response(const BiquadCoeffs& c, double f, double fs);

// Population z-score. Throws DegenerateSignal when std < 1e-12 or n < 2.
std::vector<double> zscore(std::span<const double> x);

// Window starts 0, stride, 2*stride, ... with start + n <= L.
std::vector<Window> segment_overlap(const EcgRecord& record, std::size_t n, std::size_t stride);

inline std::size_t window_count(std::size_t length, std::size_t n, std::size_t stride) {
  return length < n ? 0 : (length - n) / stride + 1;
}

// Adds N(0, P / 10^(snr_db/10)) noise, P = mean square of the window.
Window inject_noise(const Window& w, double snr_db, std::uint64_t seed);

double signal_power(std::span<const double> x);

struct PreprocessConfig {
  double cutoff_hz = 0.8;
  double window_seconds = 10.0;
};

// filter -> per-trial z-score; windowing happens afterwards.
EcgRecord preprocess_record(const EcgRecord& record, const PreprocessConfig& cfg);

std::size_t window_length(const PreprocessConfig& cfg, double fs);

// stride = floor(N * (1 - overlap/100)), at least 1.
std::size_t stride_for_overlap(std::size_t n, double overlap_percent);

}  // namespace emonet
