#pragma once

#include <array>
#include <cstddef>
#include <span>

#include "emonet/signals.hpp"

namespace emonet {

struct Metrics {
  std::size_t count = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::array<double, kNumClasses> precision{};
  std::array<double, kNumClasses> recall{};
  std::array<double, kNumClasses> f1{};
  // confusion[true][predicted]
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> confusion{};
};

// Macro F1 averages all five classes; a class with no predictions has
// precision 0, one with no support has recall 0, and F1 is 0 whenever
// precision + recall is 0. Throws EmptyEvalSet on empty input.
Metrics metrics_from_predictions(std::span<const int> truth, std::span<const int> predicted);

// P(X >= k) for X ~ Binomial(n, p).
double binomial_upper_tail(std::size_t n, std::size_t k, double p);
// P(X <= k) for X ~ Binomial(n, p).
double binomial_cdf(std::size_t n, std::size_t k, double p);

struct CountInterval {
  std::size_t lo = 0, hi = 0;
};

// Central interval [lo, hi] of Binomial(n, p) with at most (1-level)/2 mass
// on each side outside it.
CountInterval binomial_interval(std::size_t n, double p, double level);

}  // namespace emonet
