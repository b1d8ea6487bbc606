#include "emonet/metrics.hpp"

#include <cmath>

#include "emonet/error.hpp"

namespace emonet {

Metrics metrics_from_predictions(std::span<const int> truth, std::span<const int> predicted) {
  require(truth.size() == predicted.size(), ErrorCode::ShapeMismatch,
          "truth and prediction counts differ");
  require(!truth.empty(), ErrorCode::EmptyEvalSet, "nothing to evaluate");
  Metrics m;
  m.count = truth.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = predicted[i];
    require(t >= 0 && t < static_cast<int>(kNumClasses) && p >= 0 &&
                p < static_cast<int>(kNumClasses),
            ErrorCode::InvalidArgument, "class index out of range");
    ++m.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
    if (t == p) ++correct;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.count);
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::size_t predicted_c = 0, support = 0;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      predicted_c += m.confusion[k][c];
      support += m.confusion[c][k];
    }
    const double tp = static_cast<double>(m.confusion[c][c]);
    m.precision[c] = predicted_c ? tp / static_cast<double>(predicted_c) : 0.0;
    m.recall[c] = support ? tp / static_cast<double>(support) : 0.0;
    const double denom = m.precision[c] + m.recall[c];
    m.f1[c] = denom > 0.0 ? 2.0 * m.precision[c] * m.recall[c] / denom : 0.0;
    f1_sum += m.f1[c];
  }
  m.macro_f1 = f1_sum / static_cast<double>(kNumClasses);
  return m;
}

namespace {

double log_binomial_pmf(std::size_t n, std::size_t k, double p) {
  const double dn = static_cast<double>(n), dk = static_cast<double>(k);
  return std::lgamma(dn + 1.0) - std::lgamma(dk + 1.0) - std::lgamma(dn - dk + 1.0) +
         dk * std::log(p) + (dn - dk) * std::log1p(-p);
}

}  // namespace

double binomial_upper_tail(std::size_t n, std::size_t k, double p) {
  if (k == 0) return 1.0;
  if (k > n) return 0.0;
  double s = 0.0;
  for (std::size_t i = k; i <= n; ++i) s += std::exp(log_binomial_pmf(n, i, p));
  return std::min(1.0, s);
}

double binomial_cdf(std::size_t n, std::size_t k, double p) {
  if (k >= n) return 1.0;
  double s = 0.0;
  for (std::size_t i = 0; i <= k; ++i) s += std::exp(log_binomial_pmf(n, i, p));
  return std::min(1.0, s);
}

CountInterval binomial_interval(std::size_t n, double p, double level) {
  const double tail = (1.0 - level) / 2.0;
  CountInterval ci{0, n};
  // Largest lo with P(X < lo) <= tail; smallest hi with P(X > hi) <= tail.
  while (ci.lo < n && binomial_cdf(n, ci.lo, p) <= tail) ++ci.lo;
  while (ci.hi > 0 && binomial_upper_tail(n, ci.hi, p) <= tail) --ci.hi;
  return ci;
}

}  // namespace emonet
