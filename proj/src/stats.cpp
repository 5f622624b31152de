#include "gst/stats.hpp"

#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace gst::stats {

void RunningMoments::add(double x) {
  ++n_;
  const double delta = x - mean_;
  mean_ += delta / static_cast<double>(n_);
  m2_ += delta * (x - mean_);
}

double RunningMoments::variance() const {
  return n_ < 2 ? 0.0 : m2_ / static_cast<double>(n_ - 1);
}

double RunningMoments::stderr_of_mean() const {
  return n_ < 2 ? 0.0 : std::sqrt(variance() / static_cast<double>(n_));
}

double mean(std::span<const double> x) {
  RunningMoments m;
  for (double v : x) m.add(v);
  return m.mean();
}

double variance(std::span<const double> x) {
  RunningMoments m;
  for (double v : x) m.add(v);
  return m.variance();
}

TestResult chi_square_gof(std::span<const std::size_t> counts,
                          std::span<const double> probabilities) {
  if (counts.size() != probabilities.size()) {
    throw std::invalid_argument("chi_square_gof: size mismatch");
  }
  double total = 0.0;
  for (auto c : counts) total += static_cast<double>(c);
  double stat = 0.0;
  int dof = -1;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const double expected = total * probabilities[k];
    if (expected <= 0.0) {
      if (counts[k] > 0) return {std::numeric_limits<double>::infinity(), 0.0};
      continue;
    }
    const double diff = static_cast<double>(counts[k]) - expected;
    stat += diff * diff / expected;
    ++dof;
  }
  if (dof < 1) return {0.0, 1.0};
  return {stat, boost::math::gamma_q(0.5 * dof, 0.5 * stat)};
}

double kolmogorov_survival(double lambda) {
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += sign * term;
    if (term < 1e-16) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

namespace {

double stephens_lambda(double d, double effective_n) {
  const double root = std::sqrt(effective_n);
  return (root + 0.12 + 0.11 / root) * d;
}

}  // namespace

TestResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return {d, kolmogorov_survival(stephens_lambda(d, na * nb / (na + nb)))};
}

TestResult ks_one_sample(std::vector<double> sample,
                         const std::function<double(double)>& cdf) {
  if (sample.empty()) throw std::invalid_argument("ks_one_sample: empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return {d, kolmogorov_survival(stephens_lambda(d, n))};
}

}  // namespace gst::stats
