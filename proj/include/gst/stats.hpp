#pragma once

// Small statistics toolbox for the distributional checks.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace gst::stats {

/// Streaming mean / variance (Welford).
class RunningMoments {
 public:
  void add(double x);
  std::size_t count() const { return n_; }
  double mean() const { return mean_; }
  /// Unbiased sample variance; 0 for fewer than two samples.
  double variance() const;
  double stderr_of_mean() const;

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

double mean(std::span<const double> x);
double variance(std::span<const double> x);

struct TestResult {
  double statistic = 0.0;
  double p_value = 0.0;
};

/// Pearson chi-square goodness of fit of observed counts against expected
/// probabilities. Degrees of freedom = categories with p > 0, minus one.
TestResult chi_square_gof(std::span<const std::size_t> counts,
                          std::span<const double> probabilities);

/// Asymptotic Kolmogorov survival function Q_KS(lambda).
double kolmogorov_survival(double lambda);

/// Two-sample Kolmogorov-Smirnov test. Inputs need not be sorted.
TestResult ks_two_sample(std::vector<double> a, std::vector<double> b);

/// One-sample Kolmogorov-Smirnov test against a continuous CDF.
TestResult ks_one_sample(std::vector<double> sample,
                         const std::function<double(double)>& cdf);

}  // namespace gst::stats
