#include "gst/gap_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "gst/numeric.hpp"
#include "gst/stats.hpp"

namespace gst {

namespace {

void check_args(const LogitVector& logits, std::size_t i) {
  if (logits.size() < 2) throw std::invalid_argument("gap is undefined for a single category");
  if (i >= logits.size()) throw std::out_of_range("conditioning index out of range");
}

}  // namespace

double gap_closed_form(const LogitVector& logits, std::size_t i) {
  check_args(logits, i);
  const double log_z = logits.log_partition();
  const double p = std::exp(logits[i] - log_z);
  if (p < 1e-12) return 1.0;
  if (p >= 1.0) {
    throw std::domain_error("selected probability is numerically 1; gap diverges");
  }
  if (p < 0.5) return -std::log1p(-p) / p;
  // Near p = 1 the subtraction 1 - p cancels; sum the other probabilities
  // instead.
  double rest = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (j != i) rest += std::exp(logits[j] - log_z);
  }
  return -std::log(rest) / p;
}

double gap_logistic_form(const LogitVector& logits, std::size_t i) {
  check_args(logits, i);
  const double d = logits.unselected_log_sum_exp(i) - logits[i];
  // log(1 + e^-d), and P(X >= d) = 1 - 1/(1 + e^-d) = 1/(1 + e^d).
  const double numerator = std::max(-d, 0.0) + std::log1p(std::exp(-std::abs(d)));
  const double tail = d >= 0.0 ? std::exp(-d) / (1.0 + std::exp(-d)) : 1.0 / (1.0 + std::exp(d));
  if (tail < 1e-300) return 1.0;
  return numerator / tail;
}

GapReport gap_monte_carlo(const LogitVector& logits, std::size_t i, RngStream& rng,
                          std::size_t n, GapSampler sampler) {
  check_args(logits, i);
  if (n < 1000) throw std::invalid_argument("gap_monte_carlo needs n >= 1000");
  stats::RunningMoments gap;
  std::vector<double> draw(logits.size());
  for (std::size_t s = 0; s < n; ++s) {
    if (sampler == GapSampler::Conditional) {
      conditional_perturbed_into(logits.values(), i, rng, draw);
    } else if (gumbel_max_into(logits.values(), rng, draw) != i) {
      continue;
    }
    double runner_up = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < draw.size(); ++j) {
      if (j != i) runner_up = std::max(runner_up, draw[j]);
    }
    gap.add(draw[i] - runner_up);
  }
  if (gap.count() < 100) {
    throw std::runtime_error("only " + std::to_string(gap.count()) +
                             " draws selected index " + std::to_string(i) +
                             "; conditioning probability too small for rejection sampling");
  }
  GapReport report;
  report.analytic_gap = gap_closed_form(logits, i);
  report.mc_gap = gap.mean();
  report.mc_stderr = gap.stderr_of_mean();
  report.n_samples = gap.count();
  report.conditioning_index = i;
  report.logits = logits;
  return report;
}

}  // namespace gst
