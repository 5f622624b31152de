#pragma once

// Empirical gradient variance of an estimator at a frozen model state.
//
// "Total variance" is the trace of the gradient covariance, i.e. the sum of
// per-parameter variances.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gst/estimators.hpp"

namespace gst {

/// A frozen model whose loss gradient depends on one estimator call.
class GradientProblem {
 public:
  virtual ~GradientProblem() = default;
  /// Stop-gradient logits (rows x N) the estimator samples from.
  virtual const Tensor& logits() const = 0;
  virtual std::size_t parameter_count() const = 0;
  /// Flattened gradient of the loss for one frozen draw of the noise.
  virtual std::vector<double> gradient(const FrozenNoise& noise, const EstimatorConfig& cfg) = 0;
};

/// Loss <w, estimator output> with the logits themselves as parameters.
class LinearLogitProblem : public GradientProblem {
 public:
  LinearLogitProblem(Tensor logits, Tensor weights);

  const Tensor& logits() const override { return logits_; }
  std::size_t parameter_count() const override { return logits_.size(); }
  std::vector<double> gradient(const FrozenNoise& noise, const EstimatorConfig& cfg) override;

 private:
  Tensor logits_;
  Tensor weights_;
};

struct VarianceReport {
  std::string estimator;
  double tau = 1.0;
  std::string gap;
  std::size_t mc_samples = 1;
  std::uint64_t seed = 0;

  std::vector<double> per_parameter_variance;
  std::vector<double> mean_gradient;
  double total_variance = 0.0;
  /// Batch-means standard error of total_variance.
  double total_variance_stderr = 0.0;

  std::optional<double> term_a;  // E[V[grad | D]]
  std::optional<double> term_b;  // V[E[grad | D]]
  double term_a_stderr = 0.0;
  double term_b_stderr = 0.0;

  std::size_t n_outer = 0;  // resamples for gradient_variance
  std::size_t n_inner = 0;
};

/// Resamples the estimator randomness `resamples` times (>= 100) with the
/// parameters fixed. Throws NumericError naming the resample index when a
/// gradient is not finite.
VarianceReport gradient_variance(GradientProblem& problem, const EstimatorConfig& cfg,
                                 std::size_t resamples, RngStream& rng);

/// Law-of-total-variance split: outer draws of D, inner draws of the
/// conditional noise given D. Supports STGS, GR-MCK and GST; n_outer and
/// n_inner must be >= 50. term_b is corrected for the finite inner sample.
VarianceReport variance_decomposition(GradientProblem& problem, const EstimatorConfig& cfg,
                                      std::size_t n_outer, std::size_t n_inner,
                                      RngStream& rng);

/// Mean over rows of the Shannon entropy (nats) of the surrogate
/// probabilities, with 0 log 0 = 0.
double surrogate_entropy(const SurrogateOutput& output);
double row_entropy(std::span<const double> probs);

void write_variance_csv_header(std::ostream& out);
void write_variance_csv_row(std::ostream& out, const VarianceReport& report);

}  // namespace gst
