#pragma once

// Gumbel / exponential sampling, Gumbel-Max categorical draws and the exact
// conditional distribution of the perturbed logits given the drawn category.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "gst/rng.hpp"

namespace gst {

/// Finite logit vector of length N >= 1.
class LogitVector {
 public:
  explicit LogitVector(std::vector<double> values);

  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  /// log Z, Z = sum_j exp(l_j).
  double log_partition() const;
  /// log-sum-exp of every entry except `i`.
  double unselected_log_sum_exp(std::size_t i) const;
  /// Softmax_1 of the logits.
  std::vector<double> probabilities() const;

 private:
  std::vector<double> values_;
};

struct OneHotSample {
  std::size_t index = 0;
  std::vector<double> onehot;

  static OneHotSample make(std::size_t index, std::size_t n);
};

struct PerturbedLogits {
  std::vector<double> values;
  std::size_t argmax_index = 0;
};

/// Thrown by rejection_oracle when the conditioning event is too rare.
class RejectionLimitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// n i.i.d. Gumbel(0, 1) draws, -log(-log U) with U clamped away from 0/1.
std::vector<double> sample_gumbel(RngStream& rng, std::size_t n);
/// n i.i.d. Exp(1) draws, -log U.
std::vector<double> sample_exponential(RngStream& rng, std::size_t n);

/// Gumbel-Max draw: argmax(l + G), lowest index on ties.
std::pair<OneHotSample, PerturbedLogits> gumbel_max(const LogitVector& logits,
                                                    RngStream& rng);

/// Draws l + G conditioned on argmax(l + G) = given.index:
///   entry i     = -log(E_i / Z)
///   entry j != i = -log(E_j / exp(l_j) + E_i / Z)
PerturbedLogits conditional_perturbed_logits(const LogitVector& logits,
                                             const OneHotSample& given, RngStream& rng);

/// Ground truth for the above: resample l + G until the argmax matches.
PerturbedLogits rejection_oracle(const LogitVector& logits, const OneHotSample& given,
                                 RngStream& rng, std::size_t max_tries);

// Span-level kernels used by the batched estimators. `out` has the same
// length as `logits`.
std::size_t gumbel_max_into(std::span<const double> logits, RngStream& rng,
                            std::span<double> out);
void conditional_perturbed_into(std::span<const double> logits, std::size_t index,
                                RngStream& rng, std::span<double> out);

}  // namespace gst
