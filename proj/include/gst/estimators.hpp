#pragma once

// Gradient estimators for categorical samples.
//
// Every straight-through estimator is split into two halves:
//   draw_noise()      - all randomness, computed from stop-gradient logits
//   apply_estimator() - the differentiable surrogate built on a tape
// estimate() chains both. Keeping the halves apart lets tests freeze the
// noise and compare backward passes with finite differences.
//
// Logits are (rows x N). Each row is an independent categorical variable
// and consumes its own RNG sub-stream, so row r draws the same noise
// regardless of how many rows share the call.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gst/autodiff.hpp"
#include "gst/rng.hpp"
#include "gst/samplers.hpp"
#include "gst/tensor.hpp"

namespace gst {

enum class EstimatorKind { Reinforce, StNaive, Stgs, GrMck, Gst, NzGst };
enum class SampleMode { Hard, Soft };

std::string to_string(EstimatorKind kind);
EstimatorKind parse_estimator_kind(const std::string& name);

/// Gap size for GST: a constant g >= 0, or the per-sample expected STGS gap
/// -log(1 - p_i) / p_i ("pi").
struct GapRule {
  bool expected_stgs_gap = false;
  double value = 1.0;

  static GapRule constant(double g) { return {false, g}; }
  static GapRule pi() { return {true, 0.0}; }
  std::string to_string() const;
};

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::Gst;
  double tau = 1.0;
  GapRule gap = GapRule::constant(1.0);
  std::size_t mc_samples = 1;
  SampleMode mode = SampleMode::Hard;

  /// Throws std::invalid_argument unless tau > 0, g >= 0 and K >= 1.
  void validate() const;
  /// Short name such as "STGS", "GST-1.0", "GST-pi", "GR-MC100".
  std::string label() const;
};

/// Parses labels produced by EstimatorConfig::label() ("ST", "STGS",
/// "GR-MC100", "GST-1.2", "GST-pi", "NZ-GST-0.0", "REINFORCE").
EstimatorConfig parse_estimator_label(const std::string& label, double tau = 1.0);

struct OneHotBatch {
  std::vector<std::size_t> index;
  Tensor onehot;  // rows x N
};

/// Everything random about one estimator call, frozen.
struct FrozenNoise {
  OneHotBatch sample;
  /// Additive perturbation of the surrogate logits. Gumbel noise for STGS,
  /// conditional noise J_k - l0 for GR-MCK ((rows*K) x N, grouped by row),
  /// m1 - m2 for GST. Empty for ST_NAIVE, NZ_GST and REINFORCE.
  Tensor perturbation;
  /// Per-row gap (GST and NZ-GST).
  std::vector<double> gaps;
};

struct SurrogateOutput {
  OneHotBatch sample;
  /// Straight-through output in HARD mode, the surrogate h in SOFT mode.
  Value output;
  /// h(theta, .), a point of the simplex per row.
  Value surrogate_probs;
  /// Logits fed to softmax_tau, evaluated at theta0.
  Tensor surrogate_logits;
};

/// One Gumbel-Max draw per row of Softmax_1(logits0).
OneHotBatch sample_onehot(const Tensor& logits0, RngStream& rng);

/// Draws the one-hot sample from Softmax_1(logits0) by Gumbel-Max and the
/// estimator-specific noise.
FrozenNoise draw_noise(const Tensor& logits0, const EstimatorConfig& cfg, RngStream& rng);
/// Same as draw_noise but with the one-hot sample given; the Gumbel noise is
/// drawn from its conditional distribution.
FrozenNoise draw_noise_given(const Tensor& logits0, const OneHotBatch& sample,
                             const EstimatorConfig& cfg, RngStream& rng);

SurrogateOutput apply_estimator(Value logits, const FrozenNoise& noise,
                                const EstimatorConfig& cfg);
SurrogateOutput estimate(Value logits, const EstimatorConfig& cfg, RngStream& rng);

/// hard - stop_grad(h) + h.
Value straight_through_combine(const Tensor& hard, Value h);

SurrogateOutput st_naive(Value logits, const EstimatorConfig& cfg, RngStream& rng);
SurrogateOutput stgs(Value logits, const EstimatorConfig& cfg, RngStream& rng);
SurrogateOutput gr_mck(Value logits, const EstimatorConfig& cfg, RngStream& rng);
SurrogateOutput gst(Value logits, const EstimatorConfig& cfg, RngStream& rng);
SurrogateOutput nz_gst(Value logits, const EstimatorConfig& cfg, RngStream& rng);

/// (max_j l0_j - <l0, D>) * D, row-wise.
Tensor compute_m1(const Tensor& logits0, const OneHotBatch& d);
/// (l0 + g - max_j l0_j)_+ * (1 - D), row-wise with one gap per row.
Tensor compute_m2(const Tensor& logits0, const OneHotBatch& d, std::span<const double> gaps);
Tensor compute_m2(const Tensor& logits0, const OneHotBatch& d, double g);

/// -log(1 - p) / p with p clamped to [1e-6, 1 - 1e-6].
double expected_stgs_gap(double p);

struct GradientBatch {
  Tensor samples;  // resamples x parameters
  std::string estimator_id;
  std::uint64_t seed = 0;
};

/// Score-function estimator of d/dl E[g(D)] for a single logit vector:
/// n_samples independent draws of g(D) * d/dl log p(D).
GradientBatch reinforce_grad(const LogitVector& logits,
                             const std::function<double(const OneHotSample&)>& loss_per_category,
                             RngStream& rng, std::size_t n_samples);

OneHotBatch make_onehot_batch(std::vector<std::size_t> index, std::size_t n);

}  // namespace gst
