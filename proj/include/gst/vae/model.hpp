#pragma once

// Categorical VAE: MLP encoder to 30 x 10 logits, straight-through latent
// samples, MLP decoder to Bernoulli pixel logits.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gst/autodiff.hpp"
#include "gst/estimators.hpp"
#include "gst/rng.hpp"
#include "gst/tensor.hpp"
#include "gst/variance_profiler.hpp"

namespace gst::vae {

struct VaeShape {
  std::size_t input = 784;
  std::size_t latents = 30;
  std::size_t categories = 10;
  std::size_t encoder_hidden = 256;
  std::size_t decoder_hidden = 256;

  std::size_t latent_dim() const { return latents * categories; }
};

/// Parameter tensors in declaration order:
///   encoder: w1 (input x eh), b1, w2 (eh x latents*categories), b2
///   decoder: w3 (latents*categories x dh), b3, w4 (dh x input), b4
class VaeModel {
 public:
  static constexpr std::size_t kEncoderTensors = 4;

  /// Glorot-uniform weights, zero biases.
  VaeModel(VaeShape shape, std::uint64_t seed);

  const VaeShape& shape() const { return shape_; }
  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  static const std::vector<std::string>& parameter_names();
  std::size_t encoder_parameter_count() const;

 private:
  VaeShape shape_;
  std::vector<Tensor> params_;
};

/// Model parameters recorded on a tape.
struct BoundModel {
  VaeShape shape;
  std::vector<Value> params;
};

/// Records every parameter as a variable; with `encoder_only` the decoder
/// tensors are recorded as constants.
BoundModel bind(Tape& tape, const VaeModel& model, bool encoder_only = false);

/// Encoder logits reshaped to (batch*latents x categories).
Value encoder_logits(const BoundModel& model, Value x);
Value decoder_logits(const BoundModel& model, Value z);

struct ElboTerms {
  Value loss;  // mean negative ELBO over the batch
  double reconstruction = 0.0;  // mean Bernoulli negative log-likelihood
  double kl = 0.0;              // mean KL(p(.|x) || uniform)
  double entropy = 0.0;         // mean surrogate entropy per latent
  Tensor logits;                // encoder logits at theta0
  OneHotBatch sample;
};

/// Negative ELBO of `batch` (rows in [0, 1]) with fresh estimator noise.
ElboTerms elbo_loss(Tape& tape, const BoundModel& model, const Tensor& batch,
                    const EstimatorConfig& cfg, RngStream& rng);

/// Same, with the estimator noise supplied by `noise_for(logits0)`.
ElboTerms elbo_loss_with(Tape& tape, const BoundModel& model, const Tensor& batch,
                         const EstimatorConfig& cfg,
                         const std::function<FrozenNoise(const Tensor&)>& noise_for);

/// sum_i p_i (log p_i + log N) per row, summed over rows; the logits are
/// (rows x N).
Value kl_to_uniform(Value logits);

/// Gradient of the negative ELBO w.r.t. the encoder parameters at a frozen
/// model and batch, as a GradientProblem for the variance profiler.
class VaeSnapshotProblem : public GradientProblem {
 public:
  VaeSnapshotProblem(VaeModel model, Tensor batch);

  const Tensor& logits() const override { return logits_; }
  std::size_t parameter_count() const override { return model_.encoder_parameter_count(); }
  std::vector<double> gradient(const FrozenNoise& noise, const EstimatorConfig& cfg) override;

 private:
  VaeModel model_;
  Tensor batch_;
  Tensor logits_;
};

}  // namespace gst::vae
