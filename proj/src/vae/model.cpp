#include "gst/vae/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gst::vae {

namespace {

Tensor glorot(std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w({fan_in, fan_out});
  for (double& v : w.data()) v = (2.0 * rng.uniform() - 1.0) * limit;
  return w;
}

template <typename Fn>
auto name_numeric_failure(const char* term, Fn&& fn) {
  try {
    return fn();
  } catch (const NumericError& e) {
    throw NumericError(std::string(term) + " term: " + e.what());
  }
}

}  // namespace

VaeModel::VaeModel(VaeShape shape, std::uint64_t seed) : shape_(shape) {
  if (shape.input == 0 || shape.latents == 0 || shape.categories == 0 ||
      shape.encoder_hidden == 0 || shape.decoder_hidden == 0) {
    throw std::invalid_argument("VaeShape dimensions must be positive");
  }
  RngStream rng(seed);
  params_.push_back(glorot(shape.input, shape.encoder_hidden, rng));
  params_.push_back(Tensor({shape.encoder_hidden}));
  params_.push_back(glorot(shape.encoder_hidden, shape.latent_dim(), rng));
  params_.push_back(Tensor({shape.latent_dim()}));
  params_.push_back(glorot(shape.latent_dim(), shape.decoder_hidden, rng));
  params_.push_back(Tensor({shape.decoder_hidden}));
  params_.push_back(glorot(shape.decoder_hidden, shape.input, rng));
  params_.push_back(Tensor({shape.input}));
}

const std::vector<std::string>& VaeModel::parameter_names() {
  static const std::vector<std::string> names = {
      "encoder.w1", "encoder.b1", "encoder.w2", "encoder.b2",
      "decoder.w3", "decoder.b3", "decoder.w4", "decoder.b4"};
  return names;
}

std::size_t VaeModel::encoder_parameter_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < kEncoderTensors; ++i) n += params_[i].size();
  return n;
}

BoundModel bind(Tape& tape, const VaeModel& model, bool encoder_only) {
  BoundModel bound{model.shape(), {}};
  const auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const bool trainable = !encoder_only || i < VaeModel::kEncoderTensors;
    bound.params.push_back(trainable ? tape.variable(params[i]) : tape.constant(params[i]));
  }
  return bound;
}

Value encoder_logits(const BoundModel& m, Value x) {
  Value h = ops::relu_plus(ops::affine(x, m.params[0], m.params[1]));
  Value logits = ops::affine(h, m.params[2], m.params[3]);
  return ops::reshape(logits, {x.value().rows() * m.shape.latents, m.shape.categories});
}

Value decoder_logits(const BoundModel& m, Value z) {
  Value h = ops::relu_plus(ops::affine(z, m.params[4], m.params[5]));
  return ops::affine(h, m.params[6], m.params[7]);
}

Value kl_to_uniform(Value logits) {
  const double log_n = std::log(static_cast<double>(logits.value().cols()));
  Value probs = ops::softmax_tau(logits, 1.0);
  Value log_ratio = ops::add_scalar(ops::log_softmax(logits), log_n);
  return ops::sum(ops::mul(probs, log_ratio));
}

ElboTerms elbo_loss_with(Tape& tape, const BoundModel& model, const Tensor& batch,
                         const EstimatorConfig& cfg,
                         const std::function<FrozenNoise(const Tensor&)>& noise_for) {
  const VaeShape& shape = model.shape;
  if (batch.rank() != 2 || batch.cols() != shape.input) {
    throw ShapeError("elbo_loss: batch must be (rows x " + std::to_string(shape.input) + ")");
  }
  const double rows = static_cast<double>(batch.rows());
  Value x = tape.constant(batch);
  Value logits = name_numeric_failure("encoder", [&] { return encoder_logits(model, x); });

  const FrozenNoise noise = noise_for(logits.value());
  const SurrogateOutput sample = apply_estimator(logits, noise, cfg);
  Value z = ops::reshape(sample.output, {batch.rows(), shape.latent_dim()});

  Value recon = name_numeric_failure("reconstruction", [&] {
    return ops::bce_with_logits_sum(decoder_logits(model, z), batch);
  });
  Value kl = name_numeric_failure("kl", [&] { return kl_to_uniform(logits); });

  ElboTerms terms;
  terms.loss = name_numeric_failure("loss", [&] { return ops::scale(ops::add(recon, kl), 1.0 / rows); });
  terms.reconstruction = recon.value()[0] / rows;
  terms.kl = kl.value()[0] / rows;
  terms.entropy = surrogate_entropy(sample);
  terms.logits = logits.value();
  terms.sample = sample.sample;
  return terms;
}

ElboTerms elbo_loss(Tape& tape, const BoundModel& model, const Tensor& batch,
                    const EstimatorConfig& cfg, RngStream& rng) {
  return elbo_loss_with(tape, model, batch, cfg,
                        [&](const Tensor& logits0) { return draw_noise(logits0, cfg, rng); });
}

VaeSnapshotProblem::VaeSnapshotProblem(VaeModel model, Tensor batch)
    : model_(std::move(model)), batch_(std::move(batch)) {
  Tape tape;
  const BoundModel bound = bind(tape, model_, true);
  logits_ = encoder_logits(bound, tape.constant(batch_)).value();
}

std::vector<double> VaeSnapshotProblem::gradient(const FrozenNoise& noise,
                                                 const EstimatorConfig& cfg) {
  Tape tape;
  const BoundModel bound = bind(tape, model_, true);
  const ElboTerms terms =
      elbo_loss_with(tape, bound, batch_, cfg, [&](const Tensor&) { return noise; });
  tape.backward(terms.loss);
  std::vector<double> grad;
  grad.reserve(parameter_count());
  for (std::size_t i = 0; i < VaeModel::kEncoderTensors; ++i) {
    const Tensor& g = bound.params[i].grad();
    grad.insert(grad.end(), g.data().begin(), g.data().end());
  }
  return grad;
}

}  // namespace gst::vae
