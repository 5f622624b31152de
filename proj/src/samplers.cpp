#include "gst/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gst/numeric.hpp"

namespace gst {

namespace {

double log_add_exp(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

void check_index(std::size_t index, std::size_t n) {
  if (index >= n) {
    throw std::out_of_range("category index " + std::to_string(index) +
                            " out of range for " + std::to_string(n) + " logits");
  }
}

}  // namespace

LogitVector::LogitVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw std::invalid_argument("LogitVector needs at least one entry");
  for (double v : values_) {
    if (!std::isfinite(v)) throw std::invalid_argument("LogitVector entries must be finite");
  }
}

double LogitVector::log_partition() const { return log_sum_exp(values_); }

double LogitVector::unselected_log_sum_exp(std::size_t i) const {
  check_index(i, values_.size());
  std::vector<double> rest;
  rest.reserve(values_.size() - 1);
  for (std::size_t j = 0; j < values_.size(); ++j) {
    if (j != i) rest.push_back(values_[j]);
  }
  return log_sum_exp(rest);
}

std::vector<double> LogitVector::probabilities() const {
  std::vector<double> p(values_.size());
  softmax_into(values_, 1.0, p);
  return p;
}

OneHotSample OneHotSample::make(std::size_t index, std::size_t n) {
  check_index(index, n);
  OneHotSample s{index, std::vector<double>(n, 0.0)};
  s.onehot[index] = 1.0;
  return s;
}

std::vector<double> sample_gumbel(RngStream& rng, std::size_t n) {
  std::vector<double> g(n);
  for (double& v : g) v = -std::log(-std::log(rng.uniform_open()));
  return g;
}

std::vector<double> sample_exponential(RngStream& rng, std::size_t n) {
  std::vector<double> e(n);
  for (double& v : e) v = -std::log(rng.uniform_open());
  return e;
}

std::size_t gumbel_max_into(std::span<const double> logits, RngStream& rng,
                            std::span<double> out) {
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out[j] = logits[j] - std::log(-std::log(rng.uniform_open()));
  }
  return argmax(out);
}

void conditional_perturbed_into(std::span<const double> logits, std::size_t index,
                                RngStream& rng, std::span<double> out) {
  check_index(index, logits.size());
  const double log_z = log_sum_exp(logits);
  // log(E_i / Z), shared by every coordinate.
  const double log_top = std::log(-std::log(rng.uniform_open())) - log_z;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (j == index) {
      out[j] = -log_top;
      continue;
    }
    const double log_ej = std::log(-std::log(rng.uniform_open()));
    out[j] = -log_add_exp(log_ej - logits[j], log_top);
  }
}

std::pair<OneHotSample, PerturbedLogits> gumbel_max(const LogitVector& logits,
                                                    RngStream& rng) {
  PerturbedLogits perturbed{std::vector<double>(logits.size()), 0};
  perturbed.argmax_index = gumbel_max_into(logits.values(), rng, perturbed.values);
  return {OneHotSample::make(perturbed.argmax_index, logits.size()), std::move(perturbed)};
}

PerturbedLogits conditional_perturbed_logits(const LogitVector& logits,
                                             const OneHotSample& given, RngStream& rng) {
  PerturbedLogits out{std::vector<double>(logits.size()), given.index};
  conditional_perturbed_into(logits.values(), given.index, rng, out.values);
  return out;
}

PerturbedLogits rejection_oracle(const LogitVector& logits, const OneHotSample& given,
                                 RngStream& rng, std::size_t max_tries) {
  check_index(given.index, logits.size());
  PerturbedLogits out{std::vector<double>(logits.size()), 0};
  for (std::size_t attempt = 0; attempt < max_tries; ++attempt) {
    out.argmax_index = gumbel_max_into(logits.values(), rng, out.values);
    if (out.argmax_index == given.index) return out;
  }
  throw RejectionLimitError("rejection_oracle: no draw selected index " +
                            std::to_string(given.index) + " within " +
                            std::to_string(max_tries) + " tries");
}

}  // namespace gst
