#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "gst/tensor.hpp"

namespace gst::vae {

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t t = 0;
};

/// One Adam update with bias correction. Moments are allocated on the first
/// call; `params` and `grads` must agree in count and shapes.
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state,
               double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

/// Constant temperature, or the mixed schedule that trains at `low` on every
/// M-th batch and at `mid` otherwise.
struct TemperatureSchedule {
  enum class Kind { Constant, Mixed };
  Kind kind = Kind::Constant;
  double tau = 1.0;
  std::size_t m = 20;
  double mid = 0.5;
  double low = 0.1;

  static TemperatureSchedule constant(double tau);
  static TemperatureSchedule mixed(std::size_t m, double mid, double low);

  void validate() const;
  /// Temperature used at evaluation time: tau, or the low temperature.
  double test_temperature() const;
  /// "constant:0.5" or "mixed:20:0.5:0.1".
  std::string to_string() const;
};

double temperature_schedule(std::size_t step, const TemperatureSchedule& cfg);

}  // namespace gst::vae
