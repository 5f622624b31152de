#include "gst/vae/optim.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace gst::vae {

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state,
               double lr, double beta1, double beta2, double eps) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const Tensor& p : params) {
      state.m.push_back(Tensor::zeros_like(p));
      state.v.push_back(Tensor::zeros_like(p));
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: state does not match parameters");
  ++state.t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k].same_shape(grads[k])) {
      throw ShapeError("adam_step: gradient shape " + gst::to_string(grads[k].shape()) +
                       " for parameter " + gst::to_string(params[k].shape()));
    }
    auto p = params[k].data();
    auto g = grads[k].data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

TemperatureSchedule TemperatureSchedule::constant(double tau) {
  TemperatureSchedule s;
  s.kind = Kind::Constant;
  s.tau = tau;
  return s;
}

TemperatureSchedule TemperatureSchedule::mixed(std::size_t m, double mid, double low) {
  TemperatureSchedule s;
  s.kind = Kind::Mixed;
  s.m = m;
  s.mid = mid;
  s.low = low;
  s.tau = low;
  return s;
}

void TemperatureSchedule::validate() const {
  if (kind == Kind::Constant) {
    if (!(tau > 0.0)) throw std::invalid_argument("temperature must be positive");
    return;
  }
  if (m < 1) throw std::invalid_argument("mixed schedule needs M >= 1");
  if (!(mid > 0.0) || !(low > 0.0)) throw std::invalid_argument("temperatures must be positive");
}

double TemperatureSchedule::test_temperature() const {
  return kind == Kind::Constant ? tau : low;
}

std::string TemperatureSchedule::to_string() const {
  char buf[96];
  if (kind == Kind::Constant) {
    std::snprintf(buf, sizeof buf, "constant:%g", tau);
  } else {
    std::snprintf(buf, sizeof buf, "mixed:%zu:%g:%g", m, mid, low);
  }
  return buf;
}

double temperature_schedule(std::size_t step, const TemperatureSchedule& cfg) {
  if (cfg.kind == TemperatureSchedule::Kind::Constant) return cfg.tau;
  if (cfg.m < 1) throw std::invalid_argument("mixed schedule needs M >= 1");
  return step % cfg.m == 0 ? cfg.low : cfg.mid;
}

}  // namespace gst::vae
