#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "doctest.h"
#include "gst/autodiff.hpp"
#include "gst/rng.hpp"
#include "gst/tensor.hpp"

namespace gst::testing {

inline Tensor random_tensor(Shape shape, RngStream& rng, double lo = -3.0, double hi = 3.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

/// Central differences of a scalar function of a tensor.
inline Tensor finite_difference(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                double h = 1e-5) {
  Tensor grad = Tensor::zeros_like(x);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = f(probe);
    probe[i] = saved - h;
    const double down = f(probe);
    probe[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

/// |a - b| <= rel * max(|a|, |b|) + abs_floor, elementwise.
inline bool close_rel(const Tensor& a, const Tensor& b, double rel, double abs_floor = 1e-8) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max(std::abs(a[i]), std::abs(b[i]));
    if (std::abs(a[i] - b[i]) > rel * scale + abs_floor) return false;
  }
  return true;
}

/// Builds `loss(tape, x)` once with x as a variable for the analytic
/// gradient and repeatedly with x as a constant for finite differences.
inline void check_gradient(const std::function<Value(Tape&, Value)>& loss, const Tensor& x,
                           double rel = 1e-4) {
  Tape tape;
  Value xv = tape.variable(x);
  tape.backward(loss(tape, xv));
  const Tensor analytic = xv.grad();
  const Tensor numeric = finite_difference(
      [&](const Tensor& p) {
        Tape t;
        return loss(t, t.constant(p)).value()[0];
      },
      x);
  INFO("analytic vs numeric gradient mismatch");
  CHECK(close_rel(analytic, numeric, rel));
}

}  // namespace gst::testing
