#include "gst/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace gst {

double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double v : x) acc += std::exp(v - m);
  return m + std::log(acc);
}

void softmax_into(std::span<const double> logits, double tau,
                  std::span<double> out) {
  if (!(tau > 0.0)) throw std::invalid_argument("softmax temperature must be > 0");
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out[j] = std::exp((logits[j] - m) / tau);
    z += out[j];
  }
  for (std::size_t j = 0; j < logits.size(); ++j) out[j] /= z;
}

Tensor softmax_rows(const Tensor& logits, double tau) {
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    softmax_into(logits.row(r), tau, out.row(r));
  }
  return out;
}

std::size_t argmax(std::span<const double> x) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < x.size(); ++j) {
    if (x[j] > x[best]) best = j;
  }
  return best;
}

double top2_gap(std::span<const double> x) {
  if (x.size() < 2) throw std::invalid_argument("top2_gap needs two entries");
  double first = -std::numeric_limits<double>::infinity();
  double second = first;
  for (double v : x) {
    if (v > first) {
      second = first;
      first = v;
    } else if (v > second) {
      second = v;
    }
  }
  return first - second;
}

}  // namespace gst
