#pragma once

#include <cstddef>
#include <span>

#include "gst/tensor.hpp"

namespace gst {

/// log(sum(exp(x))) with the maximum subtracted first.
double log_sum_exp(std::span<const double> x);

/// Row-wise Softmax(x / tau). Throws std::invalid_argument when tau <= 0.
Tensor softmax_rows(const Tensor& logits, double tau = 1.0);
void softmax_into(std::span<const double> logits, double tau,
                  std::span<double> out);

/// Index of the maximum entry; the lowest index wins ties.
std::size_t argmax(std::span<const double> x);

/// Largest minus second largest entry (requires at least two entries).
double top2_gap(std::span<const double> x);

}  // namespace gst
