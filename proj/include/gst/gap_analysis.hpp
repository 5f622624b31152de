#pragma once

// Expected gap between the two largest Gumbel-perturbed logits, conditioned
// on which category won the Gumbel-Max draw.

#include <cstddef>

#include "gst/rng.hpp"
#include "gst/samplers.hpp"

namespace gst {

struct GapReport {
  double analytic_gap = 0.0;
  double mc_gap = 0.0;
  double mc_stderr = 0.0;
  std::size_t n_samples = 0;  // accepted draws
  std::size_t conditioning_index = 0;
  LogitVector logits{std::vector<double>{0.0}};
};

enum class GapSampler {
  Conditional,  // exact conditional draws
  Rejection,    // unconditional draws, keep argmax == i
};

/// -log(1 - p_i) / p_i with p_i = Softmax_1(l)_i. Returns the limit 1 when
/// p_i < 1e-12. Throws for N = 1 or when p_i rounds to 1.
double gap_closed_form(const LogitVector& logits, std::size_t i);

/// The same expectation through the logistic route: with d = s - l_i and
/// s the log-sum-exp of the other logits, E[X - d | X >= d] for
/// X ~ Logistic(0, 1), i.e. log(1 + e^-d) / P(X >= d).
double gap_logistic_form(const LogitVector& logits, std::size_t i);

/// Monte-Carlo estimate of the conditional expected top-2 gap. Requires
/// n >= 1000; the rejection path throws when fewer than 100 draws land on i.
GapReport gap_monte_carlo(const LogitVector& logits, std::size_t i, RngStream& rng,
                          std::size_t n, GapSampler sampler = GapSampler::Conditional);

}  // namespace gst
