#include <cmath>
#include <numbers>
#include <string>

#include "doctest.h"
#include "gst/estimators.hpp"
#include "gst/numeric.hpp"
#include "gst/stats.hpp"
#include "support.hpp"

using namespace gst;
using gst::testing::close_rel;
using gst::testing::finite_difference;
using gst::testing::random_tensor;

namespace {

std::vector<EstimatorConfig> straight_through_configs(double tau) {
  std::vector<EstimatorConfig> out;
  for (const char* label : {"ST", "STGS", "GR-MC5", "GST-1.0", "GST-0.0", "GST-pi", "NZ-GST-1.0",
                            "NZ-GST-0.0"}) {
    out.push_back(parse_estimator_label(label, tau));
  }
  return out;
}

// <w, output> with frozen noise; returns the loss and the logit gradient.
std::pair<double, Tensor> linear_loss(const Tensor& logits, const Tensor& w,
                                      const FrozenNoise& noise, const EstimatorConfig& cfg) {
  Tape tape;
  Value l = tape.variable(logits);
  const SurrogateOutput out = apply_estimator(l, noise, cfg);
  Value loss = ops::sum(ops::mul(out.output, tape.constant(w)));
  tape.backward(loss);
  return {loss.value()[0], l.grad()};
}

EstimatorConfig with_mode(EstimatorConfig cfg, SampleMode mode) {
  cfg.mode = mode;
  return cfg;
}

}  // namespace

TEST_CASE("labels round-trip") {
  for (const char* label : {"ST", "STGS", "GR-MC100", "GST-1.0", "GST-1.2", "GST-pi", "NZ-GST-0.0",
                            "REINFORCE"}) {
    CHECK(parse_estimator_label(label).label() == label);
  }
  CHECK(parse_estimator_label("GST-0.25").gap.value == 0.25);
  CHECK_THROWS_AS(parse_estimator_label("GST-x"), std::invalid_argument);
  CHECK_THROWS_AS(parse_estimator_label("FOO"), std::invalid_argument);
  CHECK_THROWS_AS(parse_estimator_label("GST--1"), std::invalid_argument);
}

TEST_CASE("config validation") {
  EstimatorConfig cfg;
  cfg.tau = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.tau = 1.0;
  cfg.gap = GapRule::constant(-0.5);
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.gap = GapRule::constant(0.0);
  cfg.mc_samples = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("m1 and m2 hand examples") {
  const Tensor l = Tensor::matrix(1, 3, {2, 1, 0});
  const OneHotBatch first = make_onehot_batch({0}, 3);
  const OneHotBatch third = make_onehot_batch({2}, 3);

  CHECK(compute_m1(l, first) == Tensor::matrix(1, 3, {0, 0, 0}));
  CHECK(compute_m1(l, third) == Tensor::matrix(1, 3, {0, 0, 2}));

  const Tensor m2 = compute_m2(l, third, 1.0);
  CHECK(m2 == Tensor::matrix(1, 3, {1, 0, 0}));
  const Tensor m1 = compute_m1(l, third);
  std::vector<double> perturbed(3);
  for (int j = 0; j < 3; ++j) perturbed[j] = l[j] + m1[j] - m2[j];
  CHECK(perturbed == std::vector<double>{1, 1, 2});
  CHECK(top2_gap(perturbed) == 1.0);

  CHECK(compute_m2(l, first, 0.0) == Tensor::matrix(1, 3, {0, 0, 0}));
  CHECK_THROWS_AS(compute_m2(l, first, -1.0), std::invalid_argument);
}

TEST_CASE("m1 ties the selected logit with the max; m2 enforces the gap") {
  RngStream rng(3);
  for (int t = 0; t < 500; ++t) {
    const Tensor l = random_tensor({4, 6}, rng);
    const OneHotBatch d = sample_onehot(l, rng);
    const double g = 3.0 * rng.uniform();
    const Tensor m1 = compute_m1(l, d);
    const Tensor m2 = compute_m2(l, d, g);
    for (std::size_t r = 0; r < l.rows(); ++r) {
      auto row = l.row(r);
      const double top = *std::max_element(row.begin(), row.end());
      CHECK(row[d.index[r]] + m1.at(r, d.index[r]) == doctest::Approx(top).epsilon(1e-15));
      CHECK(m2.at(r, d.index[r]) == 0.0);
      for (std::size_t j = 0; j < row.size(); ++j) {
        CHECK(m2.at(r, j) >= 0.0);
        if (j != d.index[r]) CHECK(row[j] + m1.at(r, j) - m2.at(r, j) <= top - g + 1e-12);
      }
    }
  }
}

TEST_CASE("expected STGS gap rule clamps p") {
  CHECK(expected_stgs_gap(0.5) == doctest::Approx(2.0 * std::numbers::ln2));
  CHECK(std::isfinite(expected_stgs_gap(1.0)));
  CHECK(expected_stgs_gap(1.0) == expected_stgs_gap(1.0 - 1e-6));
  CHECK(expected_stgs_gap(0.0) == expected_stgs_gap(1e-6));
}

TEST_CASE("backward with frozen noise matches finite differences (50 trials each)") {
  RngStream rng(2718);
  for (double tau : {1.0, 0.5}) {
    for (const auto& base : straight_through_configs(tau)) {
      CAPTURE(base.label());
      CAPTURE(tau);
      const EstimatorConfig soft = with_mode(base, SampleMode::Soft);
      const EstimatorConfig hard = with_mode(base, SampleMode::Hard);
      int checked = 0;
      for (int trial = 0; trial < 50; ++trial) {
        const Tensor logits = random_tensor({1, 10}, rng);
        const Tensor w = random_tensor({1, 10}, rng);
        const FrozenNoise noise = draw_noise(logits, base, rng);
        const auto [soft_loss, soft_grad] = linear_loss(logits, w, noise, soft);
        const auto [hard_loss, hard_grad] = linear_loss(logits, w, noise, hard);
        (void)soft_loss;
        (void)hard_loss;
        const Tensor numeric = finite_difference(
            [&](const Tensor& p) { return linear_loss(p, w, noise, soft).first; }, logits);
        CHECK(close_rel(soft_grad, numeric, 1e-4));
        CHECK(close_rel(hard_grad, soft_grad, 1e-12, 1e-15));
        ++checked;
      }
      CHECK(checked == 50);
    }
  }
}

TEST_CASE("batched rows match finite differences too") {
  RngStream rng(11);
  const EstimatorConfig cfg = with_mode(parse_estimator_label("GR-MC3", 0.7), SampleMode::Soft);
  const Tensor logits = random_tensor({4, 5}, rng);
  const Tensor w = random_tensor({4, 5}, rng);
  const FrozenNoise noise = draw_noise(logits, cfg, rng);
  const Tensor numeric =
      finite_difference([&](const Tensor& p) { return linear_loss(p, w, noise, cfg).first; }, logits);
  CHECK(close_rel(linear_loss(logits, w, noise, cfg).second, numeric, 1e-4));
}

TEST_CASE("hard forward equals the one-hot sample bit for bit") {
  RngStream rng(8);
  for (double tau : {1.0, 0.1, 1e-3}) {
    for (const auto& cfg : straight_through_configs(tau)) {
      for (int t = 0; t < 50; ++t) {
        Tape tape;
        Value l = tape.variable(random_tensor({8, 10}, rng, -10, 10));
        const SurrogateOutput out = estimate(l, cfg, rng);
        CHECK(out.output.value() == out.sample.onehot);
      }
    }
  }
}

TEST_CASE("straight_through_combine has the Jacobian of h") {
  RngStream rng(19);
  for (int t = 0; t < 20; ++t) {
    const Tensor logits = random_tensor({1, 6}, rng);
    const Tensor w = random_tensor({1, 6}, rng);
    const OneHotBatch d = sample_onehot(logits, rng);
    Tape tape;
    Value l = tape.variable(logits);
    Value h = ops::softmax_tau(l, 0.5);
    Value combined = straight_through_combine(d.onehot, h);
    CHECK(combined.value() == d.onehot);
    tape.backward(ops::sum(ops::mul(combined, tape.constant(w))));
    const Tensor via_combine = l.grad();
    const Tensor numeric = finite_difference(
        [&](const Tensor& p) {
          Tape t2;
          return ops::sum(ops::mul(ops::softmax_tau(t2.constant(p), 0.5), t2.constant(w))).value()[0];
        },
        logits);
    CHECK(close_rel(via_combine, numeric, 1e-4));
  }
  Tape tape;
  CHECK_THROWS_AS(straight_through_combine(Tensor({1, 3}), tape.constant(Tensor({1, 4}))), ShapeError);
}

TEST_CASE("Property 0: hard samples follow Softmax_1 for every estimator") {
  RngStream rng(1234);
  const Tensor row = random_tensor({1, 10}, rng);
  const LogitVector lv(row.to_vector());
  Tensor batch({1000, 10});
  for (std::size_t r = 0; r < 1000; ++r) std::copy_n(row.data().begin(), 10, batch.row(r).begin());
  for (const auto& cfg : straight_through_configs(0.5)) {
    CAPTURE(cfg.label());
    std::vector<std::size_t> counts(10, 0);
    for (int rep = 0; rep < 100; ++rep) {
      Tape tape;
      const SurrogateOutput out = estimate(tape.constant(batch), cfg, rng);
      for (std::size_t r = 0; r < 1000; ++r) ++counts[argmax(out.output.value().row(r))];
    }
    CHECK(stats::chi_square_gof(counts, lv.probabilities()).p_value > 0.01);
  }
}

TEST_CASE("Property 1: surrogate argmax agrees with the sample") {
  RngStream rng(55);
  for (const char* label : {"STGS", "GR-MC10", "GST-1.0", "GST-0.0", "GST-pi", "NZ-GST-1.0"}) {
    const EstimatorConfig cfg = parse_estimator_label(label, 0.5);
    const std::string name = label;
    CAPTURE(name);
    // With g = 0 the selected logit ties the maximum in exact arithmetic, so
    // agreement is only up to the rounding of l_i + (max - l_i).
    const double slack = cfg.kind == EstimatorKind::Gst && cfg.gap.value == 0.0 &&
                                 !cfg.gap.expected_stgs_gap
                             ? 1e-12
                             : 0.0;
    std::size_t mismatches = 0;
    for (int rep = 0; rep < 100; ++rep) {
      Tape tape;
      const SurrogateOutput out = estimate(tape.constant(random_tensor({1000, 10}, rng)), cfg, rng);
      const Tensor& h = out.surrogate_probs.value();
      for (std::size_t r = 0; r < h.rows(); ++r) {
        // GST-0.0 ties the selected logit with the max; lowest index wins on
        // an exact tie, so compare against the maximal value instead.
        const double hmax = *std::max_element(h.row(r).begin(), h.row(r).end());
        mismatches += h.at(r, out.sample.index[r]) < hmax * (1.0 - slack);
      }
    }
    CHECK(mismatches == 0);
  }
}

TEST_CASE("ST is not consistent: argmax h is fixed while D varies") {
  RngStream rng(4);
  const EstimatorConfig cfg = parse_estimator_label("ST", 1.0);
  Tensor batch({2000, 3});
  for (std::size_t r = 0; r < 2000; ++r) batch.at(r, 1) = 2.0;
  Tape tape;
  const SurrogateOutput out = st_naive(tape.constant(batch), cfg, rng);
  std::size_t off_mode = 0;
  for (std::size_t r = 0; r < 2000; ++r) {
    CHECK(argmax(out.surrogate_probs.value().row(r)) == 1);
    off_mode += out.sample.index[r] != 1;
  }
  CHECK(off_mode > 0);
}

TEST_CASE("Property 3: GST perturbed logits keep the gap") {
  RngStream rng(21);
  for (const char* label : {"GST-1.0", "GST-0.5", "GST-2.0", "GST-pi"}) {
    const EstimatorConfig cfg = parse_estimator_label(label, 1.0);
    std::size_t draws = 0;
    for (int rep = 0; rep < 100; ++rep) {
      Tape tape;
      const Tensor logits = random_tensor({1000, 10}, rng);
      const FrozenNoise noise = draw_noise(logits, cfg, rng);
      const SurrogateOutput out = apply_estimator(tape.constant(logits), noise, cfg);
      for (std::size_t r = 0; r < logits.rows(); ++r, ++draws) {
        auto z = out.surrogate_logits.row(r);
        const double selected = z[out.sample.index[r]];
        double other = -INFINITY;
        for (std::size_t j = 0; j < z.size(); ++j) {
          if (j != out.sample.index[r]) other = std::max(other, z[j]);
        }
        CHECK(selected - other >= noise.gaps[r] - 1e-9);
      }
    }
    CHECK(draws == 100'000);
  }
}

TEST_CASE("GST-pi uses the expected STGS gap of the selected category") {
  RngStream rng(6);
  const Tensor logits = random_tensor({50, 5}, rng);
  const FrozenNoise noise = draw_noise(logits, parse_estimator_label("GST-pi"), rng);
  const Tensor p = softmax_rows(logits, 1.0);
  for (std::size_t r = 0; r < 50; ++r) {
    const double pi = p.at(r, noise.sample.index[r]);
    CHECK(noise.gaps[r] == doctest::Approx(-std::log1p(-pi) / pi).epsilon(1e-12));
  }
}

TEST_CASE("STGS at tiny temperature approaches the sample") {
  RngStream rng(13);
  const EstimatorConfig cfg = with_mode(parse_estimator_label("STGS", 1e-3), SampleMode::Soft);
  std::size_t checked = 0;
  for (int rep = 0; rep < 20; ++rep) {
    Tape tape;
    const SurrogateOutput out = estimate(tape.constant(random_tensor({500, 10}, rng)), cfg, rng);
    for (std::size_t r = 0; r < 500; ++r) {
      if (top2_gap(out.surrogate_logits.row(r)) <= 0.1) continue;
      ++checked;
      double err = 0.0;
      for (std::size_t j = 0; j < 10; ++j) {
        err = std::max(err, std::abs(out.output.value().at(r, j) - out.sample.onehot.at(r, j)));
      }
      CHECK(err < 1e-6);
    }
  }
  CHECK(checked > 5000);
}

TEST_CASE("STGS soft output at tau = 1 is softmax(l + G)") {
  RngStream rng(14);
  const EstimatorConfig cfg = with_mode(parse_estimator_label("STGS", 1.0), SampleMode::Soft);
  const Tensor logits = random_tensor({20, 7}, rng);
  const FrozenNoise noise = draw_noise(logits, cfg, rng);
  Tape tape;
  const SurrogateOutput out = apply_estimator(tape.constant(logits), noise, cfg);
  Tensor perturbed = logits;
  for (std::size_t i = 0; i < perturbed.size(); ++i) perturbed[i] += noise.perturbation[i];
  CHECK(out.output.value() == softmax_rows(perturbed, 1.0));
  for (std::size_t r = 0; r < 20; ++r) CHECK(argmax(perturbed.row(r)) == noise.sample.index[r]);
}

TEST_CASE("GR-MCK: K = 1 matches STGS in distribution; larger K lowers variance") {
  RngStream rng(3141);
  const Tensor logits = random_tensor({1, 10}, rng);
  const Tensor w = random_tensor({1, 10}, rng);
  constexpr std::size_t kDraws = 10'000;

  auto moments = [&](const EstimatorConfig& cfg, std::uint64_t seed) {
    RngStream stream(seed);
    std::vector<stats::RunningMoments> per(10);
    for (std::size_t t = 0; t < kDraws; ++t) {
      const Tensor g = linear_loss(logits, w, draw_noise(logits, cfg, stream), cfg).second;
      for (std::size_t j = 0; j < 10; ++j) per[j].add(g[j]);
    }
    return per;
  };
  auto total_var = [](const std::vector<stats::RunningMoments>& m) {
    double v = 0.0;
    for (const auto& x : m) v += x.variance();
    return v;
  };

  const auto stgs_m = moments(parse_estimator_label("STGS", 0.5), 1);
  const auto k1 = moments(parse_estimator_label("GR-MC1", 0.5), 2);
  const auto k10 = moments(parse_estimator_label("GR-MC10", 0.5), 3);
  const auto k100 = moments(parse_estimator_label("GR-MC100", 0.5), 4);

  // Mean of the projection onto the first coordinate and the total variance.
  const double se_mean = std::hypot(stgs_m[0].stderr_of_mean(), k1[0].stderr_of_mean());
  CHECK(std::abs(stgs_m[0].mean() - k1[0].mean()) < 3.0 * se_mean);
  double mean_gap = 0.0, se_total = 0.0;
  for (std::size_t j = 0; j < 10; ++j) {
    mean_gap += stgs_m[j].mean() - k1[j].mean();
    se_total += std::pow(stgs_m[j].stderr_of_mean(), 2) + std::pow(k1[j].stderr_of_mean(), 2);
  }
  CHECK(std::abs(mean_gap) < 3.0 * std::sqrt(se_total));

  const double v_stgs = total_var(stgs_m), v1 = total_var(k1);
  // Variance of a sample variance ~ 2 sigma^4 / (n - 1) for a rough SE.
  const double se_var = std::sqrt(2.0 / (kDraws - 1)) * std::hypot(v_stgs, v1);
  CHECK(std::abs(v_stgs - v1) < 3.0 * se_var);

  CHECK(total_var(k10) < v1);
  CHECK(total_var(k100) < total_var(k10));
}

TEST_CASE("GST gradient is a deterministic function of the sample") {
  RngStream rng(77);
  const EstimatorConfig cfg = parse_estimator_label("GST-1.0", 0.5);
  const Tensor logits = random_tensor({3, 6}, rng);
  const Tensor w = random_tensor({3, 6}, rng);
  const OneHotBatch d = sample_onehot(logits, rng);
  const Tensor g0 = linear_loss(logits, w, draw_noise_given(logits, d, cfg, rng), cfg).second;
  for (int t = 0; t < 20; ++t) {
    CHECK(linear_loss(logits, w, draw_noise_given(logits, d, cfg, rng), cfg).second == g0);
  }
}

TEST_CASE("NZ-GST: same forward as GST, different gradient") {
  const Tensor logits = Tensor::matrix(1, 5, {0.3, -1.2, 0.9, 2.1, -0.4});
  const Tensor w = Tensor::matrix(1, 5, {0.5, -1.0, 2.0, 0.3, 1.1});
  const EstimatorConfig gst_cfg = parse_estimator_label("GST-1.0", 0.5);
  const EstimatorConfig nz_cfg = parse_estimator_label("NZ-GST-1.0", 0.5);
  // The two gradients coincide exactly when the perturbation is inactive (D
  // selects the maximum and no unselected logit is within g of it); every
  // other draw must differ.
  std::size_t differing = 0, active = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    RngStream a(seed), b(seed);
    Tape ta, tb;
    const SurrogateOutput ga = gst::gst(ta.constant(logits), gst_cfg, a);
    const SurrogateOutput nb = nz_gst(tb.constant(logits), nz_cfg, b);
    CHECK(ga.output.value() == nb.output.value());
    CHECK(close_rel(ga.surrogate_probs.value(), nb.surrogate_probs.value(), 1e-14, 1e-15));

    RngStream c(seed), d(seed);
    const FrozenNoise frozen = draw_noise(logits, gst_cfg, c);
    bool perturbed = false;
    for (double v : frozen.perturbation.data()) perturbed = perturbed || v != 0.0;
    active += perturbed;
    const auto g_gst = linear_loss(logits, w, frozen, gst_cfg).second;
    const auto g_nz = linear_loss(logits, w, draw_noise(logits, nz_cfg, d), nz_cfg).second;
    double diff = 0.0;
    for (std::size_t j = 0; j < 5; ++j) diff = std::max(diff, std::abs(g_gst[j] - g_nz[j]));
    differing += diff > 1e-8;
    if (!perturbed) CHECK(diff == 0.0);
  }
  CHECK(active > 50);
  CHECK(differing == active);
}

TEST_CASE("per-row randomness does not depend on the batch size") {
  RngStream rng(5);
  const Tensor logits = random_tensor({6, 4}, rng);
  Tensor first_two({2, 4});
  std::copy_n(logits.data().begin(), 8, first_two.data().begin());
  for (const auto& cfg : straight_through_configs(0.5)) {
    RngStream a(900), b(900);
    const FrozenNoise big = draw_noise(logits, cfg, a);
    const FrozenNoise small = draw_noise(first_two, cfg, b);
    CHECK(big.sample.index[0] == small.sample.index[0]);
    CHECK(big.sample.index[1] == small.sample.index[1]);
    const std::size_t shared = small.perturbation.size();
    for (std::size_t i = 0; i < shared; ++i) CHECK(big.perturbation[i] == small.perturbation[i]);
  }
}

TEST_CASE("single category is degenerate but well-defined") {
  RngStream rng(1);
  for (const auto& cfg : straight_through_configs(0.5)) {
    Tape tape;
    Value l = tape.variable(Tensor({3, 1}, 0.7));
    const SurrogateOutput out = estimate(l, cfg, rng);
    CHECK(out.output.value() == Tensor({3, 1}, 1.0));
    tape.backward(ops::sum(out.output));
    CHECK(l.grad() == Tensor({3, 1}, 0.0));
  }
}

TEST_CASE("estimators are bitwise reproducible") {
  RngStream rng(0);
  const Tensor logits = random_tensor({16, 10}, rng);
  const Tensor w = random_tensor({16, 10}, rng);
  for (const auto& cfg : straight_through_configs(0.3)) {
    RngStream a(42), b(42);
    const auto x = linear_loss(logits, w, draw_noise(logits, cfg, a), cfg);
    const auto y = linear_loss(logits, w, draw_noise(logits, cfg, b), cfg);
    CHECK(x.first == y.first);
    CHECK(x.second == y.second);
  }
}

TEST_CASE("wrappers reject a mismatched config and REINFORCE has no surrogate") {
  RngStream rng(0);
  Tape tape;
  Value l = tape.variable(Tensor({1, 3}));
  CHECK_THROWS_AS(gst::gst(l, parse_estimator_label("STGS"), rng), std::invalid_argument);
  CHECK_THROWS_AS(estimate(l, parse_estimator_label("REINFORCE"), rng), std::invalid_argument);
}

TEST_CASE("REINFORCE recovers the analytic two-category gradient") {
  RngStream rng(10);
  const LogitVector l({0.0, 0.0});
  const auto batch = reinforce_grad(l, [](const OneHotSample& d) { return d.index == 0 ? 1.0 : 0.0; },
                                    rng, 1'000'000);
  stats::RunningMoments g0, g1;
  for (std::size_t s = 0; s < batch.samples.rows(); ++s) {
    g0.add(batch.samples.at(s, 0));
    g1.add(batch.samples.at(s, 1));
  }
  CHECK(std::abs(g0.mean() - 0.25) < 0.005);
  CHECK(std::abs(g1.mean() + 0.25) < 0.005);

  const auto constant = reinforce_grad(l, [](const OneHotSample&) { return 3.0; }, rng, 100'000);
  stats::RunningMoments c0;
  for (std::size_t s = 0; s < constant.samples.rows(); ++s) c0.add(constant.samples.at(s, 0));
  CHECK(std::abs(c0.mean()) < 4.0 * c0.stderr_of_mean());
}

TEST_CASE("REINFORCE has higher variance than straight-through estimators") {
  RngStream rng(12);
  const LogitVector l({0.0, 0.0});
  const auto rf = reinforce_grad(l, [](const OneHotSample& d) { return d.index == 0 ? 1.0 : 0.0; },
                                 rng, 100'000);
  double rf_var = 0.0;
  for (std::size_t j = 0; j < 2; ++j) {
    stats::RunningMoments m;
    for (std::size_t s = 0; s < rf.samples.rows(); ++s) m.add(rf.samples.at(s, j));
    rf_var += m.variance();
  }
  const Tensor logits = Tensor::matrix(1, 2, {0.0, 0.0});
  const Tensor w = Tensor::matrix(1, 2, {1.0, 0.0});
  for (const char* label : {"STGS", "GST-1.0", "GR-MC10"}) {
    const EstimatorConfig cfg = parse_estimator_label(label, 1.0);
    std::vector<stats::RunningMoments> m(2);
    for (int t = 0; t < 100'000; ++t) {
      const Tensor g = linear_loss(logits, w, draw_noise(logits, cfg, rng), cfg).second;
      m[0].add(g[0]);
      m[1].add(g[1]);
    }
    CAPTURE(label);
    CHECK(rf_var > m[0].variance() + m[1].variance());
  }
}
