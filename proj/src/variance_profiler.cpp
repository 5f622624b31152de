#include "gst/variance_profiler.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "gst/stats.hpp"

namespace gst {

namespace {

constexpr std::size_t kStderrBatches = 10;

void check_finite(const std::vector<double>& g, std::size_t resample) {
  for (double v : g) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite gradient at resample " + std::to_string(resample));
    }
  }
}

// Per-parameter Welford accumulators.
class VectorMoments {
 public:
  explicit VectorMoments(std::size_t p) : mean_(p, 0.0), m2_(p, 0.0) {}

  void add(const std::vector<double>& x) {
    ++n_;
    const double inv = 1.0 / static_cast<double>(n_);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double delta = x[i] - mean_[i];
      mean_[i] += delta * inv;
      m2_[i] += delta * (x[i] - mean_[i]);
    }
  }

  std::size_t count() const { return n_; }
  const std::vector<double>& mean() const { return mean_; }
  std::vector<double> variance() const {
    std::vector<double> v(m2_.size(), 0.0);
    if (n_ < 2) return v;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = m2_[i] / static_cast<double>(n_ - 1);
    return v;
  }
  double total_variance() const {
    double t = 0.0;
    for (double v : variance()) t += v;
    return t;
  }

 private:
  std::size_t n_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

VarianceReport make_report(const EstimatorConfig& cfg, const RngStream& rng) {
  VarianceReport r;
  r.estimator = cfg.label();
  r.tau = cfg.tau;
  r.gap = (cfg.kind == EstimatorKind::Gst || cfg.kind == EstimatorKind::NzGst) ? cfg.gap.to_string() : "";
  r.mc_samples = cfg.kind == EstimatorKind::GrMck ? cfg.mc_samples : 1;
  r.seed = rng.seed();
  return r;
}

}  // namespace

LinearLogitProblem::LinearLogitProblem(Tensor logits, Tensor weights)
    : logits_(std::move(logits)), weights_(std::move(weights)) {
  if (logits_.rank() == 1) logits_ = logits_.reshaped({1, logits_.size()});
  if (weights_.size() != logits_.size()) throw ShapeError("LinearLogitProblem: weight shape mismatch");
  weights_ = weights_.reshaped(logits_.shape());
}

std::vector<double> LinearLogitProblem::gradient(const FrozenNoise& noise,
                                                 const EstimatorConfig& cfg) {
  Tape tape;
  Value l = tape.variable(logits_);
  const SurrogateOutput out = apply_estimator(l, noise, cfg);
  tape.backward(ops::sum(ops::mul(out.output, tape.constant(weights_))));
  return l.grad().to_vector();
}

VarianceReport gradient_variance(GradientProblem& problem, const EstimatorConfig& cfg,
                                 std::size_t resamples, RngStream& rng) {
  if (resamples < 100) throw std::invalid_argument("gradient_variance needs >= 100 resamples");
  VectorMoments all(problem.parameter_count());
  const std::size_t per_batch = resamples / kStderrBatches;
  std::vector<VectorMoments> batches(kStderrBatches, VectorMoments(problem.parameter_count()));
  for (std::size_t r = 0; r < resamples; ++r) {
    RngStream stream = rng.substream(r);
    const FrozenNoise noise = draw_noise(problem.logits(), cfg, stream);
    const std::vector<double> g = problem.gradient(noise, cfg);
    check_finite(g, r);
    all.add(g);
    const std::size_t b = r / per_batch;
    if (b < kStderrBatches) batches[b].add(g);
  }
  VarianceReport report = make_report(cfg, rng);
  report.per_parameter_variance = all.variance();
  report.mean_gradient = all.mean();
  report.total_variance = all.total_variance();
  stats::RunningMoments batch_totals;
  for (const auto& b : batches) batch_totals.add(b.total_variance());
  report.total_variance_stderr = batch_totals.stderr_of_mean();
  report.n_outer = resamples;
  report.n_inner = 1;
  return report;
}

VarianceReport variance_decomposition(GradientProblem& problem, const EstimatorConfig& cfg,
                                      std::size_t n_outer, std::size_t n_inner,
                                      RngStream& rng) {
  if (cfg.kind != EstimatorKind::Stgs && cfg.kind != EstimatorKind::GrMck &&
      cfg.kind != EstimatorKind::Gst) {
    throw std::invalid_argument("variance_decomposition supports STGS, GR-MCK and GST only");
  }
  if (n_outer < 50 || n_inner < 50) {
    throw std::invalid_argument("variance_decomposition needs n_outer, n_inner >= 50");
  }
  const std::size_t p = problem.parameter_count();
  VectorMoments outer_means(p);
  stats::RunningMoments inner_totals;
  // Batch means over outer draws for standard errors of term (b).
  const std::size_t per_batch = n_outer / kStderrBatches;
  std::vector<VectorMoments> batches(kStderrBatches, VectorMoments(p));
  std::vector<stats::RunningMoments> batch_inner(kStderrBatches);

  for (std::size_t o = 0; o < n_outer; ++o) {
    RngStream outer = rng.substream(o);
    const OneHotBatch d = sample_onehot(problem.logits(), outer);
    VectorMoments inner(p);
    for (std::size_t k = 0; k < n_inner; ++k) {
      RngStream stream = outer.substream(k);
      const FrozenNoise noise = draw_noise_given(problem.logits(), d, cfg, stream);
      const std::vector<double> g = problem.gradient(noise, cfg);
      check_finite(g, o * n_inner + k);
      inner.add(g);
    }
    const double inner_total = inner.total_variance();
    outer_means.add(inner.mean());
    inner_totals.add(inner_total);
    const std::size_t b = o / per_batch;
    if (b < kStderrBatches) {
      batches[b].add(inner.mean());
      batch_inner[b].add(inner_total);
    }
  }

  const double inv_inner = 1.0 / static_cast<double>(n_inner);
  VarianceReport report = make_report(cfg, rng);
  report.term_a = inner_totals.mean();
  report.term_b = outer_means.total_variance() - *report.term_a * inv_inner;
  report.term_a_stderr = inner_totals.stderr_of_mean();
  stats::RunningMoments b_est;
  for (std::size_t b = 0; b < kStderrBatches; ++b) {
    b_est.add(batches[b].total_variance() - batch_inner[b].mean() * inv_inner);
  }
  report.term_b_stderr = b_est.stderr_of_mean();
  report.mean_gradient = outer_means.mean();
  report.total_variance = *report.term_a + *report.term_b;
  report.total_variance_stderr = std::hypot(report.term_a_stderr, report.term_b_stderr);
  report.n_outer = n_outer;
  report.n_inner = n_inner;
  return report;
}

double row_entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double surrogate_entropy(const SurrogateOutput& output) {
  const Tensor& probs = output.surrogate_probs.value();
  double total = 0.0;
  for (std::size_t r = 0; r < probs.rows(); ++r) total += row_entropy(probs.row(r));
  return total / static_cast<double>(probs.rows());
}

void write_variance_csv_header(std::ostream& out) {
  out << "estimator,tau,gap,K,total_variance,term_a,term_b,n_resamples,seed\n";
}

void write_variance_csv_row(std::ostream& out, const VarianceReport& r) {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << r.estimator << ',' << num(r.tau) << ',' << r.gap << ',' << r.mc_samples << ','
      << num(r.total_variance) << ',' << (r.term_a ? num(*r.term_a) : "") << ','
      << (r.term_b ? num(*r.term_b) : "") << ',' << r.n_outer * r.n_inner << ',' << r.seed
      << '\n';
}

}  // namespace gst
