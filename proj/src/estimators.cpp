#include "gst/estimators.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>

#include "gst/numeric.hpp"

namespace gst {

namespace {

constexpr double kGapProbabilityClamp = 1e-6;

std::string format_gap(double g) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", g);
  if (std::abs(std::strtod(buf, nullptr) - g) > 1e-12) std::snprintf(buf, sizeof buf, "%g", g);
  return buf;
}

void require_kind(const EstimatorConfig& cfg, EstimatorKind expected) {
  if (cfg.kind != expected) {
    throw std::invalid_argument("estimator called with config for " + to_string(cfg.kind) +
                                ", expected " + to_string(expected));
  }
}

// Gumbel-Max per row; optionally records the Gumbel noise itself.
OneHotBatch sample_rows(const Tensor& logits0, RngStream& row_seed, Tensor* gumbel) {
  const std::size_t rows = logits0.rows();
  const std::size_t n = logits0.cols();
  const std::uint64_t base = row_seed.next();
  OneHotBatch out{std::vector<std::size_t>(rows), Tensor({rows, n})};
  std::vector<double> perturbed(n);
  for (std::size_t r = 0; r < rows; ++r) {
    RngStream rng(mix_seed(base, r));
    auto l = logits0.row(r);
    for (std::size_t j = 0; j < n; ++j) {
      const double g = -std::log(-std::log(rng.uniform_open()));
      perturbed[j] = l[j] + g;
      if (gumbel) gumbel->row(r)[j] = g;
    }
    out.index[r] = argmax(perturbed);
    out.onehot.at(r, out.index[r]) = 1.0;
  }
  return out;
}

std::vector<double> row_gaps(const Tensor& logits0, const OneHotBatch& d, const GapRule& rule) {
  std::vector<double> gaps(logits0.rows(), rule.value);
  if (logits0.cols() == 1) {
    std::fill(gaps.begin(), gaps.end(), 0.0);
    return gaps;
  }
  if (rule.expected_stgs_gap) {
    std::vector<double> p(logits0.cols());
    for (std::size_t r = 0; r < logits0.rows(); ++r) {
      softmax_into(logits0.row(r), 1.0, p);
      gaps[r] = expected_stgs_gap(p[d.index[r]]);
    }
  }
  return gaps;
}

// Noise that only depends on the one-hot sample and the stop-gradient
// logits, drawn from `base` with one sub-stream per row.
void fill_conditional_noise(const Tensor& logits0, const OneHotBatch& d,
                            const EstimatorConfig& cfg, std::uint64_t base, FrozenNoise& out) {
  const std::size_t rows = logits0.rows();
  const std::size_t n = logits0.cols();
  switch (cfg.kind) {
    case EstimatorKind::Stgs:
    case EstimatorKind::GrMck: {
      const std::size_t k = cfg.kind == EstimatorKind::Stgs ? 1 : cfg.mc_samples;
      out.perturbation = Tensor({rows * k, n});
      for (std::size_t r = 0; r < rows; ++r) {
        RngStream rng(mix_seed(base, r));
        auto l = logits0.row(r);
        for (std::size_t s = 0; s < k; ++s) {
          auto dst = out.perturbation.row(r * k + s);
          conditional_perturbed_into(l, d.index[r], rng, dst);
          for (std::size_t j = 0; j < n; ++j) dst[j] -= l[j];
        }
      }
      break;
    }
    case EstimatorKind::Gst: {
      out.gaps = row_gaps(logits0, d, cfg.gap);
      Tensor m1 = compute_m1(logits0, d);
      const Tensor m2 = compute_m2(logits0, d, out.gaps);
      for (std::size_t i = 0; i < m1.size(); ++i) m1[i] -= m2[i];
      out.perturbation = std::move(m1);
      break;
    }
    case EstimatorKind::NzGst:
      out.gaps = row_gaps(logits0, d, cfg.gap);
      break;
    case EstimatorKind::StNaive:
    case EstimatorKind::Reinforce:
      break;
  }
}

}  // namespace

std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::Reinforce: return "REINFORCE";
    case EstimatorKind::StNaive: return "ST";
    case EstimatorKind::Stgs: return "STGS";
    case EstimatorKind::GrMck: return "GR-MCK";
    case EstimatorKind::Gst: return "GST";
    case EstimatorKind::NzGst: return "NZ-GST";
  }
  return "?";
}

EstimatorKind parse_estimator_kind(const std::string& name) {
  std::string up;
  for (char c : name) up.push_back(c == '_' ? '-' : static_cast<char>(std::toupper(c)));
  if (up == "REINFORCE") return EstimatorKind::Reinforce;
  if (up == "ST" || up == "ST-NAIVE") return EstimatorKind::StNaive;
  if (up == "STGS") return EstimatorKind::Stgs;
  if (up == "GR-MCK" || up == "GR-MC") return EstimatorKind::GrMck;
  if (up == "GST") return EstimatorKind::Gst;
  if (up == "NZ-GST") return EstimatorKind::NzGst;
  throw std::invalid_argument("unknown estimator kind '" + name + "'");
}

std::string GapRule::to_string() const {
  return expected_stgs_gap ? "pi" : format_gap(value);
}

void EstimatorConfig::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("estimator temperature must be > 0");
  if (!gap.expected_stgs_gap && !(gap.value >= 0.0)) {
    throw std::invalid_argument("gap must be >= 0");
  }
  if (mc_samples < 1) throw std::invalid_argument("mc_samples must be >= 1");
}

std::string EstimatorConfig::label() const {
  switch (kind) {
    case EstimatorKind::GrMck: return "GR-MC" + std::to_string(mc_samples);
    case EstimatorKind::Gst: return "GST-" + gap.to_string();
    case EstimatorKind::NzGst: return "NZ-GST-" + gap.to_string();
    default: return to_string(kind);
  }
}

EstimatorConfig parse_estimator_label(const std::string& label, double tau) {
  EstimatorConfig cfg;
  cfg.tau = tau;
  auto gap_suffix = [&](std::size_t prefix) {
    const std::string rest = label.substr(prefix);
    if (rest == "pi") return GapRule::pi();
    std::size_t used = 0;
    const double g = std::stod(rest, &used);
    if (used != rest.size()) throw std::invalid_argument("bad gap in '" + label + "'");
    return GapRule::constant(g);
  };
  try {
    if (label.rfind("NZ-GST-", 0) == 0) {
      cfg.kind = EstimatorKind::NzGst;
      cfg.gap = gap_suffix(7);
    } else if (label.rfind("GST-", 0) == 0) {
      cfg.kind = EstimatorKind::Gst;
      cfg.gap = gap_suffix(4);
    } else if (label.rfind("GR-MC", 0) == 0 && label.size() > 5 && label != "GR-MCK") {
      cfg.kind = EstimatorKind::GrMck;
      std::size_t used = 0;
      cfg.mc_samples = std::stoul(label.substr(5), &used);
      if (used != label.size() - 5) throw std::invalid_argument("bad K");
    } else {
      cfg.kind = parse_estimator_kind(label);
    }
  } catch (const std::logic_error&) {
    throw std::invalid_argument("cannot parse estimator label '" + label + "'");
  }
  cfg.validate();
  return cfg;
}

OneHotBatch make_onehot_batch(std::vector<std::size_t> index, std::size_t n) {
  OneHotBatch out{std::move(index), Tensor({0, n})};
  out.onehot = Tensor({out.index.size(), n});
  for (std::size_t r = 0; r < out.index.size(); ++r) {
    if (out.index[r] >= n) throw std::out_of_range("one-hot index out of range");
    out.onehot.at(r, out.index[r]) = 1.0;
  }
  return out;
}

double expected_stgs_gap(double p) {
  p = std::clamp(p, kGapProbabilityClamp, 1.0 - kGapProbabilityClamp);
  return -std::log1p(-p) / p;
}

Tensor compute_m1(const Tensor& logits0, const OneHotBatch& d) {
  if (!logits0.same_shape(d.onehot)) throw ShapeError("compute_m1: shape mismatch");
  Tensor m1(logits0.shape());
  for (std::size_t r = 0; r < logits0.rows(); ++r) {
    auto l = logits0.row(r);
    const double top = *std::max_element(l.begin(), l.end());
    m1.at(r, d.index[r]) = top - l[d.index[r]];
  }
  return m1;
}

Tensor compute_m2(const Tensor& logits0, const OneHotBatch& d, std::span<const double> gaps) {
  if (!logits0.same_shape(d.onehot)) throw ShapeError("compute_m2: shape mismatch");
  if (gaps.size() != logits0.rows()) throw ShapeError("compute_m2: one gap per row expected");
  Tensor m2(logits0.shape());
  for (std::size_t r = 0; r < logits0.rows(); ++r) {
    if (!(gaps[r] >= 0.0)) throw std::invalid_argument("compute_m2: gap must be >= 0");
    auto l = logits0.row(r);
    const double top = *std::max_element(l.begin(), l.end());
    auto dst = m2.row(r);
    for (std::size_t j = 0; j < l.size(); ++j) {
      if (j == d.index[r]) continue;
      dst[j] = std::max(l[j] + gaps[r] - top, 0.0);
    }
  }
  return m2;
}

Tensor compute_m2(const Tensor& logits0, const OneHotBatch& d, double g) {
  const std::vector<double> gaps(logits0.rows(), g);
  return compute_m2(logits0, d, gaps);
}

OneHotBatch sample_onehot(const Tensor& logits0, RngStream& rng) {
  return sample_rows(logits0, rng, nullptr);
}

FrozenNoise draw_noise(const Tensor& logits0, const EstimatorConfig& cfg, RngStream& rng) {
  cfg.validate();
  FrozenNoise out;
  if (cfg.kind == EstimatorKind::Stgs) {
    // The joint Gumbel draw both selects D and provides the surrogate noise.
    out.perturbation = Tensor({logits0.rows(), logits0.cols()});
    out.sample = sample_rows(logits0, rng, &out.perturbation);
    return out;
  }
  out.sample = sample_rows(logits0, rng, nullptr);
  fill_conditional_noise(logits0, out.sample, cfg, rng.next(), out);
  return out;
}

FrozenNoise draw_noise_given(const Tensor& logits0, const OneHotBatch& sample,
                             const EstimatorConfig& cfg, RngStream& rng) {
  cfg.validate();
  if (!logits0.same_shape(sample.onehot)) throw ShapeError("draw_noise_given: shape mismatch");
  FrozenNoise out;
  out.sample = sample;
  fill_conditional_noise(logits0, sample, cfg, rng.next(), out);
  return out;
}

Value straight_through_combine(const Tensor& hard, Value h) {
  if (!hard.same_shape(h.value())) {
    throw ShapeError("straight_through_combine: shape mismatch " + to_string(hard.shape()) +
                     " vs " + to_string(h.shape()));
  }
  Tape& tape = h.tape();
  return ops::add(ops::sub(tape.constant(hard), ops::stop_grad(h)), h);
}

SurrogateOutput apply_estimator(Value logits, const FrozenNoise& noise,
                                const EstimatorConfig& cfg) {
  cfg.validate();
  const Tensor& l0 = logits.value();
  if (l0.rank() != 2) throw ShapeError("estimators expect (rows x N) logits");
  if (!l0.same_shape(noise.sample.onehot)) throw ShapeError("noise does not match logits");
  Tape& tape = logits.tape();
  SurrogateOutput out;
  out.sample = noise.sample;

  Value z;
  switch (cfg.kind) {
    case EstimatorKind::Reinforce:
      throw std::invalid_argument("REINFORCE has no straight-through surrogate");
    case EstimatorKind::StNaive:
      z = logits;
      break;
    case EstimatorKind::Stgs:
    case EstimatorKind::Gst:
      z = ops::add(logits, tape.constant(noise.perturbation));
      break;
    case EstimatorKind::NzGst: {
      // Same perturbation as GST but computed from the live logits.
      const Tensor& d = noise.sample.onehot;
      Tensor not_d(d.shape(), 1.0);
      Tensor gap(d.shape());
      for (std::size_t r = 0; r < d.rows(); ++r) {
        for (std::size_t j = 0; j < d.cols(); ++j) {
          not_d.at(r, j) -= d.at(r, j);
          gap.at(r, j) = noise.gaps[r];
        }
      }
      Value top = ops::row_max_broadcast(logits);
      Value m1 = ops::mul(ops::sub(top, logits), tape.constant(d));
      Value m2 = ops::mul(ops::relu_plus(ops::sub(ops::add(logits, tape.constant(gap)), top)),
                          tape.constant(not_d));
      z = ops::sub(ops::add(logits, m1), m2);
      break;
    }
    case EstimatorKind::GrMck: {
      const std::size_t k = cfg.mc_samples;
      if (noise.perturbation.rows() != l0.rows() * k) {
        throw ShapeError("GR-MCK noise has wrong number of rows");
      }
      std::vector<std::size_t> rep(l0.rows() * k);
      for (std::size_t i = 0; i < rep.size(); ++i) rep[i] = i / k;
      Value zk = ops::add(ops::gather_rows(logits, std::move(rep)),
                          tape.constant(noise.perturbation));
      out.surrogate_logits = zk.value();
      Value h = ops::row_group_mean(ops::softmax_tau(zk, cfg.tau), k);
      out.surrogate_probs = h;
      out.output = cfg.mode == SampleMode::Hard ? straight_through_combine(noise.sample.onehot, h) : h;
      return out;
    }
  }
  Value h = ops::softmax_tau(z, cfg.tau);
  out.surrogate_logits = z.value();
  out.surrogate_probs = h;
  out.output = cfg.mode == SampleMode::Hard ? straight_through_combine(noise.sample.onehot, h) : h;
  return out;
}

SurrogateOutput estimate(Value logits, const EstimatorConfig& cfg, RngStream& rng) {
  const FrozenNoise noise = draw_noise(logits.value(), cfg, rng);
  return apply_estimator(logits, noise, cfg);
}

SurrogateOutput st_naive(Value logits, const EstimatorConfig& cfg, RngStream& rng) {
  require_kind(cfg, EstimatorKind::StNaive);
  return estimate(logits, cfg, rng);
}

SurrogateOutput stgs(Value logits, const EstimatorConfig& cfg, RngStream& rng) {
  require_kind(cfg, EstimatorKind::Stgs);
  return estimate(logits, cfg, rng);
}

SurrogateOutput gr_mck(Value logits, const EstimatorConfig& cfg, RngStream& rng) {
  require_kind(cfg, EstimatorKind::GrMck);
  return estimate(logits, cfg, rng);
}

SurrogateOutput gst(Value logits, const EstimatorConfig& cfg, RngStream& rng) {
  require_kind(cfg, EstimatorKind::Gst);
  return estimate(logits, cfg, rng);
}

SurrogateOutput nz_gst(Value logits, const EstimatorConfig& cfg, RngStream& rng) {
  require_kind(cfg, EstimatorKind::NzGst);
  return estimate(logits, cfg, rng);
}

GradientBatch reinforce_grad(const LogitVector& logits,
                             const std::function<double(const OneHotSample&)>& loss_per_category,
                             RngStream& rng, std::size_t n_samples) {
  const std::size_t n = logits.size();
  // Score d/dl log p(e_i) for every category, through the tape.
  Tensor scores({n, n});
  const Tensor l0({1, n}, std::vector<double>(logits.values().begin(), logits.values().end()));
  for (std::size_t i = 0; i < n; ++i) {
    Tape tape;
    Value l = tape.variable(l0);
    Tensor pick({1, n});
    pick[i] = 1.0;
    Value log_p = ops::sum(ops::mul(ops::log_softmax(l), tape.constant(pick)));
    tape.backward(log_p);
    std::copy_n(l.grad().data().begin(), n, scores.row(i).begin());
  }
  std::vector<double> loss(n);
  for (std::size_t i = 0; i < n; ++i) loss[i] = loss_per_category(OneHotSample::make(i, n));

  GradientBatch batch{Tensor({n_samples, n}), "REINFORCE", rng.seed()};
  std::vector<double> perturbed(n);
  for (std::size_t s = 0; s < n_samples; ++s) {
    const std::size_t i = gumbel_max_into(logits.values(), rng, perturbed);
    auto dst = batch.samples.row(s);
    for (std::size_t j = 0; j < n; ++j) dst[j] = loss[i] * scores.at(i, j);
  }
  return batch;
}

}  // namespace gst
