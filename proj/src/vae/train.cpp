#include "gst/vae/train.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "gst/stats.hpp"
#include "gst/vae/data.hpp"
#include "gst/variance_profiler.hpp"

namespace gst::vae {

namespace {

constexpr char kMagic[8] = {'G', 'S', 'T', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr double kDivergenceFactor = 10.0;
constexpr std::size_t kDivergencePatience = 3;

// Stream tags so every consumer of a seed gets an independent sequence.
enum : std::uint64_t { kInitStream = 1, kShuffleStream, kEstimatorStream, kEvalStream, kProfileStream };

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct EvalTerms {
  double recon = 0.0;
  double kl = 0.0;
};

// The forward pass of every straight-through estimator in hard mode is the
// one-hot sample itself, so evaluation uses plain sampling.
EvalTerms evaluate(const VaeModel& model, const Tensor& eval, std::size_t batch_size,
                   std::uint64_t seed) {
  EstimatorConfig plain;
  plain.kind = EstimatorKind::StNaive;
  RngStream rng(mix_seed(seed, kEvalStream));
  double recon = 0.0;
  double kl = 0.0;
  for (std::size_t begin = 0; begin < eval.rows(); begin += batch_size) {
    const std::size_t end = std::min(eval.rows(), begin + batch_size);
    const Tensor batch = slice_rows(eval, begin, end);
    Tape tape;
    const BoundModel bound = bind(tape, model);
    const ElboTerms terms = elbo_loss(tape, bound, batch, plain, rng);
    const double rows = static_cast<double>(end - begin);
    recon += terms.reconstruction * rows;
    kl += terms.kl * rows;
  }
  const double n = static_cast<double>(eval.rows());
  return {recon / n, kl / n};
}

void append_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
std::uint64_t read_le(std::istream& in, int bytes, const std::filesystem::path& path) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = in.get();
    if (c == EOF) {
      throw std::runtime_error("truncated checkpoint " + path.string() + " at byte offset " +
                               std::to_string(static_cast<long long>(in.tellg())));
    }
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

bool params_finite(const VaeModel& model) {
  for (const Tensor& t : model.parameters()) {
    if (!t.all_finite()) return false;
  }
  return true;
}

}  // namespace

Dataset load_dataset(const DatasetConfig& cfg) {
  Dataset data;
  if (cfg.kind == DatasetConfig::Kind::Synthetic) {
    RngStream rng(cfg.seed);
    const Tensor all = synth_dataset(cfg.n + cfg.eval_n, cfg.pattern_count, rng);
    data.train = slice_rows(all, 0, cfg.n);
    data.eval = slice_rows(all, cfg.n, cfg.n + cfg.eval_n);
  } else {
    if (cfg.path.empty()) {
      throw std::runtime_error("MNIST dataset needs data.path or GST_DATA_DIR");
    }
    const std::filesystem::path root(cfg.path);
    Tensor train = load_mnist(root, true).images;
    const bool has_test = std::filesystem::is_directory(root) &&
                          std::filesystem::exists(root / "t10k-images-idx3-ubyte");
    if (has_test) {
      data.train = slice_rows(train, 0, std::min(cfg.n, train.rows()));
      const Tensor test = load_mnist(root, false).images;
      data.eval = slice_rows(test, 0, std::min(cfg.eval_n, test.rows()));
    } else {
      if (train.rows() < 2) throw std::runtime_error("MNIST file has fewer than 2 images");
      const std::size_t eval_n = std::min(cfg.eval_n, train.rows() / 2);
      const std::size_t n = std::min(cfg.n, train.rows() - eval_n);
      data.train = slice_rows(train, 0, n);
      data.eval = slice_rows(train, train.rows() - eval_n, train.rows());
    }
  }
  if (cfg.binarize) {
    data.train = binarize(data.train);
    data.eval = binarize(data.eval);
  }
  if (data.train.rows() == 0 || data.eval.rows() == 0) {
    throw std::runtime_error("dataset has no training or evaluation rows");
  }
  return data;
}

SeedOutcome train_seed(const TrainConfig& cfg, const Dataset& data, std::uint64_t seed,
                       VaeModel* final_model) {
  cfg.validate();
  using Clock = std::chrono::steady_clock;
  SeedOutcome outcome;
  outcome.seed = seed;

  VaeModel model(cfg.model, mix_seed(seed, kInitStream));
  AdamState adam;
  RngStream shuffle_rng(mix_seed(seed, kShuffleStream));
  RngStream estimator_rng(mix_seed(seed, kEstimatorStream));

  const EvalTerms initial = evaluate(model, data.eval, cfg.batch_size, seed);
  outcome.initial_neg_elbo = initial.recon + initial.kl;

  const std::size_t n = data.train.rows();
  std::vector<std::size_t> order(n);
  std::size_t step = 0;
  std::size_t over_limit = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = Clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.next() % i]);
    }

    double entropy_sum = 0.0;
    std::size_t batches = 0;
    try {
      for (std::size_t begin = 0; begin < n; begin += cfg.batch_size, ++step) {
        const std::size_t end = std::min(n, begin + cfg.batch_size);
        const Tensor batch =
            take_rows(data.train, std::span<const std::size_t>(order).subspan(begin, end - begin));
        EstimatorConfig step_cfg = cfg.estimator;
        step_cfg.tau = temperature_schedule(step, cfg.schedule);

        Tape tape;
        const BoundModel bound = bind(tape, model);
        const ElboTerms terms = elbo_loss(tape, bound, batch, step_cfg, estimator_rng);
        tape.backward(terms.loss);
        std::vector<Tensor> grads;
        grads.reserve(bound.params.size());
        for (const Value& p : bound.params) grads.push_back(p.grad());
        adam_step(model.parameters(), grads, adam, cfg.learning_rate);
        if (!params_finite(model)) throw NumericError("non-finite parameter after Adam update");
        entropy_sum += terms.entropy;
        ++batches;
      }
    } catch (const NumericError& e) {
      outcome.diverged = true;
      outcome.diagnostic = "epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                           ": " + e.what();
      break;
    }

    EpochMetrics m;
    m.epoch = epoch;
    const EvalTerms eval = evaluate(model, data.eval, cfg.batch_size, seed);
    m.reconstruction_term = eval.recon;
    m.kl_term = eval.kl;
    m.mean_neg_elbo = eval.recon + eval.kl;
    m.mean_surrogate_entropy = batches ? entropy_sum / static_cast<double>(batches) : 0.0;
    if (cfg.variance_resamples > 0) {
      const std::size_t rows = std::min(cfg.variance_batch, data.eval.rows());
      VaeSnapshotProblem problem(model, slice_rows(data.eval, 0, rows));
      RngStream profile_rng(mix_seed(mix_seed(seed, kProfileStream), epoch));
      EstimatorConfig profile_cfg = cfg.estimator;
      profile_cfg.tau = cfg.schedule.test_temperature();
      m.gradient_variance =
          gradient_variance(problem, profile_cfg, cfg.variance_resamples, profile_rng).total_variance;
    }
    m.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    outcome.epochs.push_back(m);

    if (!std::isfinite(m.mean_neg_elbo)) {
      outcome.diverged = true;
      outcome.diagnostic = "epoch " + std::to_string(epoch) + ": non-finite held-out loss";
      break;
    }
    over_limit = m.mean_neg_elbo > kDivergenceFactor * outcome.initial_neg_elbo ? over_limit + 1 : 0;
    if (over_limit >= kDivergencePatience) {
      outcome.diverged = true;
      outcome.diagnostic = "epoch " + std::to_string(epoch) + ": loss above " +
                           num(kDivergenceFactor) + "x initial for " +
                           std::to_string(kDivergencePatience) + " consecutive epochs";
      break;
    }
  }
  if (final_model) *final_model = std::move(model);
  return outcome;
}

bool TrainResult::any_diverged() const {
  for (const auto& s : seeds) {
    if (s.diverged) return true;
  }
  return false;
}

TrainResult train(const TrainConfig& cfg, const Dataset& data,
                  const std::optional<std::filesystem::path>& out_dir) {
  TrainResult result;
  std::ofstream csv;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    csv.open(*out_dir / "metrics.csv");
    if (!csv) throw std::runtime_error("cannot write " + (*out_dir / "metrics.csv").string());
    write_metrics_header(csv);
  }
  for (std::uint64_t seed : cfg.seeds) {
    VaeModel model(cfg.model, 0);
    SeedOutcome outcome = train_seed(cfg, data, seed, &model);
    if (out_dir) {
      for (const auto& m : outcome.epochs) write_metrics_row(csv, cfg, seed, m);
      csv.flush();
      save_checkpoint(*out_dir / ("checkpoint_seed" + std::to_string(seed) + ".bin"), model);
    }
    result.seeds.push_back(std::move(outcome));
  }
  return result;
}

void write_metrics_header(std::ostream& out) {
  out << "epoch,neg_elbo,kl,recon,entropy,grad_var,seconds,seed,estimator,tau,gap,K,schedule\n";
}

void write_metrics_row(std::ostream& out, const TrainConfig& cfg, std::uint64_t seed,
                       const EpochMetrics& m) {
  const EstimatorConfig& e = cfg.estimator;
  const bool has_gap = e.kind == EstimatorKind::Gst || e.kind == EstimatorKind::NzGst;
  out << m.epoch << ',' << num(m.mean_neg_elbo) << ',' << num(m.kl_term) << ','
      << num(m.reconstruction_term) << ',' << num(m.mean_surrogate_entropy) << ','
      << (m.gradient_variance ? num(*m.gradient_variance) : "") << ',' << num(m.wall_seconds)
      << ',' << seed << ',' << e.label() << ',' << num(cfg.schedule.test_temperature()) << ','
      << (has_gap ? e.gap.to_string() : "") << ','
      << (e.kind == EstimatorKind::GrMck ? e.mc_samples : 1) << ',' << cfg.schedule.to_string()
      << '\n';
}

SeedSummary summarize_final(const TrainResult& result) {
  stats::RunningMoments finals;
  SeedSummary s;
  for (const auto& seed : result.seeds) {
    if (seed.diverged) ++s.diverged;
    if (!seed.epochs.empty()) finals.add(seed.epochs.back().mean_neg_elbo);
  }
  s.mean = finals.count() ? finals.mean() : std::nan("");
  s.stddev = finals.count() > 1 ? std::sqrt(finals.variance()) : 0.0;
  return s;
}

void save_checkpoint(const std::filesystem::path& path, const VaeModel& model) {
  const auto& params = model.parameters();
  std::string bytes(kMagic, sizeof kMagic);
  append_le(bytes, kCheckpointVersion, 4);
  append_le(bytes, params.size(), 4);
  for (const Tensor& t : params) append_le(bytes, t.size(), 8);
  for (const Tensor& t : params) {
    for (double v : t.data()) append_le(bytes, std::bit_cast<std::uint64_t>(v), 8);
  }
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, VaeModel& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw std::runtime_error("bad checkpoint magic in " + path.string() + " at byte offset 0");
  }
  const auto version = read_le(in, 4, path);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  auto& params = model.parameters();
  const auto count = read_le(in, 4, path);
  if (count != params.size()) {
    throw std::runtime_error("checkpoint has " + std::to_string(count) + " tensors, model has " +
                             std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto elements = read_le(in, 8, path);
    if (elements != params[i].size()) {
      throw std::runtime_error("checkpoint tensor " + VaeModel::parameter_names()[i] + " has " +
                               std::to_string(elements) + " elements, model expects " +
                               std::to_string(params[i].size()));
    }
  }
  for (Tensor& t : params) {
    for (double& v : t.data()) v = std::bit_cast<double>(read_le(in, 8, path));
  }
}

}  // namespace gst::vae
