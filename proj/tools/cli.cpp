#include "cli.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "gst/gap_analysis.hpp"
#include "gst/stats.hpp"
#include "gst/vae/config.hpp"
#include "gst/vae/data.hpp"
#include "gst/vae/train.hpp"
#include "gst/variance_profiler.hpp"

namespace gst::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "1.0.0";
constexpr double kSignificance = 0.01;
constexpr std::size_t kRejectionMaxTries = 200'000'000;

std::vector<double> parse_logit_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used]))) ++used;
    if (used == 0 || used != item.size() || !std::isfinite(v)) {
      throw std::invalid_argument("malformed logit '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.size() < 2) throw std::invalid_argument("--logits needs at least two values");
  return out;
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string num(double v) { return fmt("%.17g", v); }

void ensure_dir(const std::string& dir) {
  if (!dir.empty()) fs::create_directories(dir);
}

EstimatorConfig resolve_estimator(const std::string& label, double tau,
                                  const std::string& gap_override, std::size_t k_override) {
  EstimatorConfig cfg = parse_estimator_label(label, tau);
  const bool bare = label == to_string(cfg.kind) || label == "GR-MCK";
  if (bare && !gap_override.empty() &&
      (cfg.kind == EstimatorKind::Gst || cfg.kind == EstimatorKind::NzGst)) {
    cfg.gap = gap_override == "pi" ? GapRule::pi() : GapRule::constant(std::stod(gap_override));
  }
  if (bare && cfg.kind == EstimatorKind::GrMck && k_override > 0) cfg.mc_samples = k_override;
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------- verify-gap

int cmd_verify_gap(std::size_t n, std::uint64_t seed, const std::string& logits_text,
                   std::size_t random_cases, const std::string& out) {
  std::vector<GapCase> cases;
  if (!logits_text.empty()) {
    std::vector<double> logits;
    try {
      logits = parse_logit_list(logits_text);
    } catch (const std::invalid_argument& e) {
      std::cerr << "error: " << e.what() << "\nusage: gst verify-gap --logits a,b[,...] [--n N]\n";
      return kUsage;
    }
    for (std::size_t i = 0; i < logits.size(); ++i) cases.push_back({logits, i});
  } else {
    cases = random_gap_cases(random_cases, seed);
  }
  run_gap_cases(cases, n, seed);

  std::size_t passed = 0;
  std::printf("%-5s %-4s %-5s %12s %12s %12s %s\n", "case", "N", "index", "analytic", "mc",
              "stderr", "result");
  for (std::size_t c = 0; c < cases.size(); ++c) {
    const GapCase& g = cases[c];
    passed += g.pass;
    std::printf("%-5zu %-4zu %-5zu %12.6f %12.6f %12.6f %s\n", c, g.logits.size(), g.index,
                g.analytic, g.mc, g.stderr_, g.pass ? "pass" : "FAIL");
  }
  std::printf("%zu/%zu pass\n", passed, cases.size());

  if (!out.empty()) {
    ensure_dir(out);
    std::ofstream csv(fs::path(out) / "gap.csv");
    csv << "case,N,index,analytic,logistic,mc,stderr,pass\n";
    for (std::size_t c = 0; c < cases.size(); ++c) {
      const GapCase& g = cases[c];
      csv << c << ',' << g.logits.size() << ',' << g.index << ',' << num(g.analytic) << ','
          << num(g.logistic) << ',' << num(g.mc) << ',' << num(g.stderr_) << ',' << g.pass << '\n';
    }
    write_manifest(out, "verify-gap", seed, "n = " + std::to_string(n) + "\n");
  }
  return passed == cases.size() ? kPass : kVerificationFailed;
}

// -------------------------------------------------------------- sample-check

int cmd_sample_check(std::size_t n, std::uint64_t seed, const std::string& out) {
  const auto rows = run_sample_check(n, seed);
  std::size_t passed = 0;
  std::printf("%-5s %-6s %-5s %-5s %12s %12s %s\n", "test", "vector", "index", "coord",
              "statistic", "p_value", "result");
  for (const auto& r : rows) {
    passed += r.pass;
    std::printf("%-5s %-6zu %-5zu %-5zu %12.6f %12.6f %s\n", r.test.c_str(), r.vector, r.index,
                r.coordinate, r.statistic, r.p_value, r.pass ? "pass" : "FAIL");
  }
  std::printf("%zu/%zu pass\n", passed, rows.size());
  if (!out.empty()) {
    ensure_dir(out);
    std::ofstream csv(fs::path(out) / "sample_check.csv");
    csv << "test,vector,index,coordinate,statistic,p_value,pass\n";
    for (const auto& r : rows) {
      csv << r.test << ',' << r.vector << ',' << r.index << ',' << r.coordinate << ','
          << num(r.statistic) << ',' << num(r.p_value) << ',' << r.pass << '\n';
    }
    write_manifest(out, "sample-check", seed, "n = " + std::to_string(n) + "\n");
  }
  return passed == rows.size() ? kPass : kVerificationFailed;
}

// ------------------------------------------------------------------ variance

int cmd_variance(const std::string& estimators, double tau, const std::string& gap,
                 std::size_t k, std::size_t resamples, std::uint64_t seed, const std::string& out,
                 const std::string& config_path, const std::string& checkpoint) {
  vae::TrainConfig cfg;
  std::vector<EstimatorConfig> configs;
  try {
    if (!config_path.empty()) cfg = vae::load_train_config(config_path);
    std::stringstream ss(estimators);
    std::string label;
    while (std::getline(ss, label, ',')) {
      if (!label.empty()) configs.push_back(resolve_estimator(label, tau, gap, k));
    }
    if (configs.empty()) throw std::invalid_argument("--estimator lists no estimator");
    for (const auto& c : configs) {
      if (c.kind == EstimatorKind::Reinforce) {
        throw std::invalid_argument("REINFORCE has no straight-through surrogate to profile");
      }
    }
    if (resamples < 100) throw std::invalid_argument("--resamples must be >= 100");
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }

  const vae::Dataset data = vae::load_dataset(cfg.dataset);
  vae::VaeModel model(cfg.model, seed);
  if (!checkpoint.empty()) vae::load_checkpoint(checkpoint, model);
  const std::size_t rows = std::min(cfg.variance_batch, data.eval.rows());
  vae::VaeSnapshotProblem problem(model, vae::slice_rows(data.eval, 0, rows));

  ensure_dir(out);
  std::ofstream csv(fs::path(out) / "variance.csv");
  write_variance_csv_header(csv);
  std::vector<VarianceReport> reports;
  for (const auto& c : configs) {
    RngStream rng(seed);
    reports.push_back(gradient_variance(problem, c, resamples, rng));
    write_variance_csv_row(csv, reports.back());
  }

  std::vector<std::size_t> order(reports.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::ranges::sort(order, [&](auto a, auto b) {
    return reports[a].total_variance < reports[b].total_variance;
  });
  std::printf("%-12s %16s %16s\n", "estimator", "total_variance", "stderr");
  for (auto i : order) {
    std::printf("%-12s %16.6g %16.6g\n", reports[i].estimator.c_str(), reports[i].total_variance,
                reports[i].total_variance_stderr);
  }
  std::string summary;
  for (std::size_t j = 0; j < order.size(); ++j) {
    if (j > 0) {
      const auto& lo = reports[order[j - 1]];
      const auto& hi = reports[order[j]];
      const double se = std::hypot(lo.total_variance_stderr, hi.total_variance_stderr);
      summary += hi.total_variance - lo.total_variance > 3.0 * se ? " < " : " ~ ";
    }
    summary += reports[order[j]].estimator;
  }
  std::printf("ordering: %s  ('<' significant at 3 SE)\n", summary.c_str());
  write_manifest(out, "variance", seed, vae::to_config_text(cfg));
  return kPass;
}

// --------------------------------------------------------------- train, ablation

int cmd_train(const std::string& config_path, const std::string& out) {
  vae::TrainConfig cfg;
  try {
    cfg = vae::load_train_config(config_path);
  } catch (const vae::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  const vae::Dataset data = vae::load_dataset(cfg.dataset);
  ensure_dir(out);
  write_manifest(out, "train", cfg.seeds.front(), vae::to_config_text(cfg));
  const vae::TrainResult result = vae::train(cfg, data, fs::path(out));
  for (const auto& s : result.seeds) {
    const double final_loss = s.epochs.empty() ? std::nan("") : s.epochs.back().mean_neg_elbo;
    std::printf("seed %llu: initial %.4f final %.4f%s%s\n",
                static_cast<unsigned long long>(s.seed), s.initial_neg_elbo, final_loss,
                s.diverged ? "  DIVERGED: " : "", s.diagnostic.c_str());
  }
  const auto summary = vae::summarize_final(result);
  std::printf("%s: mean neg-ELBO %.4f, std %.4f over %zu seeds\n",
              cfg.estimator.label().c_str(), summary.mean, summary.stddev, result.seeds.size());
  return result.any_diverged() ? kDiverged : kPass;
}

int cmd_ablation(const std::string& config_path, const std::string& out) {
  static const std::vector<std::string> kLabels = {"ST", "NZ-GST-0.0", "NZ-GST-1.0", "GST-0.0",
                                                   "GST-1.0"};
  vae::TrainConfig base;
  try {
    base = vae::load_train_config(config_path);
  } catch (const vae::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  const vae::Dataset data = vae::load_dataset(base.dataset);
  ensure_dir(out);
  write_manifest(out, "ablation", base.seeds.front(), vae::to_config_text(base));
  std::ofstream csv(fs::path(out) / "ablation.csv");
  csv << "estimator,tau,mean_neg_elbo,std_neg_elbo,diverged,seeds\n";
  std::printf("%-12s %6s %14s %10s %s\n", "estimator", "tau", "mean_neg_elbo", "std", "diverged");
  for (double tau : base.ablation_taus) {
    for (const auto& label : kLabels) {
      vae::TrainConfig cfg = base;
      cfg.estimator = parse_estimator_label(label, tau);
      cfg.estimator.mode = base.estimator.mode;
      cfg.schedule = vae::TemperatureSchedule::constant(tau);
      const fs::path run_dir = fs::path(out) / (label + "_tau" + fmt("%g", tau));
      const auto result = vae::train(cfg, data, run_dir);
      const auto s = vae::summarize_final(result);
      std::printf("%-12s %6g %14.4f %10.4f %zu/%zu\n", label.c_str(), tau, s.mean, s.stddev,
                  s.diverged, result.seeds.size());
      csv << label << ',' << num(tau) << ',' << num(s.mean) << ',' << num(s.stddev) << ','
          << s.diverged << ',' << result.seeds.size() << '\n';
    }
  }
  return kPass;
}

}  // namespace

// ------------------------------------------------------------------ suites

std::vector<GapCase> random_gap_cases(std::size_t count, std::uint64_t seed) {
  static constexpr std::size_t kSizes[] = {2, 5, 10, 50};
  RngStream rng(mix_seed(seed, 0x6a70));
  std::vector<GapCase> cases;
  for (std::size_t c = 0; c < count; ++c) {
    GapCase g;
    const std::size_t n = kSizes[c % 4];
    for (std::size_t j = 0; j < n; ++j) g.logits.push_back(-3.0 + 6.0 * rng.uniform());
    g.index = rng.next() % n;
    cases.push_back(std::move(g));
  }
  return cases;
}

void run_gap_cases(std::vector<GapCase>& cases, std::size_t n, std::uint64_t seed) {
  RngStream base(seed);
  for (std::size_t c = 0; c < cases.size(); ++c) {
    GapCase& g = cases[c];
    const LogitVector logits(g.logits);
    RngStream rng = base.substream(c);
    g.analytic = gap_closed_form(logits, g.index);
    g.logistic = gap_logistic_form(logits, g.index);
    const GapReport report = gap_monte_carlo(logits, g.index, rng, n);
    g.mc = report.mc_gap;
    g.stderr_ = report.mc_stderr;
    const bool forms_agree = std::abs(g.analytic - g.logistic) <= 1e-10 * std::abs(g.analytic);
    g.pass = forms_agree && std::abs(g.mc - g.analytic) < 3.0 * g.stderr_;
  }
}

const std::vector<std::vector<double>>& sample_check_vectors() {
  static const std::vector<std::vector<double>> vectors = {
      {0.0, 0.0},
      {1.0, -0.5},
      {0.5, 0.0, -0.5},
      {1.2, -0.3, 0.4},
      {0.0, 0.8, -0.6, 0.3},
  };
  return vectors;
}

std::vector<SampleCheckRow> run_sample_check(std::size_t n, std::uint64_t seed) {
  std::vector<SampleCheckRow> rows;
  RngStream base(seed);
  const auto& vectors = sample_check_vectors();
  for (std::size_t v = 0; v < vectors.size(); ++v) {
    const LogitVector logits(vectors[v]);
    const std::size_t k = logits.size();

    RngStream rng = base.substream(2 * v);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t t = 0; t < n; ++t) ++counts[gumbel_max(logits, rng).first.index];
    const auto probs = logits.probabilities();
    const auto chi = stats::chi_square_gof(counts, probs);
    rows.push_back({"chi2", v, 0, 0, chi.statistic, chi.p_value, chi.p_value > kSignificance});

    RngStream cond_rng = base.substream(2 * v + 1).substream(0);
    RngStream rej_rng = base.substream(2 * v + 1).substream(1);
    for (std::size_t i = 0; i < k; ++i) {
      const OneHotSample given = OneHotSample::make(i, k);
      std::vector<std::vector<double>> cond(k), rej(k);
      for (std::size_t t = 0; t < n; ++t) {
        const auto a = conditional_perturbed_logits(logits, given, cond_rng);
        const auto b = rejection_oracle(logits, given, rej_rng, kRejectionMaxTries);
        for (std::size_t j = 0; j < k; ++j) {
          cond[j].push_back(a.values[j]);
          rej[j].push_back(b.values[j]);
        }
      }
      for (std::size_t j = 0; j < k; ++j) {
        const auto ks = stats::ks_two_sample(std::move(cond[j]), std::move(rej[j]));
        rows.push_back({"ks", v, i, j, ks.statistic, ks.p_value, ks.p_value > kSignificance});
      }
    }
  }
  return rows;
}

void write_manifest(const std::string& dir, const std::string& command, std::uint64_t seed,
                    const std::string& config_text) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["seed"] = seed;
  j["config_hash"] = vae::fnv1a_hex(config_text);
  j["config"] = config_text;
  j["versions"] = {
      {"gst", kVersion},
      {"compiler", __VERSION__},
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                    "." + std::to_string(EIGEN_MINOR_VERSION)},
  };
  ensure_dir(dir);
  std::ofstream(fs::path(dir) / "run.json") << j.dump(2) << '\n';
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Gapped straight-through estimator toolkit"};
  app.require_subcommand(1);

  std::size_t n = 100000;
  std::uint64_t seed = 0;
  std::string logits, out, config, checkpoint, estimators = "GST-1.0,STGS,GR-MC100", gap;
  std::size_t random_cases = 20;
  double tau = 1.0;
  std::size_t k = 0;
  std::size_t resamples = 10000;

  auto* gap_cmd = app.add_subcommand("verify-gap", "closed-form vs Monte-Carlo conditional gap");
  gap_cmd->add_option("--n", n, "Monte-Carlo draws per case")->check(CLI::Range(1000, 1 << 30));
  gap_cmd->add_option("--seed", seed, "random seed");
  auto* logits_opt = gap_cmd->add_option("--logits", logits, "comma-separated logits");
  gap_cmd->add_option("--random-cases", random_cases, "number of random cases")
      ->excludes(logits_opt);
  gap_cmd->add_option("--out", out, "directory for gap.csv and run.json");

  auto* sample_cmd = app.add_subcommand("sample-check", "sampler goodness-of-fit checks");
  sample_cmd->add_option("--n", n, "draws per test")->check(CLI::Range(100, 1 << 30));
  sample_cmd->add_option("--seed", seed, "random seed");
  sample_cmd->add_option("--out", out, "directory for sample_check.csv and run.json");

  auto* var_cmd = app.add_subcommand("variance", "gradient variance on a frozen VAE snapshot");
  var_cmd->add_option("--estimator", estimators, "comma-separated estimator labels");
  var_cmd->add_option("--tau", tau, "temperature")->check(CLI::PositiveNumber);
  var_cmd->add_option("--gap", gap, "gap for bare GST/NZ-GST labels (number or pi)");
  var_cmd->add_option("--K", k, "Monte-Carlo count for a bare GR-MCK label");
  var_cmd->add_option("--resamples", resamples, "resamples per estimator");
  var_cmd->add_option("--seed", seed, "seed for the snapshot model and the resampling");
  var_cmd->add_option("--out", out, "output directory")->required();
  var_cmd->add_option("--config", config, "config file for data and model sizes");
  var_cmd->add_option("--checkpoint", checkpoint, "load the snapshot from a checkpoint");

  auto* train_cmd = app.add_subcommand("train", "train the categorical VAE");
  train_cmd->add_option("--config", config, "config file")->required();
  train_cmd->add_option("--out", out, "output directory")->required();

  auto* abl_cmd = app.add_subcommand("ablation", "ST / NZ-GST / GST ablation");
  abl_cmd->add_option("--config", config, "config file")->required();
  abl_cmd->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kPass : kUsage;
  }

  try {
    if (*gap_cmd) return cmd_verify_gap(n, seed, logits, random_cases, out);
    if (*sample_cmd) return cmd_sample_check(n, seed, out);
    if (*var_cmd) {
      return cmd_variance(estimators, tau, gap, k, resamples, seed, out, config, checkpoint);
    }
    if (*train_cmd) return cmd_train(config, out);
    if (*abl_cmd) return cmd_ablation(config, out);
  } catch (const vae::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    // Unreadable data, checkpoints or output paths: not a statistical
    // outcome, so it shares the usage code.
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}

}  // namespace gst::cli
