#pragma once

// The `gst` command-line tool. run_cli() is the whole program so tests can
// drive it in-process; main() only forwards to it.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "gst/samplers.hpp"

namespace gst::cli {

enum ExitCode : int { kPass = 0, kUsage = 1, kVerificationFailed = 2, kDiverged = 3 };

int run_cli(int argc, const char* const* argv);

struct GapCase {
  std::vector<double> logits;
  std::size_t index = 0;
  double analytic = 0.0;
  double logistic = 0.0;
  double mc = 0.0;
  double stderr_ = 0.0;
  bool pass = false;
};

/// `count` random cases cycling N over {2, 5, 10, 50}, logits uniform in
/// [-3, 3], conditioning index uniform.
std::vector<GapCase> random_gap_cases(std::size_t count, std::uint64_t seed);
/// Fills analytic/logistic/mc/stderr/pass for each case with n conditional
/// draws. A case passes when |mc - analytic| < 3 stderr and the two closed
/// forms agree to 1e-10 relative.
void run_gap_cases(std::vector<GapCase>& cases, std::size_t n, std::uint64_t seed);

struct SampleCheckRow {
  std::string test;  // "chi2" or "ks"
  std::size_t vector = 0;
  std::size_t index = 0;       // conditioning index (ks)
  std::size_t coordinate = 0;  // compared coordinate (ks)
  double statistic = 0.0;
  double p_value = 0.0;
  bool pass = false;
};

/// The fixed logit vectors used by sample-check.
const std::vector<std::vector<double>>& sample_check_vectors();
/// Chi-square of gumbel_max counts for every vector, and per-coordinate KS
/// of conditional draws against the rejection oracle for every vector and
/// conditioning index. Each test passes at p > 0.01.
std::vector<SampleCheckRow> run_sample_check(std::size_t n, std::uint64_t seed);

/// Writes run.json (command, seed, config hash, versions) into `dir`.
void write_manifest(const std::string& dir, const std::string& command, std::uint64_t seed,
                    const std::string& config_text);

}  // namespace gst::cli
