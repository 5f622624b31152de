#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gst/tensor.hpp"
#include "gst/vae/config.hpp"
#include "gst/vae/model.hpp"

namespace gst::vae {

struct EpochMetrics {
  std::size_t epoch = 0;
  /// Held-out negative ELBO with hard samples; equals reconstruction + kl.
  double mean_neg_elbo = 0.0;
  double kl_term = 0.0;
  double reconstruction_term = 0.0;
  /// Mean surrogate entropy over the epoch's training batches.
  double mean_surrogate_entropy = 0.0;
  std::optional<double> gradient_variance;
  double wall_seconds = 0.0;
};

struct Dataset {
  Tensor train;
  Tensor eval;
};

/// Synthetic data (train and eval drawn from the same prototypes) or MNIST
/// (train split, eval from t10k when present, else the tail of train).
Dataset load_dataset(const DatasetConfig& cfg);

struct SeedOutcome {
  std::uint64_t seed = 0;
  /// Held-out negative ELBO of the untrained model.
  double initial_neg_elbo = 0.0;
  std::vector<EpochMetrics> epochs;
  bool diverged = false;
  std::string diagnostic;
};

/// Training of one seed. Divergence (a non-finite loss or parameter, or a
/// held-out loss above 10x the initial one for 3 consecutive epochs) stops
/// the run and is recorded, not thrown.
SeedOutcome train_seed(const TrainConfig& cfg, const Dataset& data, std::uint64_t seed,
                       VaeModel* final_model = nullptr);

struct TrainResult {
  std::vector<SeedOutcome> seeds;
  bool any_diverged() const;
};

/// Trains every configured seed. With an output directory, appends to
/// `metrics.csv` after every epoch and writes `checkpoint_seed<N>.bin`.
TrainResult train(const TrainConfig& cfg, const Dataset& data,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt);

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const TrainConfig& cfg, std::uint64_t seed,
                       const EpochMetrics& m);

/// Mean and sample standard deviation (0 for one value) of the final-epoch
/// negative ELBO across seeds.
struct SeedSummary {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t diverged = 0;
};
SeedSummary summarize_final(const TrainResult& result);

/// Layout: "GSTCKPT\0", u32 version, u32 tensor count, u64 element count per
/// tensor, then every tensor as little-endian f64 in declaration order.
void save_checkpoint(const std::filesystem::path& path, const VaeModel& model);
/// Loads into `model`, whose element counts must match the file.
void load_checkpoint(const std::filesystem::path& path, VaeModel& model);

}  // namespace gst::vae
