#pragma once

// Flat "key = value" configuration. Sections are dotted key prefixes and '#'
// starts a comment. Recognised keys (defaults in brackets):
//
//   estimator.kind [GST]   ST | STGS | GR-MCK | GST | NZ-GST
//   estimator.gap [1.0]    non-negative number or "pi"
//   estimator.K [1]        Monte-Carlo count for GR-MCK
//   estimator.mode [hard]  hard | soft
//   schedule.kind [constant], schedule.tau [1.0]
//   schedule.M [20], schedule.mid [0.5], schedule.low [0.1]
//   train.batch_size [100], train.epochs [5], train.learning_rate [0.001]
//   train.seeds [0,1,2]
//   data.kind [synthetic]  synthetic | mnist
//   data.path              MNIST directory or image file; defaults to $GST_DATA_DIR
//   data.n [10000], data.eval_n [2000], data.patterns [10], data.seed [1234]
//   data.binarize [false]
//   model.encoder_hidden [256], model.decoder_hidden [256]
//   profile.resamples [0]  gradient-variance resamples at each epoch end (0 = off)
//   profile.batch [10]     examples in the profiled batch
//   ablation.taus [0.5]

#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gst/estimators.hpp"
#include "gst/vae/model.hpp"
#include "gst/vae/optim.hpp"

namespace gst::vae {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DatasetConfig {
  enum class Kind { Synthetic, Mnist };
  Kind kind = Kind::Synthetic;
  std::string path;
  std::size_t n = 10000;
  std::size_t eval_n = 2000;
  std::size_t pattern_count = 10;
  std::uint64_t seed = 1234;
  bool binarize = false;
};

struct TrainConfig {
  EstimatorConfig estimator;
  std::size_t batch_size = 100;
  std::size_t epochs = 5;
  double learning_rate = 1e-3;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  TemperatureSchedule schedule;
  DatasetConfig dataset;
  VaeShape model;
  std::size_t variance_resamples = 0;
  std::size_t variance_batch = 10;
  std::vector<double> ablation_taus{0.5};

  /// Throws ConfigError on any out-of-range field.
  void validate() const;
};

using KeyValues = std::map<std::string, std::string>;

/// Parses the text format; duplicate keys and lines without '=' are errors
/// reported with their line number.
KeyValues parse_key_values(const std::string& text);

/// Builds a config from parsed keys; unknown keys are rejected.
TrainConfig train_config_from(const KeyValues& kv);
TrainConfig load_train_config(const std::string& path);

/// Canonical text with every key, sorted; round-trips through
/// parse_key_values/train_config_from.
std::string to_config_text(const TrainConfig& cfg);

/// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace gst::vae
