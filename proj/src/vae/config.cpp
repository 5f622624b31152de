#include "gst/vae/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace gst::vae {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  return s.substr(first, s.find_last_not_of(" \t\r") - first + 1);
}

std::string lower(std::string s) {
  std::ranges::transform(s, s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  if (v.empty() || !std::ranges::all_of(v, [](unsigned char c) { return std::isdigit(c); })) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return std::stoull(v);
}

bool to_bool(const std::string& key, const std::string& v) {
  const std::string l = lower(v);
  if (l == "true" || l == "1" || l == "yes") return true;
  if (l == "false" || l == "0" || l == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  try {
    estimator.validate();
    schedule.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (estimator.kind == EstimatorKind::Reinforce) {
    throw ConfigError("REINFORCE is not supported as a VAE training estimator");
  }
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (seeds.empty()) throw ConfigError("train.seeds must list at least one seed");
  if (dataset.kind == DatasetConfig::Kind::Synthetic &&
      (dataset.n < 1 || dataset.pattern_count < 1)) {
    throw ConfigError("data.n and data.patterns must be >= 1");
  }
  if (variance_resamples != 0 && variance_resamples < 100) {
    throw ConfigError("profile.resamples must be 0 or >= 100");
  }
  if (variance_batch < 1) throw ConfigError("profile.batch must be >= 1");
  if (model.encoder_hidden < 1 || model.decoder_hidden < 1) {
    throw ConfigError("model hidden sizes must be >= 1");
  }
  for (double t : ablation_taus) {
    if (!(t > 0.0)) throw ConfigError("ablation.taus must be positive");
  }
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::stringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, trim(line.substr(eq + 1))).second) {
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }
  return kv;
}

TrainConfig train_config_from(const KeyValues& kv) {
  TrainConfig cfg;
  if (const char* root = std::getenv("GST_DATA_DIR")) cfg.dataset.path = root;
  for (const auto& [key, v] : kv) {
    if (key == "estimator.kind") {
      try {
        cfg.estimator.kind = parse_estimator_kind(v);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(key + ": " + e.what());
      }
    } else if (key == "estimator.gap") {
      cfg.estimator.gap = v == "pi" ? GapRule::pi() : GapRule::constant(to_double(key, v));
    } else if (key == "estimator.K") {
      cfg.estimator.mc_samples = to_uint(key, v);
    } else if (key == "estimator.mode") {
      const std::string l = lower(v);
      if (l != "hard" && l != "soft") throw ConfigError(key + ": expected hard or soft");
      cfg.estimator.mode = l == "hard" ? SampleMode::Hard : SampleMode::Soft;
    } else if (key == "schedule.kind") {
      const std::string l = lower(v);
      if (l != "constant" && l != "mixed") throw ConfigError(key + ": expected constant or mixed");
      cfg.schedule.kind = l == "constant" ? TemperatureSchedule::Kind::Constant
                                          : TemperatureSchedule::Kind::Mixed;
    } else if (key == "schedule.tau") {
      cfg.schedule.tau = to_double(key, v);
    } else if (key == "schedule.M") {
      cfg.schedule.m = to_uint(key, v);
    } else if (key == "schedule.mid") {
      cfg.schedule.mid = to_double(key, v);
    } else if (key == "schedule.low") {
      cfg.schedule.low = to_double(key, v);
    } else if (key == "train.batch_size") {
      cfg.batch_size = to_uint(key, v);
    } else if (key == "train.epochs") {
      cfg.epochs = to_uint(key, v);
    } else if (key == "train.learning_rate") {
      cfg.learning_rate = to_double(key, v);
    } else if (key == "train.seeds") {
      cfg.seeds.clear();
      for (const auto& s : split_list(v)) cfg.seeds.push_back(to_uint(key, s));
    } else if (key == "data.kind") {
      const std::string l = lower(v);
      if (l != "synthetic" && l != "mnist") throw ConfigError(key + ": expected synthetic or mnist");
      cfg.dataset.kind = l == "mnist" ? DatasetConfig::Kind::Mnist : DatasetConfig::Kind::Synthetic;
    } else if (key == "data.path") {
      cfg.dataset.path = v;
    } else if (key == "data.n") {
      cfg.dataset.n = to_uint(key, v);
    } else if (key == "data.eval_n") {
      cfg.dataset.eval_n = to_uint(key, v);
    } else if (key == "data.patterns") {
      cfg.dataset.pattern_count = to_uint(key, v);
    } else if (key == "data.seed") {
      cfg.dataset.seed = to_uint(key, v);
    } else if (key == "data.binarize") {
      cfg.dataset.binarize = to_bool(key, v);
    } else if (key == "model.encoder_hidden") {
      cfg.model.encoder_hidden = to_uint(key, v);
    } else if (key == "model.decoder_hidden") {
      cfg.model.decoder_hidden = to_uint(key, v);
    } else if (key == "profile.resamples") {
      cfg.variance_resamples = to_uint(key, v);
    } else if (key == "profile.batch") {
      cfg.variance_batch = to_uint(key, v);
    } else if (key == "ablation.taus") {
      cfg.ablation_taus.clear();
      for (const auto& s : split_list(v)) cfg.ablation_taus.push_back(to_double(key, s));
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  if (cfg.schedule.kind == TemperatureSchedule::Kind::Mixed) cfg.schedule.tau = cfg.schedule.low;
  cfg.estimator.tau = cfg.schedule.test_temperature();
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return train_config_from(parse_key_values(ss.str()));
}

std::string to_config_text(const TrainConfig& cfg) {
  KeyValues kv;
  kv["estimator.kind"] = to_string(cfg.estimator.kind);
  kv["estimator.gap"] = cfg.estimator.gap.expected_stgs_gap ? "pi" : fmt(cfg.estimator.gap.value);
  kv["estimator.K"] = std::to_string(cfg.estimator.mc_samples);
  kv["estimator.mode"] = cfg.estimator.mode == SampleMode::Hard ? "hard" : "soft";
  const bool mixed = cfg.schedule.kind == TemperatureSchedule::Kind::Mixed;
  kv["schedule.kind"] = mixed ? "mixed" : "constant";
  kv["schedule.tau"] = fmt(cfg.schedule.tau);
  kv["schedule.M"] = std::to_string(cfg.schedule.m);
  kv["schedule.mid"] = fmt(cfg.schedule.mid);
  kv["schedule.low"] = fmt(cfg.schedule.low);
  kv["train.batch_size"] = std::to_string(cfg.batch_size);
  kv["train.epochs"] = std::to_string(cfg.epochs);
  kv["train.learning_rate"] = fmt(cfg.learning_rate);
  std::string seeds;
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    seeds += (i ? "," : "") + std::to_string(cfg.seeds[i]);
  }
  kv["train.seeds"] = seeds;
  const bool mnist = cfg.dataset.kind == DatasetConfig::Kind::Mnist;
  kv["data.kind"] = mnist ? "mnist" : "synthetic";
  if (mnist) kv["data.path"] = cfg.dataset.path;
  kv["data.n"] = std::to_string(cfg.dataset.n);
  kv["data.eval_n"] = std::to_string(cfg.dataset.eval_n);
  kv["data.patterns"] = std::to_string(cfg.dataset.pattern_count);
  kv["data.seed"] = std::to_string(cfg.dataset.seed);
  kv["data.binarize"] = cfg.dataset.binarize ? "true" : "false";
  kv["model.encoder_hidden"] = std::to_string(cfg.model.encoder_hidden);
  kv["model.decoder_hidden"] = std::to_string(cfg.model.decoder_hidden);
  kv["profile.resamples"] = std::to_string(cfg.variance_resamples);
  kv["profile.batch"] = std::to_string(cfg.variance_batch);
  std::string taus;
  for (std::size_t i = 0; i < cfg.ablation_taus.size(); ++i) {
    taus += (i ? "," : "") + fmt(cfg.ablation_taus[i]);
  }
  kv["ablation.taus"] = taus;
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace gst::vae
