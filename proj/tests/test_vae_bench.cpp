#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "gst/vae/config.hpp"
#include "gst/vae/data.hpp"
#include "gst/vae/model.hpp"
#include "gst/vae/optim.hpp"
#include "gst/vae/train.hpp"
#include "support.hpp"

using namespace gst;
using namespace gst::vae;
namespace fs = std::filesystem;

namespace {

VaeShape tiny_shape() {
  VaeShape s;
  s.input = 16;
  s.latents = 3;
  s.categories = 4;
  s.encoder_hidden = 6;
  s.decoder_hidden = 5;
  return s;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("gst_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<unsigned char>(v >> shift));
}

TrainConfig small_training(const std::string& label, double tau) {
  TrainConfig cfg;
  cfg.estimator = parse_estimator_label(label, tau);
  cfg.schedule = TemperatureSchedule::constant(tau);
  cfg.dataset.n = 1000;
  cfg.dataset.eval_n = 200;
  cfg.model.encoder_hidden = 64;
  cfg.model.decoder_hidden = 64;
  cfg.batch_size = 50;
  cfg.epochs = 5;
  cfg.seeds = {3};
  return cfg;
}

}  // namespace

TEST_CASE("KL to the uniform prior") {
  Tape tape;
  SUBCASE("uniform logits give exactly zero") {
    Value kl = kl_to_uniform(tape.constant(Tensor({30, 10}, 0.7)));
    CHECK(kl.value()[0] == 0.0);
  }
  SUBCASE("a vertex gives log 10 per variable") {
    Tensor logits({1, 10}, -60.0);
    logits[0] = 60.0;
    CHECK(kl_to_uniform(tape.constant(logits)).value()[0] ==
          doctest::Approx(std::log(10.0)).epsilon(1e-12));
  }
  SUBCASE("bounded by 30 log 10 for 30 variables") {
    RngStream rng(5);
    for (int t = 0; t < 20; ++t) {
      const double kl =
          kl_to_uniform(tape.constant(gst::testing::random_tensor({30, 10}, rng, -20, 20))).value()[0];
      CHECK(kl >= 0.0);
      CHECK(kl <= 30.0 * std::log(10.0));
    }
  }
}

TEST_CASE("encoder output layout") {
  const VaeModel model(VaeShape{}, 1);
  CHECK(model.parameters().size() == 8);
  CHECK(model.parameters()[2].cols() == 300);
  CHECK(model.parameters()[4].rows() == 300);
  Tape tape;
  const BoundModel bound = bind(tape, model);
  Value logits = encoder_logits(bound, tape.constant(Tensor({4, 784}, 0.5)));
  CHECK(logits.value().rows() == 4 * 30);
  CHECK(logits.value().cols() == 10);
}

TEST_CASE("full loss gradient matches finite differences with frozen soft noise") {
  const VaeShape shape = tiny_shape();
  RngStream rng(12);
  Tensor batch({5, shape.input});
  for (double& v : batch.data()) v = rng.uniform();

  for (const char* label : {"STGS", "GST-1.0", "GR-MC3", "ST"}) {
    CAPTURE(label);
    EstimatorConfig cfg = parse_estimator_label(label, 0.7);
    cfg.mode = SampleMode::Soft;
    VaeModel model(shape, 77);

    Tape tape0;
    const BoundModel bound0 = bind(tape0, model);
    const Tensor logits0 = encoder_logits(bound0, tape0.constant(batch)).value();
    const FrozenNoise noise = draw_noise(logits0, cfg, rng);
    auto frozen = [&](const Tensor&) { return noise; };

    // The sample indices are frozen, so perturbations stay small enough that
    // the evaluation point keeps its meaning.
    auto loss_at = [&](std::size_t tensor, std::size_t k, double delta) {
      VaeModel moved = model;
      moved.parameters()[tensor][k] += delta;
      Tape tape;
      const BoundModel b = bind(tape, moved);
      return elbo_loss_with(tape, b, batch, cfg, frozen).loss.value()[0];
    };

    Tape tape;
    const BoundModel bound = bind(tape, model);
    const ElboTerms terms = elbo_loss_with(tape, bound, batch, cfg, frozen);
    tape.backward(terms.loss);
    for (int t = 0; t < 6; ++t) {
      const std::size_t tensor = t % 2 == 0 ? 0 : 2;
      const std::size_t k = rng.next() % model.parameters()[tensor].size();
      const double h = 1e-5;
      const double fd = (loss_at(tensor, k, h) - loss_at(tensor, k, -h)) / (2 * h);
      const double g = bound.params[tensor].grad()[k];
      CHECK(std::abs(g - fd) <= 1e-4 * std::max(std::abs(fd), 1e-6) + 1e-8);
    }
  }
}

TEST_CASE("hard mode feeds exact one-hot latents and terms add up") {
  const VaeModel model(VaeShape{}, 4);
  RngStream rng(8);
  Tensor batch({7, 784});
  for (double& v : batch.data()) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
  Tape tape;
  const ElboTerms t = elbo_loss(tape, bind(tape, model), batch, parse_estimator_label("GST-1.0", 0.5), rng);
  CHECK(t.loss.value()[0] == doctest::Approx(t.reconstruction + t.kl).epsilon(1e-12));
  for (std::size_t r = 0; r < t.sample.onehot.rows(); ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 10; ++c) {
      const double v = t.sample.onehot.at(r, c);
      CHECK((v == 0.0 || v == 1.0));
      sum += v;
    }
    CHECK(sum == 1.0);
  }
}

TEST_CASE("non-finite loss names the failing term") {
  const VaeModel model(tiny_shape(), 1);
  Tensor batch({2, 16}, 0.5);
  batch[3] = NAN;
  RngStream rng(1);
  Tape tape;
  try {
    elbo_loss(tape, bind(tape, model), batch, parse_estimator_label("STGS"), rng);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).rfind("encoder term:", 0) == 0);
  }
}

TEST_CASE("Adam first step and zero gradients") {
  std::vector<Tensor> p{Tensor({1}, 2.0)};
  AdamState state;
  adam_step(p, {Tensor({1}, 1.0)}, state, 1e-3);
  // m_hat = v_hat = 1 at t = 1, so the step is lr / (1 + eps).
  CHECK(std::abs((2.0 - p[0][0]) - 1e-3 / (1.0 + 1e-8)) < 1e-15);
  CHECK(std::abs((2.0 - p[0][0]) - 1e-3) <= 1e-3 * 1e-8 + 1e-16);
  CHECK(state.t == 1);

  std::vector<Tensor> q{Tensor({3}, -0.25)};
  AdamState still;
  for (int t = 0; t < 100; ++t) adam_step(q, {Tensor({3}, 0.0)}, still, 0.01);
  for (double v : q[0].data()) CHECK(v == -0.25);

  CHECK_THROWS(adam_step(q, {Tensor({2}, 0.0)}, still, 0.01));
}

TEST_CASE("Adam trajectories are reproducible") {
  auto run = [] {
    std::vector<Tensor> p{Tensor({4}, 1.0)};
    AdamState s;
    RngStream rng(99);
    for (int t = 0; t < 50; ++t) {
      Tensor g({4});
      for (double& v : g.data()) v = 2.0 * rng.uniform() - 1.0;
      adam_step(p, {g}, s, 0.01);
    }
    return p[0].storage();
  };
  CHECK(run() == run());
}

TEST_CASE("temperature schedules") {
  const auto mixed = TemperatureSchedule::mixed(20, 0.5, 0.1);
  for (std::size_t s : {0, 20, 40}) CHECK(temperature_schedule(s, mixed) == 0.1);
  for (std::size_t s = 1; s < 20; ++s) CHECK(temperature_schedule(s, mixed) == 0.5);
  const auto every = TemperatureSchedule::mixed(1, 0.5, 0.1);
  for (std::size_t s = 0; s < 10; ++s) CHECK(temperature_schedule(s, every) == 0.1);
  const auto constant = TemperatureSchedule::constant(0.5);
  for (std::size_t s = 0; s < 50; ++s) CHECK(temperature_schedule(s, constant) == 0.5);
  CHECK(mixed.to_string() == "mixed:20:0.5:0.1");
  CHECK(constant.to_string() == "constant:0.5");
  CHECK_THROWS(TemperatureSchedule::mixed(0, 0.5, 0.1).validate());
}

TEST_CASE("IDX parsing") {
  const fs::path dir = scratch_dir("idx");
  std::vector<unsigned char> images;
  push_be32(images, 0x803);
  push_be32(images, 2);
  push_be32(images, 2);
  push_be32(images, 3);
  for (int i = 0; i < 12; ++i) images.push_back(static_cast<unsigned char>(i * 20));
  write_bytes(dir / "images", images);

  const Tensor x = load_idx_images(dir / "images");
  CHECK(x.rows() == 2);
  CHECK(x.cols() == 6);
  CHECK(x.at(1, 5) == doctest::Approx(220.0 / 255.0));

  SUBCASE("bad magic reports offset 0") {
    auto bad = images;
    bad[3] = 0x01;
    write_bytes(dir / "bad", bad);
    try {
      load_idx_images(dir / "bad");
      FAIL("expected DatasetError");
    } catch (const DatasetError& e) {
      CHECK(e.offset() == 0);
    }
  }
  SUBCASE("truncated pixel data reports where it stopped") {
    auto cut = images;
    cut.resize(16 + 7);
    write_bytes(dir / "cut", cut);
    try {
      load_idx_images(dir / "cut");
      FAIL("expected DatasetError");
    } catch (const DatasetError& e) {
      CHECK(e.offset() == 23);
      CHECK(std::string(e.what()).find("offset 23") != std::string::npos);
    }
  }
  SUBCASE("truncated header") {
    write_bytes(dir / "short", {0, 0, 8, 3, 0, 0});
    CHECK_THROWS_AS(load_idx_images(dir / "short"), DatasetError);
  }
  SUBCASE("labels") {
    std::vector<unsigned char> labels;
    push_be32(labels, 0x801);
    push_be32(labels, 3);
    labels.insert(labels.end(), {7, 0, 9});
    write_bytes(dir / "labels", labels);
    CHECK(load_idx_labels(dir / "labels") == std::vector<std::uint8_t>{7, 0, 9});
    CHECK_THROWS_AS(load_idx_labels(dir / "images"), DatasetError);
  }
}

TEST_CASE("synthetic dataset") {
  RngStream a(4), b(4), c(5);
  const Tensor x = synth_dataset(200, 10, a);
  CHECK(x.rows() == 200);
  CHECK(x.cols() == 784);
  CHECK(x.storage() == synth_dataset(200, 10, b).storage());
  CHECK(x.storage() != synth_dataset(200, 10, c).storage());
  double ones = 0.0;
  for (double v : x.data()) {
    CHECK((v == 0.0 || v == 1.0));
    ones += v;
  }
  const double density = ones / static_cast<double>(x.size());
  CHECK(density > 0.05);
  CHECK(density < 0.6);
}

TEST_CASE("config parsing") {
  const auto cfg = train_config_from(parse_key_values(
      "# comment\nestimator.kind = GR-MCK\nestimator.K = 10\nschedule.tau = 0.5\n"
      "train.seeds = 4, 5\n"));
  CHECK(cfg.estimator.label() == "GR-MC10");
  CHECK(cfg.estimator.tau == 0.5);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK(train_config_from(parse_key_values(to_config_text(cfg))).estimator.label() == "GR-MC10");

  CHECK_THROWS_AS(parse_key_values("a = 1\na = 2\n"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_key_values("a = 1\nnonsense\n"), doctest::Contains("line 2"), ConfigError);
  CHECK_THROWS_AS(train_config_from(parse_key_values("train.bogus = 1\n")), ConfigError);
  CHECK_THROWS_AS(train_config_from(parse_key_values("train.batch_size = 0\n")), ConfigError);
  CHECK_THROWS_AS(train_config_from(parse_key_values("estimator.kind = REINFORCE\n")), ConfigError);
  CHECK_THROWS_AS(train_config_from(parse_key_values("schedule.kind = mixed\nschedule.M = 0\n")),
                  ConfigError);
}

TEST_CASE("checkpoint round trip") {
  const fs::path dir = scratch_dir("ckpt");
  const VaeModel model(tiny_shape(), 3);
  save_checkpoint(dir / "m.bin", model);
  CHECK(fs::file_size(dir / "m.bin") ==
        8 + 4 + 4 + 8 * 8 + 8 * std::accumulate(model.parameters().begin(), model.parameters().end(),
                                                 std::size_t{0},
                                                 [](std::size_t n, const Tensor& t) { return n + t.size(); }));
  VaeModel loaded(tiny_shape(), 99);
  load_checkpoint(dir / "m.bin", loaded);
  for (std::size_t i = 0; i < 8; ++i) CHECK(loaded.parameters()[i].storage() == model.parameters()[i].storage());

  VaeShape other = tiny_shape();
  other.encoder_hidden = 7;
  VaeModel wrong(other, 0);
  CHECK_THROWS(load_checkpoint(dir / "m.bin", wrong));
}

TEST_CASE("small training run") {
  const TrainConfig cfg = small_training("GST-1.0", 0.5);
  const Dataset data = load_dataset(cfg.dataset);
  const SeedOutcome a = train_seed(cfg, data, 3);
  const SeedOutcome b = train_seed(cfg, data, 3);
  REQUIRE_FALSE(a.diverged);
  REQUIRE(a.epochs.size() == 5);

  double previous = a.initial_neg_elbo;
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    const EpochMetrics& m = a.epochs[e];
    CHECK(m.mean_neg_elbo < previous);
    previous = m.mean_neg_elbo;
    CHECK(std::abs(m.mean_neg_elbo - (m.reconstruction_term + m.kl_term)) < 1e-9);
    CHECK(m.kl_term >= 0.0);
    CHECK(m.kl_term <= 30.0 * std::log(10.0));
    CHECK(m.mean_neg_elbo == b.epochs[e].mean_neg_elbo);
    CHECK(m.mean_surrogate_entropy == b.epochs[e].mean_surrogate_entropy);
  }
}

TEST_CASE("training writes metrics and checkpoints") {
  TrainConfig cfg = small_training("STGS", 1.0);
  cfg.epochs = 2;
  cfg.seeds = {0, 1};
  cfg.variance_resamples = 100;
  cfg.variance_batch = 4;
  const fs::path dir = scratch_dir("train");
  const TrainResult result = train(cfg, load_dataset(cfg.dataset), dir);
  CHECK_FALSE(result.any_diverged());
  CHECK(fs::exists(dir / "checkpoint_seed0.bin"));
  CHECK(fs::exists(dir / "checkpoint_seed1.bin"));

  std::ifstream in(dir / "metrics.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,neg_elbo,kl,recon,entropy,grad_var,seconds,seed,estimator,tau,gap,K,schedule");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(line.find(",STGS,1,") != std::string::npos);
    CHECK(line.find(",constant:1") != std::string::npos);
  }
  CHECK(rows == 4);
  CHECK(result.seeds[0].epochs[0].gradient_variance.has_value());

  const SeedSummary s = summarize_final(result);
  CHECK(s.diverged == 0);
  CHECK(s.stddev >= 0.0);
}
