#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace gst {

/// Deterministic xoshiro256** stream seeded through splitmix64.
///
/// Satisfies UniformRandomBitGenerator. Independent contexts should use
/// distinct seeds, typically via substream().
class RngStream {
 public:
  using result_type = std::uint64_t;

  explicit RngStream(std::uint64_t seed = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return next(); }
  std::uint64_t next();

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform clamped to [kUniformEps, 1 - kUniformEps].
  double uniform_open();

  /// Child stream keyed by (seed, id); does not advance this stream.
  RngStream substream(std::uint64_t id) const;

  std::uint64_t seed() const { return seed_; }

  static constexpr double kUniformEps = 1e-12;

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_;
};

/// splitmix64 finaliser; used to derive seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace gst
