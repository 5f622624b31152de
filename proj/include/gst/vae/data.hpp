#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "gst/rng.hpp"
#include "gst/tensor.hpp"

namespace gst::vae {

/// Malformed or truncated IDX file. `offset` is the byte position at which
/// parsing failed.
class DatasetError : public std::runtime_error {
 public:
  DatasetError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

/// IDX image file (magic 0x00000803), pixels scaled to [0, 1]; returns
/// (count x rows*cols).
Tensor load_idx_images(const std::filesystem::path& path);
/// IDX label file (magic 0x00000801).
std::vector<std::uint8_t> load_idx_labels(const std::filesystem::path& path);

struct MnistSplit {
  Tensor images;
  std::vector<std::uint8_t> labels;
};

/// Reads `{train,t10k}-images-idx3-ubyte` and the matching labels from a
/// directory, or an image file directly when `path` names a file.
MnistSplit load_mnist(const std::filesystem::path& path, bool train = true);

/// Binary images built from random prototype parts plus pixel noise.
///
/// The 28x28 canvas is split into four 14x14 quadrants. Each quadrant owns
/// `pattern_count` random blob prototypes, and an example picks one per
/// quadrant independently, then flips every pixel with probability 0.03.
/// The result depends only on (n, pattern_count, rng state).
Tensor synth_dataset(std::size_t n, std::size_t pattern_count, RngStream& rng);

/// Rows [begin, end) of a (rows x cols) tensor.
Tensor slice_rows(const Tensor& data, std::size_t begin, std::size_t end);
/// Rows picked by `index`, in order.
Tensor take_rows(const Tensor& data, std::span<const std::size_t> index);
/// Values >= 0.5 become 1, the rest 0.
Tensor binarize(const Tensor& data);

}  // namespace gst::vae
