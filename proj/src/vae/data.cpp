#include "gst/vae/data.hpp"

#include <algorithm>
#include <cstdio>
#include <span>
#include <fstream>
#include <iterator>

namespace gst::vae {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;
constexpr std::size_t kSide = 28;
constexpr double kFlipProbability = 0.03;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string(), 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::string& what) {
  if (offset + 4 > bytes.size()) throw DatasetError("truncated " + what, offset);
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void check_magic(std::uint32_t got, std::uint32_t want, const std::filesystem::path& path) {
  if (got != want) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "bad IDX magic 0x%08x (expected 0x%08x)", got, want);
    throw DatasetError(std::string(buf) + " in " + path.string(), 0);
  }
}

// Random blob: a few overlapping filled ellipses inside a 14x14 quadrant.
std::vector<std::uint8_t> make_part(RngStream& rng) {
  constexpr std::size_t q = kSide / 2;
  std::vector<std::uint8_t> part(q * q, 0);
  const int blobs = 2 + static_cast<int>(rng.next() % 2);
  for (int b = 0; b < blobs; ++b) {
    const double cy = 2.0 + rng.uniform() * (q - 4.0);
    const double cx = 2.0 + rng.uniform() * (q - 4.0);
    const double ry = 1.5 + rng.uniform() * 3.0;
    const double rx = 1.5 + rng.uniform() * 3.0;
    for (std::size_t y = 0; y < q; ++y) {
      for (std::size_t x = 0; x < q; ++x) {
        const double dy = (static_cast<double>(y) - cy) / ry;
        const double dx = (static_cast<double>(x) - cx) / rx;
        if (dy * dy + dx * dx <= 1.0) part[y * q + x] = 1;
      }
    }
  }
  return part;
}

}  // namespace

Tensor load_idx_images(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  check_magic(read_be32(bytes, 0, "image header"), kImageMagic, path);
  const std::size_t count = read_be32(bytes, 4, "image header");
  const std::size_t rows = read_be32(bytes, 8, "image header");
  const std::size_t cols = read_be32(bytes, 12, "image header");
  const std::size_t pixels = rows * cols;
  const std::size_t need = 16 + count * pixels;
  if (bytes.size() < need) {
    throw DatasetError("truncated image data in " + path.string() + " (expected " +
                           std::to_string(need) + " bytes)",
                       bytes.size());
  }
  Tensor images({count, pixels});
  auto out = images.data();
  for (std::size_t i = 0; i < count * pixels; ++i) out[i] = bytes[16 + i] / 255.0;
  return images;
}

std::vector<std::uint8_t> load_idx_labels(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  check_magic(read_be32(bytes, 0, "label header"), kLabelMagic, path);
  const std::size_t count = read_be32(bytes, 4, "label header");
  if (bytes.size() < 8 + count) {
    throw DatasetError("truncated label data in " + path.string(), bytes.size());
  }
  return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(count)};
}

MnistSplit load_mnist(const std::filesystem::path& path, bool train) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(path)) return {load_idx_images(path), {}};
  const std::string prefix = train ? "train" : "t10k";
  MnistSplit split{load_idx_images(path / (prefix + "-images-idx3-ubyte")), {}};
  const fs::path labels = path / (prefix + "-labels-idx1-ubyte");
  if (fs::exists(labels)) split.labels = load_idx_labels(labels);
  if (!split.labels.empty() && split.labels.size() != split.images.rows()) {
    throw DatasetError("label count does not match image count in " + path.string(), 4);
  }
  return split;
}

Tensor synth_dataset(std::size_t n, std::size_t pattern_count, RngStream& rng) {
  if (pattern_count == 0) throw std::invalid_argument("synth_dataset: pattern_count must be >= 1");
  constexpr std::size_t q = kSide / 2;
  std::vector<std::vector<std::vector<std::uint8_t>>> parts(4);
  for (auto& bank : parts) {
    for (std::size_t k = 0; k < pattern_count; ++k) bank.push_back(make_part(rng));
  }
  Tensor data({n, kSide * kSide});
  for (std::size_t r = 0; r < n; ++r) {
    auto row = data.row(r);
    for (std::size_t quad = 0; quad < 4; ++quad) {
      const auto& part = parts[quad][rng.next() % pattern_count];
      const std::size_t oy = (quad / 2) * q;
      const std::size_t ox = (quad % 2) * q;
      for (std::size_t y = 0; y < q; ++y) {
        for (std::size_t x = 0; x < q; ++x) row[(oy + y) * kSide + ox + x] = part[y * q + x];
      }
    }
    for (double& v : row) {
      if (rng.uniform() < kFlipProbability) v = 1.0 - v;
    }
  }
  return data;
}

Tensor slice_rows(const Tensor& data, std::size_t begin, std::size_t end) {
  if (begin > end || end > data.rows()) throw ShapeError("slice_rows: range out of bounds");
  const std::size_t cols = data.cols();
  std::vector<double> out(data.data().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                          data.data().begin() + static_cast<std::ptrdiff_t>(end * cols));
  return Tensor({end - begin, cols}, std::move(out));
}

Tensor take_rows(const Tensor& data, std::span<const std::size_t> index) {
  const std::size_t cols = data.cols();
  Tensor out({index.size(), cols});
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= data.rows()) throw ShapeError("take_rows: index out of range");
    std::ranges::copy(data.row(index[r]), out.row(r).begin());
  }
  return out;
}

Tensor binarize(const Tensor& data) {
  Tensor out = data;
  for (double& v : out.data()) v = v >= 0.5 ? 1.0 : 0.0;
  return out;
}

}  // namespace gst::vae
