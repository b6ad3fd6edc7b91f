#include "mmclab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "mmclab/centers.hpp"
#include "mmclab/rng.hpp"

namespace mmc {

void Dataset::validate() const {
  if (inputs.numel() > 0 && inputs.rows() != labels.size())
    throw std::invalid_argument("dataset: input/label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= num_classes) throw std::invalid_argument("dataset: label out of range");
  for (double v : inputs.values())
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("dataset: pixel outside [0,1]");
}

Dataset make_blobs(int num_classes, int dim, int per_class, double spread, std::uint64_t seed,
                   double simplex_scale) {
  if (num_classes < 2) throw std::invalid_argument("blobs: need at least two classes");
  if (per_class < 0) throw std::invalid_argument("blobs: per_class must be non-negative");
  if (!(spread > 0.0)) throw std::invalid_argument("blobs: degenerate spread");
  if (!(simplex_scale > 0.0) || simplex_scale > 0.5)
    throw std::invalid_argument("blobs: simplex_scale must be in (0, 0.5] to keep means inside the cube");
  if (num_classes > dim + 1) throw std::invalid_argument("blobs: need dim + 1 >= classes for simplex means");

  CenterSet simplex = generate_mm_centers(simplex_scale, dim, num_classes);
  Rng rng(seed);

  std::size_t n = static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(per_class);
  Dataset ds;
  ds.num_classes = num_classes;
  ds.inputs = Tensor({n, static_cast<std::size_t>(dim)});
  ds.labels.resize(n);

  std::size_t row = 0;
  for (int k = 0; k < num_classes; ++k) {
    auto mean = simplex.center(k);
    for (int s = 0; s < per_class; ++s, ++row) {
      ds.labels[row] = k;
      auto x = ds.inputs.row(row);
      for (int j = 0; j < dim; ++j)
        x[static_cast<std::size_t>(j)] =
            std::clamp(0.5 + mean[static_cast<std::size_t>(j)] + spread * rng.normal(), 0.0, 1.0);
    }
  }

  // seeded shuffle so batches are not class-blocked
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  Dataset shuffled;
  shuffled.num_classes = num_classes;
  shuffled.split = "blobs";
  shuffled.inputs = Tensor({n, static_cast<std::size_t>(dim)});
  shuffled.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    shuffled.labels[i] = ds.labels[order[i]];
    auto src = ds.inputs.row(order[i]);
    auto dst = shuffled.inputs.row(i);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return shuffled;
}

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_u32_be(std::istream& is, const std::string& what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("idx: truncated " + what);
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

void write_u32_be(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t max_n) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw std::runtime_error("idx: cannot open " + images_path.string());
  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) throw std::runtime_error("idx: cannot open " + labels_path.string());

  std::uint32_t img_magic = read_u32_be(imgs, "image header");
  if (img_magic != kImagesMagic)
    throw std::runtime_error("idx: bad image magic (expected 0x00000803, got 0x" +
                             [&] { char buf[16]; std::snprintf(buf, sizeof buf, "%08x", img_magic); return std::string(buf); }() + ")");
  std::uint32_t n_images = read_u32_be(imgs, "image header");
  std::uint32_t rows = read_u32_be(imgs, "image header");
  std::uint32_t cols = read_u32_be(imgs, "image header");

  std::uint32_t lab_magic = read_u32_be(labs, "label header");
  if (lab_magic != kLabelsMagic)
    throw std::runtime_error("idx: bad label magic (expected 0x00000801)");
  std::uint32_t n_labels = read_u32_be(labs, "label header");

  if (n_images != n_labels)
    throw std::runtime_error("idx: image count " + std::to_string(n_images) + " does not match label count " +
                             std::to_string(n_labels));

  std::size_t n = std::min<std::size_t>(n_images, max_n);
  std::size_t pixels = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);

  Dataset ds;
  ds.split = "idx";
  ds.inputs = Tensor({n, pixels});
  ds.labels.resize(n);

  std::vector<unsigned char> buf(pixels);
  for (std::size_t i = 0; i < n; ++i) {
    imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels));
    if (!imgs) throw std::runtime_error("idx: truncated image data at record " + std::to_string(i));
    auto dst = ds.inputs.row(i);
    for (std::size_t j = 0; j < pixels; ++j) dst[j] = static_cast<double>(buf[j]) / 255.0;
    char lab;
    labs.read(&lab, 1);
    if (!labs) throw std::runtime_error("idx: truncated label data at record " + std::to_string(i));
    ds.labels[i] = static_cast<int>(static_cast<unsigned char>(lab));
  }
  int max_label = -1;
  for (int y : ds.labels) max_label = std::max(max_label, y);
  ds.num_classes = max_label + 1;
  return ds;
}

void save_idx(const Dataset& ds, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path) {
  std::ofstream imgs(images_path, std::ios::binary);
  if (!imgs) throw std::runtime_error("idx: cannot open " + images_path.string() + " for writing");
  std::ofstream labs(labels_path, std::ios::binary);
  if (!labs) throw std::runtime_error("idx: cannot open " + labels_path.string() + " for writing");

  std::size_t n = ds.size();
  std::size_t pixels = n == 0 ? 0 : ds.inputs.cols();
  write_u32_be(imgs, kImagesMagic);
  write_u32_be(imgs, static_cast<std::uint32_t>(n));
  write_u32_be(imgs, 1);
  write_u32_be(imgs, static_cast<std::uint32_t>(pixels));
  for (std::size_t i = 0; i < n; ++i) {
    auto row = ds.inputs.row(i);
    for (double v : row) {
      auto q = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      imgs.write(reinterpret_cast<const char*>(&q), 1);
    }
  }
  write_u32_be(labs, kLabelsMagic);
  write_u32_be(labs, static_cast<std::uint32_t>(n));
  for (int y : ds.labels) {
    auto b = static_cast<unsigned char>(y);
    labs.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!imgs || !labs) throw std::runtime_error("idx: write failed");
}

}  // namespace mmc
