#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmclab/tensor.hpp"

namespace mmc {

struct Dataset {
  Tensor inputs;  // N x p, values in [0, 1]
  std::vector<int> labels;
  int num_classes = 0;
  std::string split;

  std::size_t size() const { return labels.size(); }
  int input_dim() const { return inputs.numel() == 0 ? 0 : static_cast<int>(inputs.cols()); }
  void validate() const;  // range, label bounds, count agreement
};

// Gaussian clusters with means on a scaled simplex around the cube center,
// clipped to [0, 1]; balanced classes, seeded shuffling.
Dataset make_blobs(int num_classes, int dim, int per_class, double spread, std::uint64_t seed,
                   double simplex_scale = 0.35);

// IDX ingestion (big-endian magic 0x00000803 images / 0x00000801 labels);
// pixels scaled to [0,1] by /255, truncated to max_n.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t max_n);

// Writes the canonical IDX pair; pixels are quantized to round(p * 255).
void save_idx(const Dataset& ds, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path);

}  // namespace mmc
