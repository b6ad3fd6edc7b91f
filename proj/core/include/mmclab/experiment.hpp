#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmclab/attacks.hpp"
#include "mmclab/dataset.hpp"
#include "mmclab/losses.hpp"
#include "mmclab/model.hpp"
#include "mmclab/trainer.hpp"

namespace mmc {

inline constexpr const char* kVersion = "0.1.0";

// Raised for malformed or inconsistent configuration; the CLI maps it to
// exit code 2 (runtime failures map to 3).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DatasetSpec {
  enum class Kind { Blobs, Idx };
  Kind kind = Kind::Blobs;
  // blobs
  int classes = 10;
  int dim = 32;
  int per_class = 200;
  int test_per_class = 100;
  double spread = 0.10;
  double simplex_scale = 0.35;
  // idx
  std::filesystem::path images, labels, test_images, test_labels;
  std::size_t max_n = 2000, test_max_n = 1000;

  Dataset build_train(std::uint64_t seed) const;
  Dataset build_test(std::uint64_t seed) const;
};

struct ModelSpec {
  std::vector<int> hidden = {64};
  int feature_dim = 10;
};

struct DensitySpec {
  bool enabled = false;
  std::vector<double> grid;
  double delta_c_factor = 0.05;  // delta_c = factor * group stddev
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  ModelSpec model;
  LossSpec loss;
  TrainConfig train;
  std::vector<AttackConfig> attacks;
  DensitySpec density;
  bool log_wall_time = false;
  int image_rows = 0, image_cols = 0;  // needed by Rotate

  // Strict parsing: unknown keys anywhere are ConfigErrors.
  static ExperimentConfig from_json_string(const std::string& text);
  static ExperimentConfig from_json_file(const std::filesystem::path& path);
  std::string canonical_json() const;
  void validate() const;
};

// Model + head checkpointing: model.bin per the model format, head.bin with
// the head's kind, hyperparameters, and parameter tensors.
void save_head(const LossHead& head, const LossSpec& spec, const std::filesystem::path& path);
std::unique_ptr<LossHead> load_head(const std::filesystem::path& path, int feature_dim, LossSpec* spec_out = nullptr);

struct ExperimentResult {
  TrainHistory history;
  std::vector<std::pair<std::string, RobustnessReport>> robustness;
  double clean_test_accuracy = 0.0;
};

// train -> attacks -> density, writing manifest.json, history.csv, model.bin,
// head.bin, robustness_<name>.csv, density.json and summary.csv under out_dir.
// Stage failures keep partial outputs and rethrow.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

// Attack + density stages against an existing checkpoint directory.
ExperimentResult run_attack_stage(const ExperimentConfig& cfg, const std::filesystem::path& model_dir,
                                  const std::filesystem::path& out_dir);

// Density report JSON for a frozen model/head over a dataset.
std::string density_report_json(const Mlp& model, const LossHead& head, const Dataset& data,
                                const std::vector<double>& grid, double delta_c_factor);

std::uint64_t fnv1a_hash(const std::string& text);

}  // namespace mmc
