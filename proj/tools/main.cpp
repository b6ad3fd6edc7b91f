#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "mmclab/centers.hpp"
#include "mmclab/experiment.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::vector<double> parse_grid(const std::string& grid) {
  std::vector<double> out;
  std::stringstream ss(grid);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stod(item));
  }
  if (out.empty()) throw mmc::ConfigError("density: empty grid");
  return out;
}

int cmd_centers(double c_mm, int dim, int classes, const std::string& out) {
  mmc::CenterSet cs = mmc::generate_mm_centers(c_mm, dim, classes);
  std::string doc = mmc::center_set_to_json(cs);
  if (out.empty())
    std::cout << doc << "\n";
  else
    write_file(out, doc + "\n");
  return kExitOk;
}

int cmd_train(const std::string& config, const std::string& out, long long seed_override) {
  mmc::ExperimentConfig cfg = mmc::ExperimentConfig::from_json_file(config);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  cfg.attacks.clear();  // training stage only
  cfg.density.enabled = false;
  mmc::run_experiment(cfg, out);
  return kExitOk;
}

int cmd_attack(const std::string& config, const std::string& model_dir, const std::string& out,
               long long seed_override) {
  mmc::ExperimentConfig cfg = mmc::ExperimentConfig::from_json_file(config);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  mmc::run_attack_stage(cfg, model_dir, out);
  return kExitOk;
}

int cmd_density(const std::string& model_dir, const std::string& loss_json, const std::string& dataset_json,
                const std::string& grid, double delta_c_factor, const std::string& out) {
  mmc::Mlp model = mmc::Mlp::load(fs::path(model_dir) / "model.bin");

  // the head comes from the checkpoint unless a loss spec overrides it
  std::unique_ptr<mmc::LossHead> head;
  if (loss_json.empty()) {
    head = mmc::load_head(fs::path(model_dir) / "head.bin", model.feature_dim());
  } else {
    std::string text = loss_json;
    if (fs::exists(loss_json)) {
      std::ifstream is(loss_json);
      std::stringstream ss;
      ss << is.rdbuf();
      text = ss.str();
    }
    mmc::ExperimentConfig wrapper = mmc::ExperimentConfig::from_json_string("{\"loss\":" + text + "}");
    // class count is taken from the checkpointed head
    auto stored = mmc::load_head(fs::path(model_dir) / "head.bin", model.feature_dim());
    head = mmc::make_loss_head(wrapper.loss, model.feature_dim(), stored->num_classes(), 0);
  }

  std::ifstream is(dataset_json);
  if (!is) throw mmc::ConfigError("cannot open dataset spec " + dataset_json);
  std::stringstream ss;
  ss << is.rdbuf();
  // reuse the experiment parser for the dataset object alone
  mmc::ExperimentConfig wrapper = mmc::ExperimentConfig::from_json_string("{\"dataset\":" + ss.str() + "}");
  mmc::Dataset data = wrapper.dataset.build_train(wrapper.seed);

  std::string doc = mmc::density_report_json(model, *head, data, parse_grid(grid), delta_c_factor);
  if (out.empty())
    std::cout << doc << "\n";
  else
    write_file(out, doc + "\n");
  return kExitOk;
}

int cmd_run(const std::string& config, const std::string& out, long long seed_override) {
  mmc::ExperimentConfig cfg = mmc::ExperimentConfig::from_json_file(config);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  mmc::run_experiment(cfg, out);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Max-Mahalanobis-center training and robustness laboratory"};
  app.require_subcommand(1);

  // centers
  auto* centers = app.add_subcommand("centers", "Generate Max-Mahalanobis class centers as JSON");
  double c_mm = 10.0;
  int dim = 10, classes = 10;
  std::string centers_out;
  centers->add_option("--cmm", c_mm, "Common center norm")->required();
  centers->add_option("--dim", dim, "Feature dimension")->required();
  centers->add_option("--classes", classes, "Number of classes")->required();
  centers->add_option("--out", centers_out, "Output file (stdout when omitted)");

  // shared options
  std::string config_path, out_dir, model_dir;
  long long seed_override = -1;

  auto* train_cmd = app.add_subcommand("train", "Train a model per the experiment config");
  train_cmd->add_option("--config", config_path, "Experiment config JSON")->required();
  train_cmd->add_option("--out", out_dir, "Output directory")->required();
  train_cmd->add_option("--seed", seed_override, "Seed override");

  auto* attack_cmd = app.add_subcommand("attack", "Attack an existing checkpoint");
  attack_cmd->add_option("--config", config_path, "Experiment config JSON")->required();
  attack_cmd->add_option("--model", model_dir, "Checkpoint directory (model.bin + head.bin)")->required();
  attack_cmd->add_option("--out", out_dir, "Output directory")->required();
  attack_cmd->add_option("--seed", seed_override, "Seed override");

  auto* density_cmd = app.add_subcommand("density", "Density report for a frozen checkpoint");
  std::string dataset_json, loss_json, grid = "0.5,1.0,2.0", density_out;
  double delta_c_factor = 0.05;
  density_cmd->add_option("--model", model_dir, "Checkpoint directory")->required();
  density_cmd->add_option("--loss", loss_json, "Loss spec JSON (inline or file); checkpoint head when omitted");
  density_cmd->add_option("--dataset", dataset_json, "Dataset spec JSON file")->required();
  density_cmd->add_option("--grid", grid, "Comma-separated loss levels");
  density_cmd->add_option("--delta-c-factor", delta_c_factor, "Band width as a fraction of the group stddev");
  density_cmd->add_option("--out", density_out, "Output file (stdout when omitted)");

  auto* run_cmd = app.add_subcommand("run", "Full experiment: train, attacks, density, summary");
  run_cmd->add_option("--config", config_path, "Experiment config JSON")->required();
  run_cmd->add_option("--out", out_dir, "Output directory")->required();
  run_cmd->add_option("--seed", seed_override, "Seed override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (centers->parsed()) return cmd_centers(c_mm, dim, classes, centers_out);
    if (train_cmd->parsed()) return cmd_train(config_path, out_dir, seed_override);
    if (attack_cmd->parsed()) return cmd_attack(config_path, model_dir, out_dir, seed_override);
    if (density_cmd->parsed())
      return cmd_density(model_dir, loss_json, dataset_json, grid, delta_c_factor, density_out);
    if (run_cmd->parsed()) return cmd_run(config_path, out_dir, seed_override);
  } catch (const mmc::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid argument: %s\n", e.what());
    return kExitConfig;
  } catch (const std::out_of_range& e) {
    std::fprintf(stderr, "invalid argument: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}
