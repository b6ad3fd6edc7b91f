#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mmclab/dataset.hpp"
#include "mmclab/losses.hpp"
#include "mmclab/model.hpp"
#include "mmclab/rng.hpp"

namespace mmc {

enum class AttackFamily { Pgd, Mim, Cw, Spsa, Noise, Rotate };
enum class AttackMode { Untargeted, Targeted };
enum class AttackObjective { Standard, AdaUn1, AdaUn2, AdaTar1, AdaTar2 };

std::string to_string(AttackFamily f);
std::string to_string(AttackMode m);
std::string to_string(AttackObjective o);
AttackFamily attack_family_from_string(const std::string& s);
AttackMode attack_mode_from_string(const std::string& s);
AttackObjective attack_objective_from_string(const std::string& s);

struct CwParams {
  int binary_steps = 9;
  double c_init = 0.01;
  double lr = 0.005;
  int iters = 1000;
};

struct SpsaParams {
  int batch = 128;
  double lr = 0.01;
  double delta = 0.01;
};

struct AttackConfig {
  std::string name;  // report label; defaults to the family name
  AttackFamily family = AttackFamily::Pgd;
  AttackMode mode = AttackMode::Untargeted;
  AttackObjective objective = AttackObjective::Standard;
  double epsilon = 8.0 / 255.0;    // l-inf budget, pixel units
  double step_size = 2.0 / 255.0;
  int steps = 10;
  CwParams cw;
  SpsaParams spsa;
  double noise_sigma = 0.05;
  double rotate_degrees = 30.0;
  bool random_start = false;   // PGD starts from the clean input by default
  double mim_decay = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct CwSearchStep {
  double c = 0.0;
  bool success = false;
  double best_l2 = std::numeric_limits<double>::infinity();
};

struct AdvResult {
  std::vector<double> x_adv;
  bool success = false;
  double l2_distortion = 0.0;
  double linf_distortion = 0.0;
  int iterations_used = 0;
  std::vector<double> objective_trace;   // objective at start and after each step
  std::vector<CwSearchStep> cw_trace;    // binary-search record (C&W only)
  bool aborted = false;                  // non-finite gradient encountered
};

// The scalar the attack minimizes, with gradient wrt the feature z.
// Standard: SCE over the head's prediction logits (negated when untargeted).
// Adaptive kinds rewrite the objective in terms of the center distances and
// require a center-based head. Targeted kinds require y_t >= 0; the
// runner-up label for AdaUn2 is the highest non-true prediction.
ScalarGrad adaptive_objective(AttackObjective kind, const LossHead& head, std::span<const double> z,
                              int y, int y_t, AttackMode mode);

AdvResult pgd(const Mlp& model, const LossHead& head, std::span<const double> x, int y, int y_t,
              const AttackConfig& cfg, Rng* rng = nullptr);
AdvResult mim(const Mlp& model, const LossHead& head, std::span<const double> x, int y,
              const AttackConfig& cfg);
AdvResult cw(const Mlp& model, const LossHead& head, std::span<const double> x, int y, int y_t,
             const AttackConfig& cfg);
AdvResult spsa(const Mlp& model, const LossHead& head, std::span<const double> x, int y, int y_t,
               const AttackConfig& cfg, Rng& rng);

// Gaussian noise (clipped) or bilinear rotation about the image center with
// zero padding; rotation requires rows * cols == x.size().
std::vector<double> corrupt_noise(std::span<const double> x, double sigma, Rng& rng);
std::vector<double> corrupt_rotate(std::span<const double> x, double degrees, int rows, int cols);

// Simultaneous-perturbation estimate of grad f at x: Rademacher +-delta
// probes averaged over `probes` draws.
std::vector<double> spsa_gradient_estimate(const std::function<double(std::span<const double>)>& f,
                                           std::span<const double> x, double delta, int probes, Rng& rng);

struct RobustnessReport {
  struct Row {
    std::size_t index = 0;
    int clean_label = 0;
    int pred_clean = 0;
    int pred_adv = 0;
    bool success = false;
    double l2 = 0.0;
    double linf = 0.0;
  };
  double clean_accuracy = 0.0;
  double adversarial_accuracy = 0.0;
  double mean_l2 = 0.0;    // over successful attacks
  double mean_linf = 0.0;  // over successful attacks
  std::size_t evaluated = 0;
  std::size_t successes = 0;
  std::vector<Row> rows;
};

// Runs cfg against every example; targeted runs draw y_t != y from the
// per-example stream of cfg.seed. image_rows/cols are required for Rotate.
RobustnessReport evaluate_robustness(const Mlp& model, const LossHead& head, const Dataset& data,
                                     const AttackConfig& cfg, int image_rows = 0, int image_cols = 0);

// CSV columns: index,clean_label,pred_clean,pred_adv,success,l2,linf.
void write_robustness_csv(const RobustnessReport& report, const std::filesystem::path& path);

}  // namespace mmc
