#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mmclab/attacks.hpp"
#include "mmclab/dataset.hpp"
#include "mmclab/losses.hpp"
#include "mmclab/model.hpp"

namespace mmc {

struct AdversarialTrainSettings {
  bool enabled = false;
  AttackMode mode = AttackMode::Untargeted;
  int pgd_steps = 10;
  double epsilon = 8.0 / 255.0;
  double step_size = 2.0 / 255.0;
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 64;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_opt = 1e-8;
  std::uint64_t seed = 0;
  AdversarialTrainSettings at;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double wall_ms = 0.0;
  double train_loss = 0.0;
  double clean_accuracy = 0.0;
  // Pairing-bound bookkeeping for adversarial training with center losses:
  // means of |z - mu|^2 + |z* - mu|^2 and of 0.5 |z - z*|^2 over the
  // epoch's batches; the former upper-bounds the latter per example.
  bool alp_checked = false;
  double alp_pair_loss = 0.0;
  double alp_bound_rhs = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

class AdamOptimizer {
public:
  AdamOptimizer(std::vector<Tensor*> params, std::vector<Tensor*> grads, double lr, double beta1,
                double beta2, double eps);
  void step();
  int steps_taken() const { return t_; }

private:
  std::vector<Tensor*> params_;
  std::vector<Tensor*> grads_;
  std::vector<Tensor> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
};

// Standard training loop: seeded shuffling, mean-reduced batches, per-epoch
// clean accuracy on eval_set (train set when null). Throws on non-finite
// loss with epoch/batch diagnostics.
TrainHistory train(Mlp& model, LossHead& head, const Dataset& train_set, const Dataset* eval_set,
                   const TrainConfig& cfg);

// Replaces every minibatch by PGD adversarial counterparts (objective chosen
// to match the head) before the gradient step. For center-based heads the
// pairing upper bound is asserted and recorded per epoch.
TrainHistory adversarial_train(Mlp& model, LossHead& head, const Dataset& train_set,
                               const Dataset* eval_set, const TrainConfig& cfg);

double clean_accuracy(const Mlp& model, const LossHead& head, const Dataset& data);

// CSV columns: epoch,wall_ms,train_loss,clean_acc. Wall time is written as 0
// unless include_wall_ms is set, keeping default outputs byte-reproducible.
void write_history_csv(const TrainHistory& history, const std::filesystem::path& path,
                       bool include_wall_ms = false);

}  // namespace mmc
