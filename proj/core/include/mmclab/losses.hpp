#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mmclab/centers.hpp"
#include "mmclab/tensor.hpp"

namespace mmc {

struct ScalarGrad {
  double value = 0.0;
  std::vector<double> grad;
};

// Log-probabilities via max-subtraction; exp of the result sums to 1.
std::vector<double> softmax_log_prob(std::span<const double> logits);
std::vector<double> softmax(std::span<const double> logits);

// Cross-entropy of softmax(logits) against a one-hot label. grad is with
// respect to the logits: softmax(logits) - 1_y.
ScalarGrad sce_loss(std::span<const double> logits, int label);

// Quadratic logits h_i = -sigma_i |z - mu_i|^2 + B_i.
struct QuadraticLogitParams {
  Tensor mus;                  // L x d
  std::vector<double> sigmas;  // L, strictly positive
  std::vector<double> biases;  // L

  int num_classes() const { return static_cast<int>(sigmas.size()); }
  int feature_dim() const { return static_cast<int>(mus.cols()); }
  void validate() const;

  // mu_i = W_i/2, sigma_i = 1, B_i = b_i + |W_i|^2/4 makes the quadratic
  // softmax coincide exactly with softmax(Wz + b).
  static QuadraticLogitParams sce_embedding(const Tensor& W, std::span<const double> b);
};

std::vector<double> quadratic_logits(std::span<const double> z, const QuadraticLogitParams& q);

// Cross-entropy over quadratic logits; grad wrt the feature z.
ScalarGrad gsce_loss(std::span<const double> z, int label, const QuadraticLogitParams& q);

// Large-margin variant: margin m subtracted from the true class logit.
ScalarGrad lgm_loss(std::span<const double> z, int label, const QuadraticLogitParams& q, double margin);

// -log[exp(-|z-mu_y|^2/2) / sum_l exp(-|z-mu_l|^2/2)]; for equal-norm centers
// identical to the inner-product form -log[exp(z.mu_y)/sum_l exp(z.mu_l)].
ScalarGrad mmlda_loss(std::span<const double> z, int label, const CenterSet& cs);
double mmlda_loss_inner_form(std::span<const double> z, int label, const CenterSet& cs);

// 0.5 |z - mu*_y|^2 against fixed centers; grad is exactly z - mu*_y.
ScalarGrad mmc_loss(std::span<const double> z, int label, const CenterSet& cs);

struct CenterJointEval {
  double value = 0.0;
  std::vector<double> dlogits;
  std::vector<double> dz;        // the center term only; the logit path is the caller's
  std::vector<double> dcenter_y;
};
// sce(logits, y) + lambda * 0.5 |z - centers_y|^2 with trainable centers.
CenterJointEval center_loss_joint(std::span<const double> logits, std::span<const double> z, int label,
                                  const Tensor& centers, double lambda);

struct EmcEval {
  double value = 0.0;
  std::vector<double> dz;
  std::vector<double> dmu_y;
};
// 0.5 |z - mu_y|^2 + 1/(2 alpha) |mu_y - mu*_y|^2 with trainable mu tethered
// to the fixed centers.
EmcEval emc_loss(std::span<const double> z, int label, const Tensor& mu, const CenterSet& cs, double alpha);

struct Prediction {
  int label = 0;
  std::vector<double> scores;  // softmax-normalized
};

enum class LossKind { Sce, Gsce, Lgm, Mmlda, Center, Mmc, Emc };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

struct LossSpec {
  LossKind kind = LossKind::Mmc;
  double c_mm = 10.0;    // Mmlda / Mmc / Emc
  double lambda = 0.1;   // Center
  double alpha = 1.0;    // Emc
  double margin = 1.0;   // Lgm
  void validate() const;
};

// A training objective bound to concrete parameters. Evaluation is pure;
// train_loss additionally accumulates gradients for the head's trainable
// parameters, which the optimizer updates like network weights.
class LossHead {
public:
  virtual ~LossHead() = default;

  virtual LossKind kind() const = 0;
  virtual int num_classes() const = 0;
  virtual int feature_dim() const = 0;

  // Per-example loss with gradient wrt the feature.
  virtual ScalarGrad loss(std::span<const double> z, int label) const = 0;

  // As loss(), scaled by weight, also accumulating weight * parameter grads.
  virtual double train_loss(std::span<const double> z, int label, std::span<double> dz, double weight) = 0;

  // Pre-softmax prediction scores: the logits for the SCE family,
  // -0.5 |z - mu*_l|^2 for center-based heads.
  virtual std::vector<double> prediction_logits(std::span<const double> z) const = 0;

  // softmax over prediction_logits, argmax label with lowest-index tie-break.
  Prediction predict(std::span<const double> z) const;

  // Cross-entropy over prediction_logits with gradient wrt z (the standard,
  // non-adaptive attack objective).
  virtual ScalarGrad sce_on_logits(std::span<const double> z, int label) const = 0;

  // Center-based heads only: 0.5 |z - mu*_label|^2 with gradient.
  virtual bool has_centers() const { return false; }
  virtual ScalarGrad center_distance_loss(std::span<const double> z, int label) const;
  virtual const CenterSet* center_set() const { return nullptr; }

  // h_a - h_b over prediction_logits with gradient wrt z (margin attacks).
  virtual ScalarGrad logit_margin(std::span<const double> z, int a, int b) const;

  virtual std::vector<Tensor*> parameters() { return {}; }
  virtual std::vector<Tensor*> gradients() { return {}; }
  virtual void zero_grad() {}
  // Re-establish parameter constraints after an optimizer step (e.g. keep
  // quadratic-logit sigmas positive).
  virtual void post_step_clamp() {}
};

std::unique_ptr<LossHead> make_loss_head(const LossSpec& spec, int feature_dim, int num_classes,
                                         std::uint64_t seed);

}  // namespace mmc
