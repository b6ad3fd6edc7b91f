#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mmclab/losses.hpp"
#include "mmclab/tensor.hpp"

namespace mmc {

// Loss statistics over the per-class subset D_k.
struct ClassLossStats {
  int label = 0;
  std::size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;     // unbiased; meaningless when degenerate
  bool degenerate = true;  // singleton group or zero spread
};

// Loss statistics over D_{k,khat}: true label k, runner-up logit khat.
struct PairLossStats {
  int label = 0;
  int runner_up = 0;
  std::size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;
  bool degenerate = true;
};

std::vector<ClassLossStats> fit_class_loss_stats(std::span<const double> losses, std::span<const int> labels,
                                                 int num_classes);
std::vector<PairLossStats> fit_pair_loss_stats(std::span<const double> losses, std::span<const int> labels,
                                               std::span<const int> runner_ups, int num_classes);

// The level set of h_i - h_j = c for quadratic logits: a hypersphere when
// sigma_i != sigma_j (possibly empty), a hyperplane normal.z = offset when
// the sigmas coincide.
struct ContourSolution {
  enum class Kind { Sphere, Hyperplane, Empty };
  Kind kind = Kind::Empty;
  std::vector<double> center;
  double radius_sq = 0.0;  // also carries the (negative) diagnostic for Empty
  std::vector<double> normal;
  double offset = 0.0;
};

ContourSolution contour_sphere(int i, int j, const QuadraticLogitParams& q, double c);

// The pair constant of the contour geometry:
// sigma_i sigma_j |mu_i - mu_j|^2 / (sigma_i - sigma_j)^2 + (B_i - B_j)/(sigma_i - sigma_j).
double pair_bias(int i, int j, const QuadraticLogitParams& q);

// Tight lower bound C* of the attainable loss when sigma_k > sigma_khat:
// log(1 + exp(B_{k,khat} (sigma_khat - sigma_k))). Contours below it are empty.
double gsce_lower_bound(int k, int khat, const QuadraticLogitParams& q);

// Surface area of the unit (d-1)-sphere, 2 pi^{d/2} / Gamma(d/2).
double unit_sphere_area(int d);

// Local pairwise (smooth-max) approximation of the softmax loss:
// log(1 + exp(h_khat - h_y)) with khat the runner-up logit. Always a lower
// bound on the exact loss; the gap is reported as a diagnostic of the
// approximation quality, never asserted.
double lse_pair_loss(std::span<const double> logits, int label);

// Unnormalized sample densities. The optional shell constant multiplies in
// the exact surface-area factor; ratios at equal group sizes are the
// meaningful quantity either way.
double density_gsce(double C, const PairLossStats& stats, const QuadraticLogitParams& q, int d,
                    bool include_shell_constant = false);
double density_mmc(double C, const ClassLossStats& stats, int d, bool include_shell_constant = false);

// Loss-band shell volumes, first order in delta_c.
double mmc_shell_volume(double C, double delta_c, int d);
double gsce_shell_volume(double C, int k, int khat, const QuadraticLogitParams& q, double delta_c, int d);

struct EmpiricalDensity {
  std::size_t count = 0;   // examples with loss in [C, C + delta_c)
  double volume = 0.0;
  double density = 0.0;
};

using PerExampleLoss = std::function<double(std::span<const double> z, int label)>;

// Band count over the features divided by the analytic band volume.
EmpiricalDensity empirical_density(const Tensor& features, std::span<const int> labels,
                                   const PerExampleLoss& loss_fn, double C, double delta_c, double volume);

}  // namespace mmc
