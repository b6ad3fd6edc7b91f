#pragma once

#include <span>
#include <string>
#include <vector>

#include "mmclab/tensor.hpp"

namespace mmc {

// A set of L class centers in R^d sharing a common norm c_mm.
struct CenterSet {
  Tensor centers;  // L x d
  double c_mm = 0.0;
  int num_classes = 0;
  int feature_dim = 0;

  std::span<const double> center(int label) const { return centers.row(static_cast<std::size_t>(label)); }
};

// Max-Mahalanobis centers: L equal-norm vectors in R^d forming a scaled
// regular simplex, i.e. maximizing the minimal pairwise angle. Requires
// 2 <= L <= d+1 and c_mm > 0.
CenterSet generate_mm_centers(double c_mm, int d, int L);

struct Dispersion {
  double max_inner;  // max_{i != j} <mu_i, mu_j>
  double min_angle;  // angle of the worst pair, radians
};
Dispersion center_dispersion(const CenterSet& cs);

// Checks the defining geometry: common norm (relative tolerance) and equal
// pairwise inner products -c_mm^2/(L-1) (absolute tolerance).
bool is_max_mahalanobis(const CenterSet& cs, double norm_tol = 1e-6, double inner_tol = 1e-5);

// Class hierarchy for hierarchical center construction. Node 0 is the root;
// leaves carry labels 0..L-1. level_scales[s-1] is the scale used for child
// sets at depth s and must be strictly decreasing.
struct ClassTree {
  struct Node {
    int parent = -1;
    std::vector<int> children;
    int label = -1;  // leaves only
  };
  std::vector<Node> nodes;
  std::vector<double> level_scales;

  static ClassTree single_level(int num_classes, double scale);
  static ClassTree two_level(int superclasses, int classes_per_super, double scale1, double scale2);

  int num_leaves() const;
  int depth_of(int node) const;
  // Rejects trees with non-unique leaf labels, < 2 children on internal
  // nodes, child counts exceeding d+1, or non-decreasing scales.
  void validate(int d) const;
};

// Hierarchical centers: each node's children get a locally generated
// Max-Mahalanobis set (scaled by the depth's constant) shifted by the
// parent's center; leaf l receives the accumulated sum. The returned set's
// c_mm records the depth-1 scale; row norms are only uniform for
// single-level trees.
CenterSet generate_hm_centers(const ClassTree& tree, int d);

// JSON document {"c_mm":..., "L":..., "d":..., "centers":[[...],...]}.
std::string center_set_to_json(const CenterSet& cs);
CenterSet center_set_from_json(const std::string& text);

}  // namespace mmc
