#include "mmclab/centers.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

namespace mmc {

CenterSet generate_mm_centers(double c_mm, int d, int L) {
  if (c_mm <= 0.0) throw std::invalid_argument("mm centers: c_mm must be positive");
  if (L < 2) throw std::invalid_argument("mm centers: need at least two classes");
  if (d < 1) throw std::invalid_argument("mm centers: feature dimension must be >= 1");
  if (L > d + 1) throw std::invalid_argument("mm centers: L <= d+1 is required (got L=" + std::to_string(L) +
                                             ", d=" + std::to_string(d) + ")");

  Tensor mu({static_cast<std::size_t>(L), static_cast<std::size_t>(d)});
  mu(0, 0) = 1.0;
  for (int i = 1; i < L; ++i) {
    for (int j = 0; j < i; ++j) {
      double inner = dot(mu.row(i), mu.row(j));
      mu(i, j) = -(1.0 + inner * (L - 1)) / (mu(j, j) * (L - 1));
    }
    double arg = 1.0 - squared_norm(mu.row(i));
    if (arg < -1e-9)
      std::fprintf(stderr, "mm centers: clamped sqrt argument %.3e at row %d (L=%d, d=%d)\n", arg, i, L, d);
    double coord = std::sqrt(std::max(arg, 0.0));
    // for i == d (only reachable when L == d+1) the simplex closes and the
    // remaining coordinate is exactly zero; there is no slot to write.
    if (i < d) mu(i, i) = coord;
  }
  for (double& v : mu.values()) v *= c_mm;

  return CenterSet{std::move(mu), c_mm, L, d};
}

Dispersion center_dispersion(const CenterSet& cs) {
  double max_inner = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < cs.num_classes; ++i)
    for (int j = i + 1; j < cs.num_classes; ++j)
      max_inner = std::max(max_inner, dot(cs.center(i), cs.center(j)));
  double denom = cs.c_mm * cs.c_mm;
  double cosv = std::clamp(max_inner / denom, -1.0, 1.0);
  return {max_inner, std::acos(cosv)};
}

bool is_max_mahalanobis(const CenterSet& cs, double norm_tol, double inner_tol) {
  if (cs.num_classes < 2 || cs.c_mm <= 0.0) return false;
  for (int i = 0; i < cs.num_classes; ++i) {
    double n = euclidean_norm(cs.center(i));
    if (std::fabs(n - cs.c_mm) > norm_tol * cs.c_mm) return false;
  }
  double expected = -cs.c_mm * cs.c_mm / (cs.num_classes - 1);
  for (int i = 0; i < cs.num_classes; ++i)
    for (int j = i + 1; j < cs.num_classes; ++j)
      if (std::fabs(dot(cs.center(i), cs.center(j)) - expected) > inner_tol) return false;
  return true;
}

ClassTree ClassTree::single_level(int num_classes, double scale) {
  ClassTree t;
  t.level_scales = {scale};
  t.nodes.resize(static_cast<std::size_t>(num_classes) + 1);
  for (int l = 0; l < num_classes; ++l) {
    t.nodes[0].children.push_back(l + 1);
    t.nodes[static_cast<std::size_t>(l) + 1].parent = 0;
    t.nodes[static_cast<std::size_t>(l) + 1].label = l;
  }
  return t;
}

ClassTree ClassTree::two_level(int superclasses, int classes_per_super, double scale1, double scale2) {
  ClassTree t;
  t.level_scales = {scale1, scale2};
  t.nodes.resize(1);
  for (int s = 0; s < superclasses; ++s) {
    int super_id = static_cast<int>(t.nodes.size());
    t.nodes.push_back({0, {}, -1});
    t.nodes[0].children.push_back(super_id);
    for (int c = 0; c < classes_per_super; ++c) {
      int leaf_id = static_cast<int>(t.nodes.size());
      t.nodes.push_back({super_id, {}, s * classes_per_super + c});
      t.nodes[static_cast<std::size_t>(super_id)].children.push_back(leaf_id);
    }
  }
  return t;
}

int ClassTree::num_leaves() const {
  int n = 0;
  for (const Node& node : nodes)
    if (node.children.empty()) ++n;
  return n;
}

int ClassTree::depth_of(int node) const {
  int depth = 0;
  while (nodes[static_cast<std::size_t>(node)].parent >= 0) {
    node = nodes[static_cast<std::size_t>(node)].parent;
    ++depth;
  }
  return depth;
}

void ClassTree::validate(int d) const {
  if (nodes.empty()) throw std::invalid_argument("class tree: empty");
  std::vector<char> seen(static_cast<std::size_t>(num_leaves()), 0);
  int max_depth = 0;
  for (std::size_t id = 0; id < nodes.size(); ++id) {
    const Node& node = nodes[id];
    if (node.children.empty()) {
      if (id == 0) throw std::invalid_argument("class tree: root cannot be a leaf");
      if (node.label < 0 || node.label >= num_leaves() || seen[static_cast<std::size_t>(node.label)])
        throw std::invalid_argument("class tree: leaf labels must uniquely cover 0..L-1");
      seen[static_cast<std::size_t>(node.label)] = 1;
      max_depth = std::max(max_depth, depth_of(static_cast<int>(id)));
    } else {
      if (node.children.size() < 2) throw std::invalid_argument("class tree: internal nodes need >= 2 children");
      if (static_cast<int>(node.children.size()) > d + 1)
        throw std::invalid_argument("class tree: child count " + std::to_string(node.children.size()) +
                                    " exceeds d+1 = " + std::to_string(d + 1));
    }
  }
  if (static_cast<int>(level_scales.size()) < max_depth)
    throw std::invalid_argument("class tree: missing per-depth scales");
  for (std::size_t s = 1; s < level_scales.size(); ++s)
    if (!(level_scales[s] < level_scales[s - 1]))
      throw std::invalid_argument("class tree: level scales must be strictly decreasing");
  for (double s : level_scales)
    if (s <= 0.0) throw std::invalid_argument("class tree: level scales must be positive");
}

CenterSet generate_hm_centers(const ClassTree& tree, int d) {
  tree.validate(d);
  int L = tree.num_leaves();

  std::vector<std::vector<double>> node_center(tree.nodes.size(), std::vector<double>(static_cast<std::size_t>(d), 0.0));
  Tensor leaves({static_cast<std::size_t>(L), static_cast<std::size_t>(d)});

  // Root sits at the origin; each child set is a locally generated
  // Max-Mahalanobis set shifted by the parent's virtual center. Sibling sets
  // reuse the identical local construction (no per-superclass rotation).
  for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
    const ClassTree::Node& node = tree.nodes[id];
    if (node.children.empty()) continue;
    int child_depth = tree.depth_of(static_cast<int>(id)) + 1;
    double scale = tree.level_scales[static_cast<std::size_t>(child_depth - 1)];
    CenterSet local = generate_mm_centers(scale, d, static_cast<int>(node.children.size()));
    for (std::size_t c = 0; c < node.children.size(); ++c) {
      int child = node.children[c];
      auto& dst = node_center[static_cast<std::size_t>(child)];
      auto offset = local.centers.row(c);
      for (int k = 0; k < d; ++k) dst[static_cast<std::size_t>(k)] = node_center[id][static_cast<std::size_t>(k)] + offset[static_cast<std::size_t>(k)];
      const ClassTree::Node& child_node = tree.nodes[static_cast<std::size_t>(child)];
      if (child_node.children.empty()) {
        auto row = leaves.row(static_cast<std::size_t>(child_node.label));
        for (int k = 0; k < d; ++k) row[static_cast<std::size_t>(k)] = dst[static_cast<std::size_t>(k)];
      }
    }
  }
  return CenterSet{std::move(leaves), tree.level_scales.front(), L, d};
}

std::string center_set_to_json(const CenterSet& cs) {
  nlohmann::json doc;
  doc["c_mm"] = cs.c_mm;
  doc["L"] = cs.num_classes;
  doc["d"] = cs.feature_dim;
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < cs.num_classes; ++i) {
    auto r = cs.center(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  doc["centers"] = std::move(rows);
  return doc.dump(2);
}

CenterSet center_set_from_json(const std::string& text) {
  nlohmann::json doc = nlohmann::json::parse(text);
  CenterSet cs;
  cs.c_mm = doc.at("c_mm").get<double>();
  cs.num_classes = doc.at("L").get<int>();
  cs.feature_dim = doc.at("d").get<int>();
  const auto& rows = doc.at("centers");
  if (static_cast<int>(rows.size()) != cs.num_classes)
    throw std::invalid_argument("center set json: row count does not match L");
  cs.centers = Tensor({static_cast<std::size_t>(cs.num_classes), static_cast<std::size_t>(cs.feature_dim)});
  for (int i = 0; i < cs.num_classes; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    if (static_cast<int>(row.size()) != cs.feature_dim)
      throw std::invalid_argument("center set json: row width does not match d");
    for (int j = 0; j < cs.feature_dim; ++j)
      cs.centers(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = row[static_cast<std::size_t>(j)].get<double>();
  }
  return cs;
}

}  // namespace mmc
