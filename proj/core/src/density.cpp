#include "mmclab/density.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mmc {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

struct Welford {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;
  void add(double x) {
    ++n;
    double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  double stddev() const { return n >= 2 ? std::sqrt(m2 / static_cast<double>(n - 1)) : 0.0; }
};

}  // namespace

std::vector<ClassLossStats> fit_class_loss_stats(std::span<const double> losses, std::span<const int> labels,
                                                 int num_classes) {
  if (losses.size() != labels.size()) throw std::invalid_argument("loss stats: losses/labels length mismatch");
  std::vector<Welford> acc(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < losses.size(); ++i) {
    int y = labels[i];
    if (y < 0 || y >= num_classes) throw std::out_of_range("loss stats: label out of range");
    acc[static_cast<std::size_t>(y)].add(losses[i]);
  }
  std::vector<ClassLossStats> out(static_cast<std::size_t>(num_classes));
  for (int k = 0; k < num_classes; ++k) {
    const Welford& w = acc[static_cast<std::size_t>(k)];
    ClassLossStats& s = out[static_cast<std::size_t>(k)];
    s.label = k;
    s.count = w.n;
    s.mean = w.mean;
    s.stddev = w.stddev();
    s.degenerate = (w.n < 2) || !(s.stddev > 0.0);
  }
  return out;
}

std::vector<PairLossStats> fit_pair_loss_stats(std::span<const double> losses, std::span<const int> labels,
                                               std::span<const int> runner_ups, int num_classes) {
  if (losses.size() != labels.size() || losses.size() != runner_ups.size())
    throw std::invalid_argument("pair stats: input length mismatch");
  std::vector<Welford> acc(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < losses.size(); ++i) {
    int k = labels[i], kh = runner_ups[i];
    if (k < 0 || k >= num_classes || kh < 0 || kh >= num_classes || k == kh)
      throw std::out_of_range("pair stats: bad (label, runner_up) pair");
    acc[static_cast<std::size_t>(k) * static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(kh)].add(losses[i]);
  }
  std::vector<PairLossStats> out;
  for (int k = 0; k < num_classes; ++k)
    for (int kh = 0; kh < num_classes; ++kh) {
      const Welford& w = acc[static_cast<std::size_t>(k) * static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(kh)];
      if (w.n == 0) continue;
      PairLossStats s;
      s.label = k;
      s.runner_up = kh;
      s.count = w.n;
      s.mean = w.mean;
      s.stddev = w.stddev();
      s.degenerate = (w.n < 2) || !(s.stddev > 0.0);
      out.push_back(s);
    }
  return out;
}

ContourSolution contour_sphere(int i, int j, const QuadraticLogitParams& q, double c) {
  q.validate();
  int L = q.num_classes();
  if (i < 0 || j < 0 || i >= L || j >= L) throw std::out_of_range("contour: class index out of range");
  if (i == j) throw std::invalid_argument("contour: need two distinct classes");

  auto mu_i = q.mus.row(static_cast<std::size_t>(i));
  auto mu_j = q.mus.row(static_cast<std::size_t>(j));
  double si = q.sigmas[static_cast<std::size_t>(i)], sj = q.sigmas[static_cast<std::size_t>(j)];
  double bi = q.biases[static_cast<std::size_t>(i)], bj = q.biases[static_cast<std::size_t>(j)];

  ContourSolution out;
  if (si == sj) {
    // h_i - h_j = c degenerates to the hyperplane
    // z . (mu_i - mu_j) = [|mu_i|^2 - |mu_j|^2 + (B_j - B_i + c)/sigma] / 2.
    out.kind = ContourSolution::Kind::Hyperplane;
    out.normal.resize(mu_i.size());
    for (std::size_t t = 0; t < mu_i.size(); ++t) out.normal[t] = mu_i[t] - mu_j[t];
    out.offset = 0.5 * (squared_norm(mu_i) - squared_norm(mu_j) + (bj - bi + c) / si);
    return out;
  }

  double ds = si - sj;
  out.center.resize(mu_i.size());
  for (std::size_t t = 0; t < mu_i.size(); ++t) out.center[t] = (si * mu_i[t] - sj * mu_j[t]) / ds;
  out.radius_sq = pair_bias(i, j, q) - c / ds;
  out.kind = out.radius_sq >= 0.0 ? ContourSolution::Kind::Sphere : ContourSolution::Kind::Empty;
  return out;
}

double pair_bias(int i, int j, const QuadraticLogitParams& q) {
  auto mu_i = q.mus.row(static_cast<std::size_t>(i));
  auto mu_j = q.mus.row(static_cast<std::size_t>(j));
  double si = q.sigmas[static_cast<std::size_t>(i)], sj = q.sigmas[static_cast<std::size_t>(j)];
  double ds = si - sj;
  if (ds == 0.0) throw std::invalid_argument("pair bias: undefined for equal sigmas");
  return si * sj * squared_distance(mu_i, mu_j) / (ds * ds) +
         (q.biases[static_cast<std::size_t>(i)] - q.biases[static_cast<std::size_t>(j)]) / ds;
}

double gsce_lower_bound(int k, int khat, const QuadraticLogitParams& q) {
  double sk = q.sigmas[static_cast<std::size_t>(k)], skh = q.sigmas[static_cast<std::size_t>(khat)];
  if (!(sk > skh))
    throw std::domain_error("lower bound: requires sigma_k > sigma_khat (loss is otherwise unbounded below by 0)");
  return std::log1p(std::exp(pair_bias(k, khat, q) * (skh - sk)));
}

double unit_sphere_area(int d) {
  if (d < 1) throw std::invalid_argument("sphere area: d >= 1 required");
  return 2.0 * std::pow(std::numbers::pi, 0.5 * d) / std::tgamma(0.5 * d);
}

double lse_pair_loss(std::span<const double> logits, int label) {
  if (label < 0 || label >= static_cast<int>(logits.size()))
    throw std::out_of_range("lse pair loss: label out of range");
  if (logits.size() < 2) throw std::invalid_argument("lse pair loss: need at least two classes");
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < logits.size(); ++l)
    if (static_cast<int>(l) != label) best = std::max(best, logits[l]);
  double gap = best - logits[static_cast<std::size_t>(label)];
  // stabilized softplus
  return gap > 0.0 ? gap + std::log1p(std::exp(-gap)) : std::log1p(std::exp(gap));
}

double density_gsce(double C, const PairLossStats& stats, const QuadraticLogitParams& q, int d,
                    bool include_shell_constant) {
  if (d < 2) throw std::invalid_argument("density: d >= 2 required");
  if (stats.degenerate || !(stats.stddev > 0.0)) throw std::invalid_argument("density: degenerate loss stats");
  double sk = q.sigmas[static_cast<std::size_t>(stats.label)];
  double skh = q.sigmas[static_cast<std::size_t>(stats.runner_up)];
  if (sk == skh) throw std::domain_error("density: equal sigmas give no density supervision");
  if (sk > skh) {
    double c_star = gsce_lower_bound(stats.label, stats.runner_up, q);
    if (C <= c_star) throw std::domain_error("density: loss below the attainable lower bound (empty contour)");
  }
  double bracket = pair_bias(stats.label, stats.runner_up, q) + std::log(std::expm1(C)) / (sk - skh);
  if (!(bracket > 0.0)) throw std::domain_error("density: empty contour (non-positive squared radius)");
  double g = normal_pdf((C - stats.mean) / stats.stddev);
  double val = static_cast<double>(stats.count) * g /
               (stats.stddev * std::pow(bracket, 0.5 * (d - 1)));
  if (include_shell_constant) val /= unit_sphere_area(d);
  return val;
}

double density_mmc(double C, const ClassLossStats& stats, int d, bool include_shell_constant) {
  if (d < 2) throw std::invalid_argument("density: d >= 2 required");
  if (!(C > 0.0)) throw std::invalid_argument("density: loss level must be positive");
  if (stats.degenerate || !(stats.stddev > 0.0)) throw std::invalid_argument("density: degenerate loss stats");
  double g = normal_pdf((C - stats.mean) / stats.stddev);
  double val = static_cast<double>(stats.count) * g / (stats.stddev * std::pow(C, 0.5 * (d - 1)));
  if (include_shell_constant) val *= std::tgamma(0.5 * d) / (std::pow(2.0, 0.5 * (d + 1)) * std::pow(std::numbers::pi, 0.5 * d));
  return val;
}

double mmc_shell_volume(double C, double delta_c, int d) {
  if (!(C > 0.0) || !(delta_c > 0.0)) throw std::invalid_argument("shell volume: C and delta_c must be positive");
  if (d < 2) throw std::invalid_argument("shell volume: d >= 2 required");
  return std::pow(2.0, 0.5 * (d + 1)) * std::pow(std::numbers::pi, 0.5 * d) * std::pow(C, 0.5 * (d - 1)) /
         std::tgamma(0.5 * d) * delta_c;
}

double gsce_shell_volume(double C, int k, int khat, const QuadraticLogitParams& q, double delta_c, int d) {
  if (!(delta_c > 0.0)) throw std::invalid_argument("shell volume: delta_c must be positive");
  if (d < 2) throw std::invalid_argument("shell volume: d >= 2 required");
  double sk = q.sigmas[static_cast<std::size_t>(k)], skh = q.sigmas[static_cast<std::size_t>(khat)];
  if (sk == skh) throw std::domain_error("shell volume: equal sigmas give a hyperplane contour");
  double bracket = pair_bias(k, khat, q) + std::log(std::expm1(C)) / (sk - skh);
  if (!(bracket > 0.0)) throw std::domain_error("shell volume: empty contour");
  return unit_sphere_area(d) * std::pow(bracket, 0.5 * (d - 1)) * delta_c;
}

EmpiricalDensity empirical_density(const Tensor& features, std::span<const int> labels,
                                   const PerExampleLoss& loss_fn, double C, double delta_c, double volume) {
  if (!(delta_c > 0.0)) throw std::invalid_argument("empirical density: delta_c must be positive");
  if (!(volume > 0.0)) throw std::invalid_argument("empirical density: degenerate band volume");
  EmpiricalDensity out;
  out.volume = volume;
  // half-open band [C, C + delta_c)
  for (std::size_t i = 0; i < labels.size(); ++i) {
    double v = loss_fn(features.row(i), labels[i]);
    if (v >= C && v < C + delta_c) ++out.count;
  }
  out.density = static_cast<double>(out.count) / volume;
  return out;
}

}  // namespace mmc
