#include "mmclab/attacks.hpp"

#include "mmclab/csv.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace mmc {

std::string to_string(AttackFamily f) {
  switch (f) {
    case AttackFamily::Pgd: return "PGD";
    case AttackFamily::Mim: return "MIM";
    case AttackFamily::Cw: return "CW";
    case AttackFamily::Spsa: return "SPSA";
    case AttackFamily::Noise: return "NOISE";
    case AttackFamily::Rotate: return "ROTATE";
  }
  return "?";
}

std::string to_string(AttackMode m) { return m == AttackMode::Targeted ? "targeted" : "untargeted"; }

std::string to_string(AttackObjective o) {
  switch (o) {
    case AttackObjective::Standard: return "standard";
    case AttackObjective::AdaUn1: return "ada_un1";
    case AttackObjective::AdaUn2: return "ada_un2";
    case AttackObjective::AdaTar1: return "ada_tar1";
    case AttackObjective::AdaTar2: return "ada_tar2";
  }
  return "?";
}

AttackFamily attack_family_from_string(const std::string& s) {
  if (s == "PGD") return AttackFamily::Pgd;
  if (s == "MIM") return AttackFamily::Mim;
  if (s == "CW") return AttackFamily::Cw;
  if (s == "SPSA") return AttackFamily::Spsa;
  if (s == "NOISE") return AttackFamily::Noise;
  if (s == "ROTATE") return AttackFamily::Rotate;
  throw std::invalid_argument("unknown attack family: " + s);
}

AttackMode attack_mode_from_string(const std::string& s) {
  if (s == "untargeted") return AttackMode::Untargeted;
  if (s == "targeted") return AttackMode::Targeted;
  throw std::invalid_argument("unknown attack mode: " + s);
}

AttackObjective attack_objective_from_string(const std::string& s) {
  if (s == "standard") return AttackObjective::Standard;
  if (s == "ada_un1") return AttackObjective::AdaUn1;
  if (s == "ada_un2") return AttackObjective::AdaUn2;
  if (s == "ada_tar1") return AttackObjective::AdaTar1;
  if (s == "ada_tar2") return AttackObjective::AdaTar2;
  throw std::invalid_argument("unknown attack objective: " + s);
}

void AttackConfig::validate() const {
  if (epsilon < 0.0) throw std::invalid_argument("attack: epsilon must be >= 0");
  if (steps < 1) throw std::invalid_argument("attack: steps must be >= 1");
  if (step_size < 0.0) throw std::invalid_argument("attack: step_size must be >= 0");
  bool tar_obj = objective == AttackObjective::AdaTar1 || objective == AttackObjective::AdaTar2;
  bool un_obj = objective == AttackObjective::AdaUn1 || objective == AttackObjective::AdaUn2;
  if (mode == AttackMode::Targeted && un_obj)
    throw std::invalid_argument("attack: untargeted objective in targeted mode");
  if (mode == AttackMode::Untargeted && tar_obj)
    throw std::invalid_argument("attack: targeted objective in untargeted mode");
  if (family == AttackFamily::Mim && mode == AttackMode::Targeted)
    throw std::invalid_argument("attack: MIM runs in untargeted mode only");
  if (family == AttackFamily::Cw) {
    if (cw.binary_steps < 1 || cw.iters < 1) throw std::invalid_argument("attack: bad C&W search constants");
    if (cw.c_init <= 0.0 || cw.lr <= 0.0) throw std::invalid_argument("attack: bad C&W constants");
  }
  if (family == AttackFamily::Spsa) {
    if (spsa.batch < 1 || spsa.delta <= 0.0 || spsa.lr <= 0.0)
      throw std::invalid_argument("attack: bad SPSA constants");
  }
  if (noise_sigma < 0.0) throw std::invalid_argument("attack: noise sigma must be >= 0");
  if (rotate_degrees < 0.0) throw std::invalid_argument("attack: rotation range must be >= 0");
}

namespace {

int runner_up_label(const LossHead& head, std::span<const double> z, int y) {
  if (head.num_classes() < 2) throw std::invalid_argument("runner-up label undefined for fewer than 2 classes");
  std::vector<double> h = head.prediction_logits(z);
  int best = -1;
  for (int l = 0; l < static_cast<int>(h.size()); ++l) {
    if (l == y) continue;
    if (best < 0 || h[static_cast<std::size_t>(l)] > h[static_cast<std::size_t>(best)]) best = l;
  }
  return best;
}

ScalarGrad negate(ScalarGrad g) {
  g.value = -g.value;
  for (double& v : g.grad) v = -v;
  return g;
}

}  // namespace

ScalarGrad adaptive_objective(AttackObjective kind, const LossHead& head, std::span<const double> z,
                              int y, int y_t, AttackMode mode) {
  switch (kind) {
    case AttackObjective::Standard: {
      if (mode == AttackMode::Targeted) {
        if (y_t < 0) throw std::invalid_argument("adaptive objective: targeted mode requires a target label");
        return head.sce_on_logits(z, y_t);
      }
      return negate(head.sce_on_logits(z, y));
    }
    case AttackObjective::AdaUn1:
      return negate(head.center_distance_loss(z, y));
    case AttackObjective::AdaUn2: {
      int yhat = runner_up_label(head, z, y);
      ScalarGrad a = head.center_distance_loss(z, yhat);
      ScalarGrad b = head.center_distance_loss(z, y);
      ScalarGrad out;
      out.value = a.value - b.value;
      out.grad.resize(z.size());
      for (std::size_t j = 0; j < z.size(); ++j) out.grad[j] = a.grad[j] - b.grad[j];
      return out;
    }
    case AttackObjective::AdaTar1:
      if (y_t < 0) throw std::invalid_argument("adaptive objective: ada_tar1 requires a target label");
      return head.center_distance_loss(z, y_t);
    case AttackObjective::AdaTar2: {
      if (y_t < 0) throw std::invalid_argument("adaptive objective: ada_tar2 requires a target label");
      ScalarGrad a = head.center_distance_loss(z, y_t);
      ScalarGrad b = head.center_distance_loss(z, y);
      ScalarGrad out;
      out.value = a.value - b.value;
      out.grad.resize(z.size());
      for (std::size_t j = 0; j < z.size(); ++j) out.grad[j] = a.grad[j] - b.grad[j];
      return out;
    }
  }
  throw std::logic_error("adaptive_objective: unreachable");
}

namespace {

Tensor as_row(std::span<const double> x) {
  Tensor t({1, x.size()});
  std::copy(x.begin(), x.end(), t.values().begin());
  return t;
}

struct InputObjective {
  const Mlp& model;
  const LossHead& head;
  AttackObjective kind;
  AttackMode mode;
  int y, y_t;

  double value(std::span<const double> x) const {
    Tensor z = model.forward(as_row(x));
    return adaptive_objective(kind, head, z.row(0), y, y_t, mode).value;
  }

  // value and d/dx; false on non-finite gradient
  bool value_grad(std::span<const double> x, double& val, std::vector<double>& grad) const {
    Mlp::Workspace ws;
    Tensor z = model.forward(as_row(x), ws);
    ScalarGrad og = adaptive_objective(kind, head, z.row(0), y, y_t, mode);
    val = og.value;
    Tensor upstream({1, og.grad.size()});
    std::copy(og.grad.begin(), og.grad.end(), upstream.values().begin());
    Tensor gx = model.input_gradient(ws, upstream);
    grad.assign(gx.values().begin(), gx.values().end());
    if (!std::isfinite(val)) return false;
    for (double v : grad)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

bool attack_succeeded(const LossHead& head, const Mlp& model, std::span<const double> x, int y, int y_t,
                      AttackMode mode, int* pred_out = nullptr) {
  Tensor z = model.forward(as_row(x));
  int pred = head.predict(z.row(0)).label;
  if (pred_out) *pred_out = pred;
  return mode == AttackMode::Targeted ? pred == y_t : pred != y;
}

void finalize_distortions(AdvResult& r, std::span<const double> x0) {
  r.l2_distortion = std::sqrt(squared_distance(r.x_adv, x0));
  r.linf_distortion = linf_distance(r.x_adv, x0);
}

void project_clip(std::vector<double>& x, std::span<const double> x0, double eps) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    double lo = std::max(0.0, x0[i] - eps);
    double hi = std::min(1.0, x0[i] + eps);
    x[i] = std::clamp(x[i], lo, hi);
  }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

AdvResult pgd(const Mlp& model, const LossHead& head, std::span<const double> x, int y, int y_t,
              const AttackConfig& cfg, Rng* rng) {
  cfg.validate();
  InputObjective obj{model, head, cfg.objective, cfg.mode, y, y_t};
  AdvResult r;
  r.x_adv.assign(x.begin(), x.end());
  if (cfg.random_start && rng && cfg.epsilon > 0.0) {
    for (double& v : r.x_adv) v += rng->uniform(-cfg.epsilon, cfg.epsilon);
    project_clip(r.x_adv, x, cfg.epsilon);
  }
  r.objective_trace.push_back(obj.value(r.x_adv));

  std::vector<double> grad;
  for (int step = 0; step < cfg.steps; ++step) {
    double val = 0.0;
    if (!obj.value_grad(r.x_adv, val, grad)) {
      r.aborted = true;
      break;
    }
    for (std::size_t i = 0; i < r.x_adv.size(); ++i) r.x_adv[i] -= cfg.step_size * sign(grad[i]);
    project_clip(r.x_adv, x, cfg.epsilon);
    r.objective_trace.push_back(obj.value(r.x_adv));
    r.iterations_used = step + 1;
  }
  r.success = attack_succeeded(head, model, r.x_adv, y, y_t, cfg.mode);
  finalize_distortions(r, x);
  return r;
}

AdvResult mim(const Mlp& model, const LossHead& head, std::span<const double> x, int y,
              const AttackConfig& cfg) {
  cfg.validate();
  if (cfg.mode != AttackMode::Untargeted) throw std::invalid_argument("mim: untargeted mode only");
  InputObjective obj{model, head, cfg.objective, cfg.mode, y, -1};
  AdvResult r;
  r.x_adv.assign(x.begin(), x.end());
  r.objective_trace.push_back(obj.value(r.x_adv));

  std::vector<double> velocity(x.size(), 0.0);
  std::vector<double> grad;
  for (int step = 0; step < cfg.steps; ++step) {
    double val = 0.0;
    if (!obj.value_grad(r.x_adv, val, grad)) {
      r.aborted = true;
      break;
    }
    double l1 = 0.0;
    for (double g : grad) l1 += std::fabs(g);
    if (l1 == 0.0) l1 = 1.0;
    for (std::size_t i = 0; i < x.size(); ++i) velocity[i] = cfg.mim_decay * velocity[i] + grad[i] / l1;
    for (std::size_t i = 0; i < x.size(); ++i) r.x_adv[i] -= cfg.step_size * sign(velocity[i]);
    project_clip(r.x_adv, x, cfg.epsilon);
    r.objective_trace.push_back(obj.value(r.x_adv));
    r.iterations_used = step + 1;
  }
  r.success = attack_succeeded(head, model, r.x_adv, y, -1, cfg.mode);
  finalize_distortions(r, x);
  return r;
}

namespace {

// Rectified margin for the C&W inner objective: ada_un2 / ada_tar2 for
// center-based heads, the corresponding logit margin for the SCE family.
// Value <= 0 certifies success in the untargeted mode.
ScalarGrad cw_margin(const LossHead& head, std::span<const double> z, int y, int y_t, AttackMode mode) {
  if (mode == AttackMode::Targeted) {
    if (head.has_centers())
      return negate(head.logit_margin(z, y_t, y));  // L(z, y_t) - L(z, y)
    std::vector<double> h = head.prediction_logits(z);
    int best = -1;
    for (int l = 0; l < static_cast<int>(h.size()); ++l) {
      if (l == y_t) continue;
      if (best < 0 || h[static_cast<std::size_t>(l)] > h[static_cast<std::size_t>(best)]) best = l;
    }
    return head.logit_margin(z, best, y_t);
  }
  int yhat = runner_up_label(head, z, y);
  return head.logit_margin(z, y, yhat);  // h_y - h_yhat == L(z, yhat) - L(z, y) for center heads
}

}  // namespace

AdvResult cw(const Mlp& model, const LossHead& head, std::span<const double> x, int y, int y_t,
             const AttackConfig& cfg) {
  cfg.validate();
  const std::size_t p = x.size();
  AdvResult r;
  r.x_adv.assign(x.begin(), x.end());

  if (attack_succeeded(head, model, x, y, y_t, cfg.mode)) {
    r.success = true;
    finalize_distortions(r, x);
    return r;
  }

  // change of variables: x = (tanh(w) + 1)/2 keeps pixels inside (0, 1)
  constexpr double kEdge = 1e-6;
  std::vector<double> w0(p);
  for (std::size_t i = 0; i < p; ++i) w0[i] = std::atanh(2.0 * std::clamp(x[i], kEdge, 1.0 - kEdge) - 1.0);

  double lower = 0.0;
  double upper = std::numeric_limits<double>::infinity();
  double c = cfg.cw.c_init;
  double best_l2 = std::numeric_limits<double>::infinity();
  std::vector<double> best_x;

  std::vector<double> w = w0, xw(p), m(p), v(p), gw(p);
  for (int bs = 0; bs < cfg.cw.binary_steps; ++bs) {
    w = w0;
    std::fill(m.begin(), m.end(), 0.0);
    std::fill(v.begin(), v.end(), 0.0);
    bool step_success = false;
    double step_best = std::numeric_limits<double>::infinity();

    for (int it = 1; it <= cfg.cw.iters; ++it) {
      for (std::size_t i = 0; i < p; ++i) xw[i] = 0.5 * (std::tanh(w[i]) + 1.0);

      Mlp::Workspace ws;
      Tensor z = model.forward(as_row(xw), ws);
      ScalarGrad margin = cw_margin(head, z.row(0), y, y_t, cfg.mode);

      std::vector<double> gx(p);
      for (std::size_t i = 0; i < p; ++i) gx[i] = 2.0 * (xw[i] - x[i]);
      if (margin.value > 0.0) {  // kappa = 0: the margin term vanishes once satisfied
        Tensor upstream({1, margin.grad.size()});
        std::copy(margin.grad.begin(), margin.grad.end(), upstream.values().begin());
        Tensor gz = model.input_gradient(ws, upstream);
        for (std::size_t i = 0; i < p; ++i) gx[i] += c * gz.values()[i];
      }
      bool bad = false;
      for (std::size_t i = 0; i < p; ++i) {
        double th = std::tanh(w[i]);
        gw[i] = gx[i] * 0.5 * (1.0 - th * th);
        if (!std::isfinite(gw[i])) bad = true;
      }
      if (bad) {
        r.aborted = true;
        break;
      }
      double b1t = 1.0 - std::pow(0.9, it), b2t = 1.0 - std::pow(0.999, it);
      for (std::size_t i = 0; i < p; ++i) {
        m[i] = 0.9 * m[i] + 0.1 * gw[i];
        v[i] = 0.999 * v[i] + 0.001 * gw[i] * gw[i];
        w[i] -= cfg.cw.lr * (m[i] / b1t) / (std::sqrt(v[i] / b2t) + 1e-8);
      }

      int pred = head.predict(z.row(0)).label;
      bool ok = cfg.mode == AttackMode::Targeted ? pred == y_t : pred != y;
      if (ok) {
        double l2 = std::sqrt(squared_distance(xw, x));
        step_success = true;
        step_best = std::min(step_best, l2);
        if (l2 < best_l2) {
          best_l2 = l2;
          best_x = xw;
        }
      }
      r.iterations_used += 1;
    }

    r.cw_trace.push_back({c, step_success, step_best});
    if (step_success) {
      upper = c;
      c = 0.5 * (lower + upper);
    } else {
      lower = c;
      c = std::isfinite(upper) ? 0.5 * (lower + upper) : c * 10.0;
    }
  }

  if (std::isfinite(best_l2)) {
    r.success = true;
    r.x_adv = best_x;
    finalize_distortions(r, x);
  } else {
    r.success = false;
    r.l2_distortion = std::numeric_limits<double>::infinity();
    r.linf_distortion = std::numeric_limits<double>::infinity();
  }
  return r;
}

std::vector<double> spsa_gradient_estimate(const std::function<double(std::span<const double>)>& f,
                                           std::span<const double> x, double delta, int probes, Rng& rng) {
  if (delta <= 0.0) throw std::invalid_argument("spsa: delta must be positive");
  std::vector<double> est(x.size(), 0.0);
  std::vector<double> plus(x.begin(), x.end()), minus(x.begin(), x.end());
  std::vector<double> dir(x.size());
  for (int probe = 0; probe < probes; ++probe) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      dir[i] = static_cast<double>(rng.rademacher());
      plus[i] = x[i] + delta * dir[i];
      minus[i] = x[i] - delta * dir[i];
    }
    double diff = (f(plus) - f(minus)) / (2.0 * delta);
    for (std::size_t i = 0; i < x.size(); ++i) est[i] += diff * dir[i];
  }
  for (double& v : est) v /= static_cast<double>(probes);
  return est;
}

AdvResult spsa(const Mlp& model, const LossHead& head, std::span<const double> x, int y, int y_t,
               const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  InputObjective obj{model, head, cfg.objective, cfg.mode, y, y_t};
  auto f = [&](std::span<const double> q) { return obj.value(q); };

  AdvResult r;
  r.x_adv.assign(x.begin(), x.end());
  r.objective_trace.push_back(obj.value(r.x_adv));
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<double> g = spsa_gradient_estimate(f, r.x_adv, cfg.spsa.delta, cfg.spsa.batch, rng);
    for (std::size_t i = 0; i < r.x_adv.size(); ++i) r.x_adv[i] -= cfg.spsa.lr * sign(g[i]);
    project_clip(r.x_adv, x, cfg.epsilon);
    r.objective_trace.push_back(obj.value(r.x_adv));
    r.iterations_used = step + 1;
  }
  r.success = attack_succeeded(head, model, r.x_adv, y, y_t, cfg.mode);
  finalize_distortions(r, x);
  return r;
}

std::vector<double> corrupt_noise(std::span<const double> x, double sigma, Rng& rng) {
  if (sigma < 0.0) throw std::invalid_argument("noise: sigma must be >= 0");
  std::vector<double> out(x.begin(), x.end());
  for (double& v : out) v = std::clamp(v + sigma * rng.normal(), 0.0, 1.0);
  return out;
}

std::vector<double> corrupt_rotate(std::span<const double> x, double degrees, int rows, int cols) {
  if (rows <= 0 || cols <= 0 || static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) != x.size())
    throw std::invalid_argument("rotate: input is not a rows x cols image");
  double theta = degrees * std::numbers::pi / 180.0;
  double ct = std::cos(theta), st = std::sin(theta);
  double cy = 0.5 * (rows - 1), cx = 0.5 * (cols - 1);
  std::vector<double> out(x.size(), 0.0);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double dr = r - cy, dc = c - cx;
      // inverse map of a counterclockwise content rotation (row axis down)
      double rs = cy + st * dc + ct * dr;
      double cs = cx + ct * dc - st * dr;
      int r0 = static_cast<int>(std::floor(rs)), c0 = static_cast<int>(std::floor(cs));
      double fr = rs - r0, fc = cs - c0;
      double acc = 0.0;
      for (int br = 0; br <= 1; ++br)
        for (int bc = 0; bc <= 1; ++bc) {
          int rr = r0 + br, cc = c0 + bc;
          if (rr < 0 || rr >= rows || cc < 0 || cc >= cols) continue;  // zero padding
          double wgt = (br ? fr : 1.0 - fr) * (bc ? fc : 1.0 - fc);
          acc += wgt * x[static_cast<std::size_t>(rr) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(cc)];
        }
      out[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)] = acc;
    }
  }
  return out;
}

RobustnessReport evaluate_robustness(const Mlp& model, const LossHead& head, const Dataset& data,
                                     const AttackConfig& cfg, int image_rows, int image_cols) {
  cfg.validate();
  RobustnessReport rep;
  rep.rows.reserve(data.size());
  std::size_t correct_clean = 0, correct_adv = 0;
  double sum_l2 = 0.0, sum_linf = 0.0;

  for (std::size_t i = 0; i < data.size(); ++i) {
    auto x = data.inputs.row(i);
    int y = data.labels[i];
    Rng rng = Rng::for_example(cfg.seed, i);

    Tensor z = model.forward(as_row(x));
    int pred_clean = head.predict(z.row(0)).label;

    int y_t = -1;
    if (cfg.mode == AttackMode::Targeted) {
      y_t = rng.uniform_int(head.num_classes() - 1);
      if (y_t >= y) ++y_t;
    }

    AdvResult res;
    switch (cfg.family) {
      case AttackFamily::Pgd: res = pgd(model, head, x, y, y_t, cfg, &rng); break;
      case AttackFamily::Mim: res = mim(model, head, x, y, cfg); break;
      case AttackFamily::Cw: res = cw(model, head, x, y, y_t, cfg); break;
      case AttackFamily::Spsa: res = spsa(model, head, x, y, y_t, cfg, rng); break;
      case AttackFamily::Noise: {
        res.x_adv = corrupt_noise(x, cfg.noise_sigma, rng);
        break;
      }
      case AttackFamily::Rotate: {
        double angle = rng.uniform(-cfg.rotate_degrees, cfg.rotate_degrees);
        res.x_adv = corrupt_rotate(x, angle, image_rows, image_cols);
        break;
      }
    }
    if (cfg.family == AttackFamily::Noise || cfg.family == AttackFamily::Rotate) {
      res.success = attack_succeeded(head, model, res.x_adv, y, y_t, cfg.mode);
      finalize_distortions(res, x);
    }

    Tensor za = model.forward(as_row(res.x_adv));
    int pred_adv = head.predict(za.row(0)).label;
    if (pred_clean == y) ++correct_clean;
    if (pred_adv == y) ++correct_adv;
    if (res.success && std::isfinite(res.l2_distortion)) {
      ++rep.successes;
      sum_l2 += res.l2_distortion;
      sum_linf += res.linf_distortion;
    }
    rep.rows.push_back({i, y, pred_clean, pred_adv, res.success, res.l2_distortion, res.linf_distortion});
  }

  rep.evaluated = data.size();
  rep.clean_accuracy = data.size() ? static_cast<double>(correct_clean) / static_cast<double>(data.size()) : 0.0;
  rep.adversarial_accuracy = data.size() ? static_cast<double>(correct_adv) / static_cast<double>(data.size()) : 0.0;
  rep.mean_l2 = rep.successes ? sum_l2 / static_cast<double>(rep.successes) : 0.0;
  rep.mean_linf = rep.successes ? sum_linf / static_cast<double>(rep.successes) : 0.0;
  return rep;
}

void write_robustness_csv(const RobustnessReport& report, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("robustness csv: cannot open " + path.string());
  os << "index,clean_label,pred_clean,pred_adv,success,l2,linf\n";
  for (const auto& row : report.rows) {
    os << row.index << ',' << row.clean_label << ',' << row.pred_clean << ',' << row.pred_adv << ','
       << (row.success ? 1 : 0) << ',' << csv_double(row.l2) << ',' << csv_double(row.linf) << '\n';
  }
  if (!os) throw std::runtime_error("robustness csv: write failed");
}

}  // namespace mmc
