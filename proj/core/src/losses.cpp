#include "mmclab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mmclab/rng.hpp"

namespace mmc {

std::vector<double> softmax_log_prob(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty logits");
  for (double v : logits)
    if (!std::isfinite(v)) throw std::invalid_argument("softmax: non-finite logit");
  double lse = log_sum_exp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out = softmax_log_prob(logits);
  for (double& v : out) v = std::exp(v);
  return out;
}

ScalarGrad sce_loss(std::span<const double> logits, int label) {
  if (label < 0 || label >= static_cast<int>(logits.size()))
    throw std::out_of_range("sce: label out of range");
  std::vector<double> logp = softmax_log_prob(logits);
  ScalarGrad out;
  out.value = -logp[static_cast<std::size_t>(label)];
  out.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out.grad[i] = std::exp(logp[i]);
  out.grad[static_cast<std::size_t>(label)] -= 1.0;
  return out;
}

void QuadraticLogitParams::validate() const {
  if (mus.rank() != 2) throw std::invalid_argument("quadratic logits: mus must be L x d");
  if (mus.rows() != sigmas.size() || sigmas.size() != biases.size())
    throw std::invalid_argument("quadratic logits: inconsistent L across mus/sigmas/biases");
  for (double s : sigmas)
    if (!(s > 0.0)) throw std::invalid_argument("quadratic logits: sigmas must be strictly positive");
}

QuadraticLogitParams QuadraticLogitParams::sce_embedding(const Tensor& W, std::span<const double> b) {
  if (W.rank() != 2 || W.rows() != b.size())
    throw std::invalid_argument("sce embedding: W must be L x d with matching bias length");
  QuadraticLogitParams q;
  q.mus = Tensor({W.rows(), W.cols()});
  q.sigmas.assign(W.rows(), 1.0);
  q.biases.resize(W.rows());
  for (std::size_t i = 0; i < W.rows(); ++i) {
    auto w = W.row(i);
    auto mu = q.mus.row(i);
    for (std::size_t j = 0; j < W.cols(); ++j) mu[j] = 0.5 * w[j];
    q.biases[i] = b[i] + 0.25 * squared_norm(w);
  }
  return q;
}

std::vector<double> quadratic_logits(std::span<const double> z, const QuadraticLogitParams& q) {
  q.validate();
  if (static_cast<int>(z.size()) != q.feature_dim())
    throw std::invalid_argument("quadratic logits: feature dimension mismatch");
  std::vector<double> h(q.sigmas.size());
  for (std::size_t i = 0; i < h.size(); ++i)
    h[i] = -q.sigmas[i] * squared_distance(z, q.mus.row(i)) + q.biases[i];
  return h;
}

ScalarGrad gsce_loss(std::span<const double> z, int label, const QuadraticLogitParams& q) {
  std::vector<double> h = quadratic_logits(z, q);
  ScalarGrad at_logits = sce_loss(h, label);
  ScalarGrad out;
  out.value = at_logits.value;
  out.grad.assign(z.size(), 0.0);
  for (std::size_t i = 0; i < h.size(); ++i) {
    double w = -2.0 * at_logits.grad[i] * q.sigmas[i];
    auto mu = q.mus.row(i);
    for (std::size_t j = 0; j < z.size(); ++j) out.grad[j] += w * (z[j] - mu[j]);
  }
  return out;
}

ScalarGrad lgm_loss(std::span<const double> z, int label, const QuadraticLogitParams& q, double margin) {
  if (margin < 0.0) throw std::invalid_argument("lgm: margin must be non-negative");
  std::vector<double> h = quadratic_logits(z, q);
  if (label < 0 || label >= static_cast<int>(h.size())) throw std::out_of_range("lgm: label out of range");
  h[static_cast<std::size_t>(label)] -= margin;
  ScalarGrad at_logits = sce_loss(h, label);
  ScalarGrad out;
  out.value = at_logits.value;
  out.grad.assign(z.size(), 0.0);
  for (std::size_t i = 0; i < h.size(); ++i) {
    double w = -2.0 * at_logits.grad[i] * q.sigmas[i];
    auto mu = q.mus.row(i);
    for (std::size_t j = 0; j < z.size(); ++j) out.grad[j] += w * (z[j] - mu[j]);
  }
  return out;
}

namespace {
std::vector<double> center_distance_logits(std::span<const double> z, const CenterSet& cs) {
  std::vector<double> h(static_cast<std::size_t>(cs.num_classes));
  for (int l = 0; l < cs.num_classes; ++l)
    h[static_cast<std::size_t>(l)] = -0.5 * squared_distance(z, cs.center(l));
  return h;
}
}  // namespace

ScalarGrad mmlda_loss(std::span<const double> z, int label, const CenterSet& cs) {
  if (label < 0 || label >= cs.num_classes) throw std::out_of_range("mmlda: label out of range");
  if (static_cast<int>(z.size()) != cs.feature_dim)
    throw std::invalid_argument("mmlda: feature dimension mismatch");
  std::vector<double> h = center_distance_logits(z, cs);
  ScalarGrad at_logits = sce_loss(h, label);
  ScalarGrad out;
  out.value = at_logits.value;
  out.grad.assign(z.size(), 0.0);
  // dh_l/dz = mu_l - z and sum(p - 1_y) = 0, so the z terms cancel.
  for (std::size_t l = 0; l < h.size(); ++l) {
    auto mu = cs.center(static_cast<int>(l));
    for (std::size_t j = 0; j < z.size(); ++j) out.grad[j] += at_logits.grad[l] * mu[j];
  }
  return out;
}

double mmlda_loss_inner_form(std::span<const double> z, int label, const CenterSet& cs) {
  if (label < 0 || label >= cs.num_classes) throw std::out_of_range("mmlda: label out of range");
  std::vector<double> h(static_cast<std::size_t>(cs.num_classes));
  for (int l = 0; l < cs.num_classes; ++l) h[static_cast<std::size_t>(l)] = dot(z, cs.center(l));
  std::vector<double> logp = softmax_log_prob(h);
  return -logp[static_cast<std::size_t>(label)];
}

ScalarGrad mmc_loss(std::span<const double> z, int label, const CenterSet& cs) {
  if (label < 0 || label >= cs.num_classes) throw std::out_of_range("mmc: label out of range");
  if (static_cast<int>(z.size()) != cs.feature_dim)
    throw std::invalid_argument("mmc: feature dimension mismatch");
  auto mu = cs.center(label);
  ScalarGrad out;
  out.grad.resize(z.size());
  double acc = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    double diff = z[j] - mu[j];
    out.grad[j] = diff;
    acc += diff * diff;
  }
  out.value = 0.5 * acc;
  return out;
}

CenterJointEval center_loss_joint(std::span<const double> logits, std::span<const double> z, int label,
                                  const Tensor& centers, double lambda) {
  if (lambda <= 0.0) throw std::invalid_argument("center loss: lambda must be positive");
  if (label < 0 || label >= static_cast<int>(centers.rows()))
    throw std::out_of_range("center loss: label out of range");
  if (z.size() != centers.cols()) throw std::invalid_argument("center loss: feature dimension mismatch");
  ScalarGrad sce = sce_loss(logits, label);
  auto mu = centers.row(static_cast<std::size_t>(label));
  CenterJointEval out;
  out.dlogits = std::move(sce.grad);
  out.dz.resize(z.size());
  out.dcenter_y.resize(z.size());
  double acc = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    double diff = z[j] - mu[j];
    acc += diff * diff;
    out.dz[j] = lambda * diff;
    out.dcenter_y[j] = -lambda * diff;
  }
  out.value = sce.value + lambda * 0.5 * acc;
  return out;
}

EmcEval emc_loss(std::span<const double> z, int label, const Tensor& mu, const CenterSet& cs, double alpha) {
  if (alpha <= 0.0) throw std::invalid_argument("emc: alpha must be positive");
  if (label < 0 || label >= cs.num_classes) throw std::out_of_range("emc: label out of range");
  auto mu_y = mu.row(static_cast<std::size_t>(label));
  auto mu_star = cs.center(label);
  EmcEval out;
  out.dz.resize(z.size());
  out.dmu_y.resize(z.size());
  double fit = 0.0, prior = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    double dz = z[j] - mu_y[j];
    double dp = mu_y[j] - mu_star[j];
    fit += dz * dz;
    prior += dp * dp;
    out.dz[j] = dz;
    out.dmu_y[j] = -dz + dp / alpha;
  }
  out.value = 0.5 * fit + 0.5 * prior / alpha;
  return out;
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::Sce: return "SCE";
    case LossKind::Gsce: return "GSCE";
    case LossKind::Lgm: return "LGM";
    case LossKind::Mmlda: return "MMLDA";
    case LossKind::Center: return "CENTER";
    case LossKind::Mmc: return "MMC";
    case LossKind::Emc: return "EMC";
  }
  return "?";
}

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "SCE") return LossKind::Sce;
  if (name == "GSCE") return LossKind::Gsce;
  if (name == "LGM") return LossKind::Lgm;
  if (name == "MMLDA") return LossKind::Mmlda;
  if (name == "CENTER") return LossKind::Center;
  if (name == "MMC") return LossKind::Mmc;
  if (name == "EMC") return LossKind::Emc;
  throw std::invalid_argument("unknown loss kind: " + name);
}

void LossSpec::validate() const {
  if ((kind == LossKind::Mmlda || kind == LossKind::Mmc || kind == LossKind::Emc) && c_mm <= 0.0)
    throw std::invalid_argument("loss spec: c_mm must be positive");
  if (kind == LossKind::Center && lambda <= 0.0)
    throw std::invalid_argument("loss spec: lambda must be positive");
  if (kind == LossKind::Emc && alpha <= 0.0) throw std::invalid_argument("loss spec: alpha must be positive");
  if (kind == LossKind::Lgm && margin < 0.0) throw std::invalid_argument("loss spec: margin must be >= 0");
}

Prediction LossHead::predict(std::span<const double> z) const {
  std::vector<double> h = prediction_logits(z);
  Prediction out;
  out.scores = softmax(h);
  out.label = 0;
  for (std::size_t i = 1; i < h.size(); ++i)
    if (h[i] > h[static_cast<std::size_t>(out.label)]) out.label = static_cast<int>(i);
  return out;
}

ScalarGrad LossHead::center_distance_loss(std::span<const double>, int) const {
  throw std::logic_error("loss head: " + to_string(kind()) + " has no preset centers");
}

ScalarGrad LossHead::logit_margin(std::span<const double> z, int a, int b) const {
  if (!has_centers()) throw std::logic_error("loss head: logit_margin has no default for " + to_string(kind()));
  // h_l = -0.5 |z - mu_l|^2, so h_a - h_b = L(z, b) - L(z, a).
  ScalarGrad la = center_distance_loss(z, a);
  ScalarGrad lb = center_distance_loss(z, b);
  ScalarGrad out;
  out.value = lb.value - la.value;
  out.grad.resize(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) out.grad[j] = lb.grad[j] - la.grad[j];
  return out;
}

namespace {

// SCE over arbitrary differentiable logits: shared glue for sce_on_logits.
template <class LogitGrad>
ScalarGrad chain_sce(std::span<const double> z, int label, const std::vector<double>& h, LogitGrad&& add_grad) {
  ScalarGrad at_logits = sce_loss(h, label);
  ScalarGrad out;
  out.value = at_logits.value;
  out.grad.assign(z.size(), 0.0);
  add_grad(at_logits.grad, out.grad);
  return out;
}

class SceHead final : public LossHead {
public:
  SceHead(int feature_dim, int num_classes, std::uint64_t seed)
      : d_(feature_dim), L_(num_classes),
        W_({static_cast<std::size_t>(num_classes), static_cast<std::size_t>(feature_dim)}),
        b_({static_cast<std::size_t>(num_classes)}),
        gW_({static_cast<std::size_t>(num_classes), static_cast<std::size_t>(feature_dim)}),
        gb_({static_cast<std::size_t>(num_classes)}) {
    Rng rng(seed);
    double limit = std::sqrt(3.0 / static_cast<double>(feature_dim));
    for (double& v : W_.values()) v = rng.uniform(-limit, limit);
  }

  LossKind kind() const override { return LossKind::Sce; }
  int num_classes() const override { return L_; }
  int feature_dim() const override { return d_; }

  std::vector<double> logits(std::span<const double> z) const {
    std::vector<double> h(static_cast<std::size_t>(L_));
    for (int i = 0; i < L_; ++i) h[static_cast<std::size_t>(i)] = dot(W_.row(static_cast<std::size_t>(i)), z) + b_(static_cast<std::size_t>(i));
    return h;
  }

  ScalarGrad loss(std::span<const double> z, int label) const override {
    return chain_sce(z, label, logits(z), [&](const std::vector<double>& dh, std::vector<double>& dz) {
      for (int i = 0; i < L_; ++i) {
        auto w = W_.row(static_cast<std::size_t>(i));
        for (std::size_t j = 0; j < dz.size(); ++j) dz[j] += dh[static_cast<std::size_t>(i)] * w[j];
      }
    });
  }

  double train_loss(std::span<const double> z, int label, std::span<double> dz, double weight) override {
    ScalarGrad sg = sce_loss(logits(z), label);
    for (int i = 0; i < L_; ++i) {
      double g = sg.grad[static_cast<std::size_t>(i)] * weight;
      gb_(static_cast<std::size_t>(i)) += g;
      auto gw = gW_.row(static_cast<std::size_t>(i));
      auto w = W_.row(static_cast<std::size_t>(i));
      for (std::size_t j = 0; j < z.size(); ++j) {
        gw[j] += g * z[j];
        dz[j] += g * w[j];
      }
    }
    return sg.value * weight;
  }

  std::vector<double> prediction_logits(std::span<const double> z) const override { return logits(z); }
  ScalarGrad sce_on_logits(std::span<const double> z, int label) const override { return loss(z, label); }

  ScalarGrad logit_margin(std::span<const double> z, int a, int b) const override {
    auto wa = W_.row(static_cast<std::size_t>(a));
    auto wb = W_.row(static_cast<std::size_t>(b));
    ScalarGrad out;
    out.value = dot(wa, z) + b_(static_cast<std::size_t>(a)) - dot(wb, z) - b_(static_cast<std::size_t>(b));
    out.grad.resize(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) out.grad[j] = wa[j] - wb[j];
    return out;
  }

  std::vector<Tensor*> parameters() override { return {&W_, &b_}; }
  std::vector<Tensor*> gradients() override { return {&gW_, &gb_}; }
  void zero_grad() override { gW_.fill(0.0); gb_.fill(0.0); }

  Tensor& weight() { return W_; }
  Tensor& bias_tensor() { return b_; }

private:
  int d_, L_;
  Tensor W_, b_, gW_, gb_;
};

class GsceHead : public LossHead {
public:
  GsceHead(int feature_dim, int num_classes, std::uint64_t seed, bool trainable_bias)
      : d_(feature_dim), L_(num_classes),
        mus_({static_cast<std::size_t>(num_classes), static_cast<std::size_t>(feature_dim)}),
        sigmas_({static_cast<std::size_t>(num_classes)}),
        biases_({static_cast<std::size_t>(num_classes)}),
        gmus_({static_cast<std::size_t>(num_classes), static_cast<std::size_t>(feature_dim)}),
        gsigmas_({static_cast<std::size_t>(num_classes)}),
        gbiases_({static_cast<std::size_t>(num_classes)}),
        trainable_bias_(trainable_bias) {
    Rng rng(seed);
    for (double& v : mus_.values()) v = 0.1 * rng.normal();
    sigmas_.fill(1.0);
  }

  LossKind kind() const override { return LossKind::Gsce; }
  int num_classes() const override { return L_; }
  int feature_dim() const override { return d_; }

  QuadraticLogitParams params() const {
    QuadraticLogitParams q;
    q.mus = mus_;
    q.sigmas.assign(sigmas_.values().begin(), sigmas_.values().end());
    q.biases.assign(biases_.values().begin(), biases_.values().end());
    return q;
  }
  void set_params(const QuadraticLogitParams& q) {
    q.validate();
    mus_ = q.mus;
    std::copy(q.sigmas.begin(), q.sigmas.end(), sigmas_.values().begin());
    std::copy(q.biases.begin(), q.biases.end(), biases_.values().begin());
  }

  virtual double margin() const { return 0.0; }

  std::vector<double> raw_logits(std::span<const double> z) const {
    std::vector<double> h(static_cast<std::size_t>(L_));
    for (int i = 0; i < L_; ++i)
      h[static_cast<std::size_t>(i)] = -sigmas_(static_cast<std::size_t>(i)) * squared_distance(z, mus_.row(static_cast<std::size_t>(i))) +
                                       biases_(static_cast<std::size_t>(i));
    return h;
  }

  ScalarGrad loss(std::span<const double> z, int label) const override {
    std::vector<double> h = raw_logits(z);
    h[static_cast<std::size_t>(label)] -= margin();
    return chain_sce(z, label, h, [&](const std::vector<double>& dh, std::vector<double>& dz) {
      for (int i = 0; i < L_; ++i) {
        double w = -2.0 * dh[static_cast<std::size_t>(i)] * sigmas_(static_cast<std::size_t>(i));
        auto mu = mus_.row(static_cast<std::size_t>(i));
        for (std::size_t j = 0; j < dz.size(); ++j) dz[j] += w * (z[j] - mu[j]);
      }
    });
  }

  double train_loss(std::span<const double> z, int label, std::span<double> dz, double weight) override {
    std::vector<double> h = raw_logits(z);
    h[static_cast<std::size_t>(label)] -= margin();
    ScalarGrad sg = sce_loss(h, label);
    for (int i = 0; i < L_; ++i) {
      double dh = sg.grad[static_cast<std::size_t>(i)] * weight;
      double sigma = sigmas_(static_cast<std::size_t>(i));
      auto mu = mus_.row(static_cast<std::size_t>(i));
      auto gmu = gmus_.row(static_cast<std::size_t>(i));
      double q = 0.0;
      for (std::size_t j = 0; j < z.size(); ++j) {
        double diff = z[j] - mu[j];
        q += diff * diff;
        dz[j] += -2.0 * dh * sigma * diff;
        gmu[j] += 2.0 * dh * sigma * diff;
      }
      gsigmas_(static_cast<std::size_t>(i)) += -dh * q;
      if (trainable_bias_) gbiases_(static_cast<std::size_t>(i)) += dh;
    }
    return sg.value * weight;
  }

  std::vector<double> prediction_logits(std::span<const double> z) const override { return raw_logits(z); }

  ScalarGrad sce_on_logits(std::span<const double> z, int label) const override {
    return chain_sce(z, label, raw_logits(z), [&](const std::vector<double>& dh, std::vector<double>& dz) {
      for (int i = 0; i < L_; ++i) {
        double w = -2.0 * dh[static_cast<std::size_t>(i)] * sigmas_(static_cast<std::size_t>(i));
        auto mu = mus_.row(static_cast<std::size_t>(i));
        for (std::size_t j = 0; j < dz.size(); ++j) dz[j] += w * (z[j] - mu[j]);
      }
    });
  }

  ScalarGrad logit_margin(std::span<const double> z, int a, int b) const override {
    auto mu_a = mus_.row(static_cast<std::size_t>(a));
    auto mu_b = mus_.row(static_cast<std::size_t>(b));
    double sa = sigmas_(static_cast<std::size_t>(a)), sb = sigmas_(static_cast<std::size_t>(b));
    ScalarGrad out;
    out.value = -sa * squared_distance(z, mu_a) + biases_(static_cast<std::size_t>(a)) +
                sb * squared_distance(z, mu_b) - biases_(static_cast<std::size_t>(b));
    out.grad.resize(z.size());
    for (std::size_t j = 0; j < z.size(); ++j)
      out.grad[j] = -2.0 * sa * (z[j] - mu_a[j]) + 2.0 * sb * (z[j] - mu_b[j]);
    return out;
  }

  std::vector<Tensor*> parameters() override {
    if (trainable_bias_) return {&mus_, &sigmas_, &biases_};
    return {&mus_, &sigmas_};
  }
  std::vector<Tensor*> gradients() override {
    if (trainable_bias_) return {&gmus_, &gsigmas_, &gbiases_};
    return {&gmus_, &gsigmas_};
  }
  void zero_grad() override { gmus_.fill(0.0); gsigmas_.fill(0.0); gbiases_.fill(0.0); }
  void post_step_clamp() override {
    for (double& s : sigmas_.values()) s = std::max(s, 1e-6);
  }

protected:
  int d_, L_;
  Tensor mus_, sigmas_, biases_;
  Tensor gmus_, gsigmas_, gbiases_;
  bool trainable_bias_;
};

class LgmHead final : public GsceHead {
public:
  LgmHead(int feature_dim, int num_classes, std::uint64_t seed, double margin)
      : GsceHead(feature_dim, num_classes, seed, /*trainable_bias=*/false), margin_(margin) {}
  LossKind kind() const override { return LossKind::Lgm; }
  double margin() const override { return margin_; }

private:
  double margin_;
};

class MmldaHead final : public LossHead {
public:
  MmldaHead(CenterSet cs) : cs_(std::move(cs)) {}
  LossKind kind() const override { return LossKind::Mmlda; }
  int num_classes() const override { return cs_.num_classes; }
  int feature_dim() const override { return cs_.feature_dim; }

  ScalarGrad loss(std::span<const double> z, int label) const override { return mmlda_loss(z, label, cs_); }
  double train_loss(std::span<const double> z, int label, std::span<double> dz, double weight) override {
    ScalarGrad sg = mmlda_loss(z, label, cs_);
    for (std::size_t j = 0; j < dz.size(); ++j) dz[j] += weight * sg.grad[j];
    return sg.value * weight;
  }
  std::vector<double> prediction_logits(std::span<const double> z) const override {
    return center_distance_logits(z, cs_);
  }
  ScalarGrad sce_on_logits(std::span<const double> z, int label) const override { return mmlda_loss(z, label, cs_); }
  bool has_centers() const override { return true; }
  ScalarGrad center_distance_loss(std::span<const double> z, int label) const override {
    return mmc_loss(z, label, cs_);
  }
  const CenterSet* center_set() const override { return &cs_; }

private:
  CenterSet cs_;
};

class MmcHead final : public LossHead {
public:
  MmcHead(CenterSet cs) : cs_(std::move(cs)) {}
  LossKind kind() const override { return LossKind::Mmc; }
  int num_classes() const override { return cs_.num_classes; }
  int feature_dim() const override { return cs_.feature_dim; }

  ScalarGrad loss(std::span<const double> z, int label) const override { return mmc_loss(z, label, cs_); }
  double train_loss(std::span<const double> z, int label, std::span<double> dz, double weight) override {
    ScalarGrad sg = mmc_loss(z, label, cs_);
    for (std::size_t j = 0; j < dz.size(); ++j) dz[j] += weight * sg.grad[j];
    return sg.value * weight;
  }
  std::vector<double> prediction_logits(std::span<const double> z) const override {
    return center_distance_logits(z, cs_);
  }
  ScalarGrad sce_on_logits(std::span<const double> z, int label) const override {
    return chain_sce(z, label, prediction_logits(z), [&](const std::vector<double>& dh, std::vector<double>& dz) {
      // dh_l/dz = mu_l - z; the z contributions cancel across l.
      for (int l = 0; l < cs_.num_classes; ++l) {
        auto mu = cs_.center(l);
        for (std::size_t j = 0; j < dz.size(); ++j) dz[j] += dh[static_cast<std::size_t>(l)] * mu[j];
      }
    });
  }
  bool has_centers() const override { return true; }
  ScalarGrad center_distance_loss(std::span<const double> z, int label) const override {
    return mmc_loss(z, label, cs_);
  }
  const CenterSet* center_set() const override { return &cs_; }

private:
  CenterSet cs_;
};

class CenterHead final : public LossHead {
public:
  CenterHead(int feature_dim, int num_classes, std::uint64_t seed, double lambda)
      : d_(feature_dim), L_(num_classes), lambda_(lambda),
        W_({static_cast<std::size_t>(num_classes), static_cast<std::size_t>(feature_dim)}),
        b_({static_cast<std::size_t>(num_classes)}),
        centers_({static_cast<std::size_t>(num_classes), static_cast<std::size_t>(feature_dim)}),
        gW_({static_cast<std::size_t>(num_classes), static_cast<std::size_t>(feature_dim)}),
        gb_({static_cast<std::size_t>(num_classes)}),
        gcenters_({static_cast<std::size_t>(num_classes), static_cast<std::size_t>(feature_dim)}) {
    if (lambda <= 0.0) throw std::invalid_argument("center head: lambda must be positive");
    Rng rng(seed);
    double limit = std::sqrt(3.0 / static_cast<double>(feature_dim));
    for (double& v : W_.values()) v = rng.uniform(-limit, limit);
    for (double& v : centers_.values()) v = 0.1 * rng.normal();
  }

  LossKind kind() const override { return LossKind::Center; }
  int num_classes() const override { return L_; }
  int feature_dim() const override { return d_; }

  std::vector<double> logits(std::span<const double> z) const {
    std::vector<double> h(static_cast<std::size_t>(L_));
    for (int i = 0; i < L_; ++i) h[static_cast<std::size_t>(i)] = dot(W_.row(static_cast<std::size_t>(i)), z) + b_(static_cast<std::size_t>(i));
    return h;
  }

  ScalarGrad loss(std::span<const double> z, int label) const override {
    CenterJointEval ev = center_loss_joint(logits(z), z, label, centers_, lambda_);
    ScalarGrad out;
    out.value = ev.value;
    out.grad = std::move(ev.dz);
    for (int i = 0; i < L_; ++i) {
      auto w = W_.row(static_cast<std::size_t>(i));
      for (std::size_t j = 0; j < out.grad.size(); ++j) out.grad[j] += ev.dlogits[static_cast<std::size_t>(i)] * w[j];
    }
    return out;
  }

  double train_loss(std::span<const double> z, int label, std::span<double> dz, double weight) override {
    CenterJointEval ev = center_loss_joint(logits(z), z, label, centers_, lambda_);
    for (int i = 0; i < L_; ++i) {
      double g = ev.dlogits[static_cast<std::size_t>(i)] * weight;
      gb_(static_cast<std::size_t>(i)) += g;
      auto gw = gW_.row(static_cast<std::size_t>(i));
      auto w = W_.row(static_cast<std::size_t>(i));
      for (std::size_t j = 0; j < z.size(); ++j) {
        gw[j] += g * z[j];
        dz[j] += g * w[j];
      }
    }
    auto gc = gcenters_.row(static_cast<std::size_t>(label));
    for (std::size_t j = 0; j < z.size(); ++j) {
      dz[j] += weight * ev.dz[j];
      gc[j] += weight * ev.dcenter_y[j];
    }
    return ev.value * weight;
  }

  std::vector<double> prediction_logits(std::span<const double> z) const override { return logits(z); }

  ScalarGrad sce_on_logits(std::span<const double> z, int label) const override {
    return chain_sce(z, label, logits(z), [&](const std::vector<double>& dh, std::vector<double>& dz) {
      for (int i = 0; i < L_; ++i) {
        auto w = W_.row(static_cast<std::size_t>(i));
        for (std::size_t j = 0; j < dz.size(); ++j) dz[j] += dh[static_cast<std::size_t>(i)] * w[j];
      }
    });
  }

  ScalarGrad logit_margin(std::span<const double> z, int a, int b) const override {
    auto wa = W_.row(static_cast<std::size_t>(a));
    auto wb = W_.row(static_cast<std::size_t>(b));
    ScalarGrad out;
    out.value = dot(wa, z) + b_(static_cast<std::size_t>(a)) - dot(wb, z) - b_(static_cast<std::size_t>(b));
    out.grad.resize(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) out.grad[j] = wa[j] - wb[j];
    return out;
  }

  std::vector<Tensor*> parameters() override { return {&W_, &b_, &centers_}; }
  std::vector<Tensor*> gradients() override { return {&gW_, &gb_, &gcenters_}; }
  void zero_grad() override { gW_.fill(0.0); gb_.fill(0.0); gcenters_.fill(0.0); }

  Tensor& trainable_centers() { return centers_; }
  double lambda() const { return lambda_; }

private:
  int d_, L_;
  double lambda_;
  Tensor W_, b_, centers_;
  Tensor gW_, gb_, gcenters_;
};

class EmcHead final : public LossHead {
public:
  EmcHead(CenterSet cs, double alpha) : cs_(std::move(cs)), alpha_(alpha), mu_(cs_.centers),
        gmu_({static_cast<std::size_t>(cs_.num_classes), static_cast<std::size_t>(cs_.feature_dim)}) {
    if (alpha <= 0.0) throw std::invalid_argument("emc head: alpha must be positive");
  }

  LossKind kind() const override { return LossKind::Emc; }
  int num_classes() const override { return cs_.num_classes; }
  int feature_dim() const override { return cs_.feature_dim; }

  ScalarGrad loss(std::span<const double> z, int label) const override {
    EmcEval ev = emc_loss(z, label, mu_, cs_, alpha_);
    return {ev.value, std::move(ev.dz)};
  }

  double train_loss(std::span<const double> z, int label, std::span<double> dz, double weight) override {
    EmcEval ev = emc_loss(z, label, mu_, cs_, alpha_);
    auto gm = gmu_.row(static_cast<std::size_t>(label));
    for (std::size_t j = 0; j < z.size(); ++j) {
      dz[j] += weight * ev.dz[j];
      gm[j] += weight * ev.dmu_y[j];
    }
    return ev.value * weight;
  }

  std::vector<double> prediction_logits(std::span<const double> z) const override {
    return center_distance_logits(z, cs_);
  }
  ScalarGrad sce_on_logits(std::span<const double> z, int label) const override {
    return chain_sce(z, label, prediction_logits(z), [&](const std::vector<double>& dh, std::vector<double>& dz) {
      for (int l = 0; l < cs_.num_classes; ++l) {
        auto mu = cs_.center(l);
        for (std::size_t j = 0; j < dz.size(); ++j) dz[j] += dh[static_cast<std::size_t>(l)] * mu[j];
      }
    });
  }
  bool has_centers() const override { return true; }
  ScalarGrad center_distance_loss(std::span<const double> z, int label) const override {
    return mmc_loss(z, label, cs_);
  }
  const CenterSet* center_set() const override { return &cs_; }

  std::vector<Tensor*> parameters() override { return {&mu_}; }
  std::vector<Tensor*> gradients() override { return {&gmu_}; }
  void zero_grad() override { gmu_.fill(0.0); }

  Tensor& trainable_mu() { return mu_; }
  double alpha() const { return alpha_; }

private:
  CenterSet cs_;
  double alpha_;
  Tensor mu_, gmu_;
};

}  // namespace

std::unique_ptr<LossHead> make_loss_head(const LossSpec& spec, int feature_dim, int num_classes,
                                         std::uint64_t seed) {
  spec.validate();
  switch (spec.kind) {
    case LossKind::Sce:
      return std::make_unique<SceHead>(feature_dim, num_classes, seed);
    case LossKind::Gsce:
      return std::make_unique<GsceHead>(feature_dim, num_classes, seed, /*trainable_bias=*/true);
    case LossKind::Lgm:
      return std::make_unique<LgmHead>(feature_dim, num_classes, seed, spec.margin);
    case LossKind::Mmlda:
      return std::make_unique<MmldaHead>(generate_mm_centers(spec.c_mm, feature_dim, num_classes));
    case LossKind::Center:
      return std::make_unique<CenterHead>(feature_dim, num_classes, seed, spec.lambda);
    case LossKind::Mmc:
      return std::make_unique<MmcHead>(generate_mm_centers(spec.c_mm, feature_dim, num_classes));
    case LossKind::Emc:
      return std::make_unique<EmcHead>(generate_mm_centers(spec.c_mm, feature_dim, num_classes), spec.alpha);
  }
  throw std::logic_error("make_loss_head: unreachable");
}

}  // namespace mmc
