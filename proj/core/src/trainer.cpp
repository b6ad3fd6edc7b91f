#include "mmclab/trainer.hpp"

#include "mmclab/csv.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "mmclab/rng.hpp"

namespace mmc {

void TrainConfig::validate() const {
  if (epochs <= 0) throw std::invalid_argument("train: epochs must be positive");
  if (batch_size <= 0) throw std::invalid_argument("train: batch_size must be positive");
  if (lr < 0.0) throw std::invalid_argument("train: learning rate must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("train: adam betas must lie in [0, 1)");
  if (eps_opt <= 0.0) throw std::invalid_argument("train: optimizer epsilon must be positive");
  if (at.enabled) {
    if (at.pgd_steps < 1) throw std::invalid_argument("train: at.pgd_steps must be >= 1");
    if (at.epsilon < 0.0 || at.step_size < 0.0) throw std::invalid_argument("train: bad at budget");
  }
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor*> params, std::vector<Tensor*> grads, double lr,
                             double beta1, double beta2, double eps)
    : params_(std::move(params)), grads_(std::move(grads)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (params_.size() != grads_.size()) throw std::invalid_argument("adam: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i]->same_shape(*grads_[i])) throw std::invalid_argument("adam: parameter/gradient shape mismatch");
    m_.push_back(Tensor(params_[i]->shape()));
    v_.push_back(Tensor(params_[i]->shape()));
  }
}

void AdamOptimizer::step() {
  ++t_;
  double b1t = 1.0 - std::pow(beta1_, t_);
  double b2t = 1.0 - std::pow(beta2_, t_);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k]->values();
    const auto& g = grads_[k]->values();
    auto& m = m_[k].values();
    auto& v = v_[k].values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / b1t) / (std::sqrt(v[i] / b2t) + eps_);
    }
  }
}

double clean_accuracy(const Mlp& model, const LossHead& head, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  Tensor z = model.forward(data.inputs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (head.predict(z.row(i)).label == data.labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

Tensor gather_rows(const Tensor& src, const std::vector<std::size_t>& order, std::size_t begin, std::size_t end) {
  Tensor out({end - begin, src.cols()});
  for (std::size_t i = begin; i < end; ++i) {
    auto s = src.row(order[i]);
    auto d = out.row(i - begin);
    std::copy(s.begin(), s.end(), d.begin());
  }
  return out;
}

TrainHistory run_training(Mlp& model, LossHead& head, const Dataset& train_set, const Dataset* eval_set,
                          const TrainConfig& cfg, bool adversarial) {
  cfg.validate();
  train_set.validate();
  if (train_set.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (train_set.input_dim() != model.input_dim()) throw std::invalid_argument("train: dataset/model dim mismatch");
  if (head.feature_dim() != model.feature_dim()) throw std::invalid_argument("train: head/model dim mismatch");

  std::vector<Tensor*> params = model.parameters();
  std::vector<Tensor*> grads = model.gradients();
  for (Tensor* t : head.parameters()) params.push_back(t);
  for (Tensor* t : head.gradients()) grads.push_back(t);
  AdamOptimizer opt(params, grads, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_opt);

  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(cfg.seed);

  AttackConfig at_cfg;
  if (adversarial) {
    at_cfg.family = AttackFamily::Pgd;
    at_cfg.mode = cfg.at.mode;
    at_cfg.steps = cfg.at.pgd_steps;
    at_cfg.epsilon = cfg.at.epsilon;
    at_cfg.step_size = cfg.at.step_size;
    if (head.has_centers())
      at_cfg.objective = cfg.at.mode == AttackMode::Targeted ? AttackObjective::AdaTar1 : AttackObjective::AdaUn1;
    else
      at_cfg.objective = AttackObjective::Standard;
  }

  TrainHistory history;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    double alp_pair_sum = 0.0, alp_rhs_sum = 0.0;
    std::size_t alp_batches = 0;

    for (std::size_t begin = 0; begin < n; begin += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t end = std::min(n, begin + static_cast<std::size_t>(cfg.batch_size));
      std::size_t nb = end - begin;
      Tensor xb = gather_rows(train_set.inputs, order, begin, end);
      std::vector<int> yb(nb);
      for (std::size_t i = begin; i < end; ++i) yb[i - begin] = train_set.labels[order[i]];

      Tensor x_clean;
      if (adversarial && cfg.at.epsilon >= 0.0) {
        x_clean = xb;
        for (std::size_t i = 0; i < nb; ++i) {
          int y_t = -1;
          if (cfg.at.mode == AttackMode::Targeted) {
            Rng trng = Rng::for_example(cfg.seed ^ 0xA7C0FFEEULL,
                                        static_cast<std::uint64_t>(epoch) * n + order[begin + i]);
            y_t = trng.uniform_int(head.num_classes() - 1);
            if (y_t >= yb[i]) ++y_t;
          }
          AdvResult adv = pgd(model, head, xb.row(i), yb[i], y_t, at_cfg, nullptr);
          auto dst = xb.row(i);
          std::copy(adv.x_adv.begin(), adv.x_adv.end(), dst.begin());
        }
      }

      Mlp::Workspace ws;
      Tensor z = model.forward(xb, ws);
      Tensor upstream({nb, static_cast<std::size_t>(model.feature_dim())});
      model.zero_grad();
      head.zero_grad();

      double w = 1.0 / static_cast<double>(nb);
      double batch_loss = 0.0;
      for (std::size_t i = 0; i < nb; ++i) batch_loss += head.train_loss(z.row(i), yb[i], upstream.row(i), w);
      if (!std::isfinite(batch_loss)) {
        char msg[128];
        std::snprintf(msg, sizeof msg, "train: non-finite loss at epoch %d, batch starting at %zu", epoch, begin);
        throw std::runtime_error(msg);
      }
      loss_sum += batch_loss * static_cast<double>(nb);

      if (adversarial && head.has_centers()) {
        // pairing bound: |z - mu|^2 + |z* - mu|^2 >= 0.5 |z - z*|^2 per
        // example (the center-distance loss carries a 1/2, hence the 2x)
        Tensor zc = model.forward(x_clean);
        double pair = 0.0, rhs = 0.0;
        for (std::size_t i = 0; i < nb; ++i) {
          pair += 2.0 * (head.center_distance_loss(zc.row(i), yb[i]).value +
                         head.center_distance_loss(z.row(i), yb[i]).value);
          rhs += 0.5 * squared_distance(zc.row(i), z.row(i));
        }
        pair /= static_cast<double>(nb);
        rhs /= static_cast<double>(nb);
        if (pair + 1e-9 < rhs) throw std::logic_error("train: pairing upper bound violated");
        alp_pair_sum += pair;
        alp_rhs_sum += rhs;
        ++alp_batches;
      }

      model.backward(ws, upstream);
      opt.step();
      head.post_step_clamp();
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(n);
    stats.clean_accuracy = clean_accuracy(model, head, eval_set ? *eval_set : train_set);
    if (alp_batches > 0) {
      stats.alp_checked = true;
      stats.alp_pair_loss = alp_pair_sum / static_cast<double>(alp_batches);
      stats.alp_bound_rhs = alp_rhs_sum / static_cast<double>(alp_batches);
    }
    auto t1 = std::chrono::steady_clock::now();
    stats.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    history.epochs.push_back(stats);
  }
  return history;
}

}  // namespace

TrainHistory train(Mlp& model, LossHead& head, const Dataset& train_set, const Dataset* eval_set,
                   const TrainConfig& cfg) {
  return run_training(model, head, train_set, eval_set, cfg, /*adversarial=*/false);
}

TrainHistory adversarial_train(Mlp& model, LossHead& head, const Dataset& train_set,
                               const Dataset* eval_set, const TrainConfig& cfg) {
  if (!cfg.at.enabled) throw std::invalid_argument("adversarial_train: at.enabled must be set");
  return run_training(model, head, train_set, eval_set, cfg, /*adversarial=*/true);
}

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path, bool include_wall_ms) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("history csv: cannot open " + path.string());
  os << "epoch,wall_ms,train_loss,clean_acc\n";
  for (const EpochStats& e : history.epochs) {
    os << e.epoch << ',' << csv_double(include_wall_ms ? e.wall_ms : 0.0) << ',' << csv_double(e.train_loss)
       << ',' << csv_double(e.clean_accuracy) << '\n';
  }
  if (!os) throw std::runtime_error("history csv: write failed");
}

}  // namespace mmc
