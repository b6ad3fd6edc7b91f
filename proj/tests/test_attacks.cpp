#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mmclab/attacks.hpp"
#include "mmclab/trainer.hpp"

using namespace mmc;

namespace {

struct ToyModel {
  Mlp model;
  std::unique_ptr<LossHead> head;
};

// identity feature map shifted to center the cube: z = x - 1/2
ToyModel centered_identity_mmc(int dim, double c_mm, int classes) {
  ToyModel toy{Mlp({dim, dim}, 0), nullptr};
  auto params = toy.model.parameters();
  params[0]->fill(0.0);
  for (int i = 0; i < dim; ++i) (*params[0])(static_cast<std::size_t>(i), static_cast<std::size_t>(i)) = 1.0;
  params[1]->fill(-0.5);
  LossSpec spec;
  spec.kind = LossKind::Mmc;
  spec.c_mm = c_mm;
  toy.head = make_loss_head(spec, dim, classes, 0);
  return toy;
}

// small blobs task and trained models, shared across the attack tests
struct TrainedPair {
  Dataset test;
  ToyModel mmc;
  ToyModel sce;
};

const TrainedPair& trained_models() {
  static TrainedPair* cached = [] {
    auto* tp = new TrainedPair;
    Dataset train_set = make_blobs(10, 32, 200, 0.08, 5);
    tp->test = make_blobs(10, 32, 60, 0.08, 6);

    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.batch_size = 64;
    cfg.seed = 5;

    LossSpec mmc_spec;
    mmc_spec.kind = LossKind::Mmc;
    mmc_spec.c_mm = 30.0;
    tp->mmc.model = Mlp({32, 64, 10}, 5);
    tp->mmc.head = make_loss_head(mmc_spec, 10, 10, 7);
    train(tp->mmc.model, *tp->mmc.head, train_set, nullptr, cfg);

    LossSpec sce_spec;
    sce_spec.kind = LossKind::Sce;
    tp->sce.model = Mlp({32, 64, 10}, 5);
    tp->sce.head = make_loss_head(sce_spec, 10, 10, 7);
    train(tp->sce.model, *tp->sce.head, train_set, nullptr, cfg);
    return tp;
  }();
  return *cached;
}

}  // namespace

TEST_CASE("adaptive objectives evaluate the stated center distances") {
  ToyModel toy = centered_identity_mmc(3, 0.4, 3);
  const CenterSet& cs = *toy.head->center_set();

  // feature at its own center: the untargeted objective bottoms out at zero
  std::vector<double> z(cs.center(1).begin(), cs.center(1).end());
  ScalarGrad un1 = adaptive_objective(AttackObjective::AdaUn1, *toy.head, z, 1, -1, AttackMode::Untargeted);
  CHECK(un1.value == doctest::Approx(0.0));
  for (double g : un1.grad) CHECK(g == doctest::Approx(0.0));

  // feature at the target center: the targeted objective is zero
  std::vector<double> zt(cs.center(2).begin(), cs.center(2).end());
  ScalarGrad tar1 = adaptive_objective(AttackObjective::AdaTar1, *toy.head, zt, 0, 2, AttackMode::Targeted);
  CHECK(tar1.value == doctest::Approx(0.0));

  // the two-center difference has a constant gradient mu_y - mu_{y_t}
  Rng rng(3);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<double> zz(3);
    for (double& v : zz) v = rng.normal();
    ScalarGrad tar2 = adaptive_objective(AttackObjective::AdaTar2, *toy.head, zz, 0, 2, AttackMode::Targeted);
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(tar2.grad[j] == doctest::Approx(cs.center(0)[j] - cs.center(2)[j]).epsilon(1e-12));
  }

  CHECK_THROWS_AS(adaptive_objective(AttackObjective::AdaTar1, *toy.head, z, 0, -1, AttackMode::Targeted),
                  std::invalid_argument);

  LossSpec sce;
  sce.kind = LossKind::Sce;
  auto plain = make_loss_head(sce, 3, 3, 0);
  CHECK_THROWS_AS(adaptive_objective(AttackObjective::AdaUn1, *plain, z, 0, -1, AttackMode::Untargeted),
                  std::logic_error);
}

TEST_CASE("pgd with a zero budget returns the input unchanged") {
  ToyModel toy = centered_identity_mmc(4, 1.0, 2);
  AttackConfig cfg;
  cfg.family = AttackFamily::Pgd;
  cfg.objective = AttackObjective::AdaUn1;
  cfg.epsilon = 0.0;
  cfg.step_size = 2.0 / 255.0;
  cfg.steps = 5;
  std::vector<double> x{0.2, 0.8, 0.5, 0.5};
  AdvResult r = pgd(toy.model, *toy.head, x, 0, -1, cfg);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(r.x_adv[i] == x[i]);
  CHECK(r.l2_distortion == 0.0);
  CHECK(r.linf_distortion == 0.0);
}

TEST_CASE("pgd one step on a linear scalar model lands exactly at x -+ eps") {
  // z = x through a single affine layer; two centers at +-1
  Mlp model({1, 1}, 0);
  auto params = model.parameters();
  (*params[0])(0, 0) = 1.0;
  (*params[1])(0) = 0.0;
  LossSpec spec;
  spec.kind = LossKind::Mmc;
  spec.c_mm = 1.0;
  auto head = make_loss_head(spec, 1, 2, 0);

  AttackConfig cfg;
  cfg.objective = AttackObjective::AdaUn1;
  cfg.epsilon = 8.0 / 255.0;
  cfg.step_size = 8.0 / 255.0;
  cfg.steps = 1;

  // with y = 0 (center +1) the objective -0.5 (z-1)^2 has input gradient
  // -(z-1) = +0.5 at x = 0.5, so the sign step moves to x - eps
  std::vector<double> x{0.5};
  AdvResult r = pgd(model, *head, x, 0, -1, cfg);
  CHECK(r.x_adv[0] == doctest::Approx(0.5 - cfg.epsilon).epsilon(1e-15));

  // with y = 1 (center -1) the gradient flips and the step lands at x + eps
  AdvResult r2 = pgd(model, *head, x, 1, -1, cfg);
  CHECK(r2.x_adv[0] == doctest::Approx(0.5 + cfg.epsilon).epsilon(1e-15));
}

TEST_CASE("l-inf budget and pixel box hold for pgd, mim and spsa") {
  const TrainedPair& tp = trained_models();
  AttackConfig cfg;
  cfg.objective = AttackObjective::AdaUn1;
  cfg.epsilon = 16.0 / 255.0;
  cfg.step_size = 4.0 / 255.0;
  cfg.steps = 10;
  cfg.spsa.batch = 16;

  for (AttackFamily family : {AttackFamily::Pgd, AttackFamily::Mim, AttackFamily::Spsa}) {
    cfg.family = family;
    for (std::size_t i = 0; i < 25; ++i) {
      auto x = tp.test.inputs.row(i);
      int y = tp.test.labels[i];
      Rng rng = Rng::for_example(11, i);
      AdvResult r;
      switch (family) {
        case AttackFamily::Pgd: r = pgd(tp.mmc.model, *tp.mmc.head, x, y, -1, cfg, &rng); break;
        case AttackFamily::Mim: r = mim(tp.mmc.model, *tp.mmc.head, x, y, cfg); break;
        default: r = spsa(tp.mmc.model, *tp.mmc.head, x, y, -1, cfg, rng); break;
      }
      CHECK(linf_distance(r.x_adv, x) <= cfg.epsilon + 1e-9);
      for (double v : r.x_adv) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }
}

TEST_CASE("pgd objective trace is non-increasing in at least 90 percent of steps") {
  const TrainedPair& tp = trained_models();
  AttackConfig cfg;
  cfg.objective = AttackObjective::AdaUn1;
  cfg.epsilon = 8.0 / 255.0;
  cfg.step_size = 2.0 / 255.0;
  cfg.steps = 10;

  std::size_t decreasing = 0, total = 0;
  for (std::size_t i = 0; i < 40; ++i) {
    AdvResult r = pgd(tp.mmc.model, *tp.mmc.head, tp.test.inputs.row(i), tp.test.labels[i], -1, cfg);
    for (std::size_t s = 1; s < r.objective_trace.size(); ++s) {
      ++total;
      if (r.objective_trace[s] <= r.objective_trace[s - 1] + 1e-12) ++decreasing;
    }
  }
  CHECK(static_cast<double>(decreasing) >= 0.9 * static_cast<double>(total));
}

TEST_CASE("mim degenerates to pgd when the decay is zero") {
  const TrainedPair& tp = trained_models();
  AttackConfig cfg;
  cfg.objective = AttackObjective::AdaUn1;
  cfg.epsilon = 8.0 / 255.0;
  cfg.step_size = 2.0 / 255.0;
  cfg.steps = 10;
  cfg.mim_decay = 0.0;

  for (std::size_t i = 0; i < 10; ++i) {
    auto x = tp.test.inputs.row(i);
    int y = tp.test.labels[i];
    AdvResult a = pgd(tp.mmc.model, *tp.mmc.head, x, y, -1, cfg);
    AdvResult b = mim(tp.mmc.model, *tp.mmc.head, x, y, cfg);
    REQUIRE(a.x_adv.size() == b.x_adv.size());
    CHECK(std::memcmp(a.x_adv.data(), b.x_adv.data(), a.x_adv.size() * sizeof(double)) == 0);
  }

  // zero budget is the identity
  cfg.epsilon = 0.0;
  AdvResult r = mim(tp.mmc.model, *tp.mmc.head, tp.test.inputs.row(0), tp.test.labels[0], cfg);
  CHECK(r.linf_distortion == 0.0);

  // empty momentum makes the first step identical to pgd's
  cfg.epsilon = 8.0 / 255.0;
  cfg.mim_decay = 1.0;
  cfg.steps = 1;
  for (std::size_t i = 0; i < 10; ++i) {
    AdvResult a = pgd(tp.mmc.model, *tp.mmc.head, tp.test.inputs.row(i), tp.test.labels[i], -1, cfg);
    AdvResult b = mim(tp.mmc.model, *tp.mmc.head, tp.test.inputs.row(i), tp.test.labels[i], cfg);
    CHECK(std::memcmp(a.x_adv.data(), b.x_adv.data(), a.x_adv.size() * sizeof(double)) == 0);
  }

  cfg.mode = AttackMode::Targeted;
  CHECK_THROWS_AS(mim(tp.mmc.model, *tp.mmc.head, tp.test.inputs.row(0), 0, cfg), std::invalid_argument);
}

TEST_CASE("cw returns the clean input when it already succeeds") {
  ToyModel toy = centered_identity_mmc(2, 0.4, 2);
  AttackConfig cfg;
  cfg.family = AttackFamily::Cw;
  cfg.objective = AttackObjective::AdaUn2;
  std::vector<double> x{0.9, 0.5};  // feature (0.4, 0) sits at center 0
  AdvResult r = cw(toy.model, *toy.head, x, /*y=*/1, -1, cfg);
  CHECK(r.success);
  CHECK(r.l2_distortion == 0.0);
  CHECK(r.iterations_used == 0);
}

TEST_CASE("cw recovers the point-to-hyperplane distance on linear binary models") {
  AttackConfig cfg;
  cfg.family = AttackFamily::Cw;
  cfg.objective = AttackObjective::AdaUn2;
  cfg.cw.binary_steps = 9;
  cfg.cw.c_init = 0.01;
  cfg.cw.lr = 0.005;
  cfg.cw.iters = 1000;

  SUBCASE("center-distance head: bisector crosses the unit square") {
    ToyModel toy = centered_identity_mmc(2, 1.0, 2);  // boundary at first pixel = 0.5
    std::vector<double> x{0.8, 0.6};
    AdvResult r = cw(toy.model, *toy.head, x, /*y=*/0, -1, cfg);
    REQUIRE(r.success);
    CHECK(std::fabs(r.l2_distortion - 0.3) / 0.3 < 0.05);
    // accepted c values never increase across successful search steps, and
    // no recorded candidate beats the returned distortion
    double last_success_c = std::numeric_limits<double>::infinity();
    for (const CwSearchStep& step : r.cw_trace) {
      if (step.success) {
        CHECK(step.c <= last_success_c);
        last_success_c = step.c;
        CHECK(r.l2_distortion <= step.best_l2 + 1e-12);
      }
    }
  }

  SUBCASE("softmax head: analytic distance to the logit boundary") {
    Mlp model({2, 2}, 0);
    auto mp = model.parameters();
    mp[0]->fill(0.0);
    (*mp[0])(0, 0) = 1.0;
    (*mp[0])(1, 1) = 1.0;
    mp[1]->fill(0.0);
    LossSpec spec;
    spec.kind = LossKind::Sce;
    auto head = make_loss_head(spec, 2, 2, 1);
    auto hp = head->parameters();
    // w0 - w1 = (1, 1), b0 - b1 = -1: boundary is the line x + y = 1
    (*hp[0])(0, 0) = 1.0;
    (*hp[0])(0, 1) = 0.5;
    (*hp[0])(1, 0) = 0.0;
    (*hp[0])(1, 1) = -0.5;
    (*hp[1])(0) = -0.25;
    (*hp[1])(1) = 0.75;

    cfg.objective = AttackObjective::Standard;
    std::vector<double> x{0.3, 0.2};  // logit margin -0.5, predicted class 1
    double expect = 0.5 / std::sqrt(2.0);
    AdvResult r = cw(model, *head, x, /*y=*/1, -1, cfg);
    REQUIRE(r.success);
    CHECK(std::fabs(r.l2_distortion - expect) / expect < 0.05);
  }
}

TEST_CASE("cw reports failure with an infinite sentinel when no attack exists") {
  // constant-feature model: the prediction never changes
  Mlp model({2, 2}, 0);
  for (Tensor* p : model.parameters()) p->fill(0.0);
  LossSpec spec;
  spec.kind = LossKind::Mmc;
  spec.c_mm = 1.0;
  auto head = make_loss_head(spec, 2, 2, 0);
  int frozen = head->predict(std::vector<double>{0.0, 0.0}).label;

  AttackConfig cfg;
  cfg.family = AttackFamily::Cw;
  cfg.objective = AttackObjective::AdaUn2;
  cfg.cw.iters = 50;
  std::vector<double> x{0.4, 0.6};
  AdvResult r = cw(model, *head, x, frozen, -1, cfg);
  CHECK_FALSE(r.success);
  CHECK(std::isinf(r.l2_distortion));
  CHECK(std::isinf(r.linf_distortion));
}

TEST_CASE("spsa estimates the quadratic gradient within five percent") {
  Rng rng(2024);
  auto f = [](std::span<const double> q) { return squared_norm(q); };
  std::vector<double> at{1.0, 0.0};
  std::vector<double> est = spsa_gradient_estimate(f, at, 0.01, 10000, rng);
  double err = std::sqrt((est[0] - 2.0) * (est[0] - 2.0) + est[1] * est[1]);
  CHECK(err < 0.05 * 2.0);
}

TEST_CASE("spsa attack respects the budget and is bit-reproducible") {
  const TrainedPair& tp = trained_models();
  AttackConfig cfg;
  cfg.family = AttackFamily::Spsa;
  cfg.objective = AttackObjective::AdaUn1;
  cfg.epsilon = 16.0 / 255.0;
  cfg.steps = 5;
  cfg.spsa.batch = 32;

  auto x = tp.test.inputs.row(3);
  int y = tp.test.labels[3];
  Rng r1 = Rng::for_example(99, 3);
  Rng r2 = Rng::for_example(99, 3);
  AdvResult a = spsa(tp.mmc.model, *tp.mmc.head, x, y, -1, cfg, r1);
  AdvResult b = spsa(tp.mmc.model, *tp.mmc.head, x, y, -1, cfg, r2);
  CHECK(std::memcmp(a.x_adv.data(), b.x_adv.data(), a.x_adv.size() * sizeof(double)) == 0);

  cfg.epsilon = 0.0;
  Rng r3 = Rng::for_example(99, 3);
  AdvResult c = spsa(tp.mmc.model, *tp.mmc.head, x, y, -1, cfg, r3);
  CHECK(c.linf_distortion == 0.0);
}

TEST_CASE("corruptions: zero-noise and zero-angle identities, exact delta rotation") {
  Rng rng(5);
  std::vector<double> x{0.1, 0.9, 0.4, 0.6};
  std::vector<double> same = corrupt_noise(x, 0.0, rng);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(same[i] == x[i]);

  std::vector<double> noisy = corrupt_noise(x, 0.05, rng);
  for (double v : noisy) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  // 5x5 delta image, one pixel above center
  std::vector<double> img(25, 0.0);
  img[1 * 5 + 2] = 1.0;
  std::vector<double> still = corrupt_rotate(img, 0.0, 5, 5);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::fabs(still[i] - img[i]) < 1e-12);

  // +90 degrees counterclockwise moves it one pixel left of center
  std::vector<double> quarter = corrupt_rotate(img, 90.0, 5, 5);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) {
      double expect = (r == 2 && c == 1) ? 1.0 : 0.0;
      CHECK(std::fabs(quarter[static_cast<std::size_t>(r * 5 + c)] - expect) < 1e-12);
    }

  CHECK_THROWS_AS(corrupt_rotate(x, 10.0, 3, 3), std::invalid_argument);
}

TEST_CASE("robustness evaluation: identity attack, chance level, csv determinism") {
  const TrainedPair& tp = trained_models();

  AttackConfig cfg;
  cfg.family = AttackFamily::Pgd;
  cfg.objective = AttackObjective::AdaUn1;
  cfg.epsilon = 0.0;
  cfg.steps = 1;
  RobustnessReport rep = evaluate_robustness(tp.mmc.model, *tp.mmc.head, tp.test, cfg);
  CHECK(rep.adversarial_accuracy == doctest::Approx(rep.clean_accuracy));

  // random labels force chance-level clean accuracy
  Dataset scrambled = tp.test;
  Rng rng(123);
  for (int& y : scrambled.labels) y = rng.uniform_int(10);
  RobustnessReport chance = evaluate_robustness(tp.mmc.model, *tp.mmc.head, scrambled, cfg);
  double sigma = std::sqrt(0.1 * 0.9 / static_cast<double>(scrambled.size()));
  CHECK(std::fabs(chance.clean_accuracy - 0.1) < 3.0 * sigma + 1e-9);

  namespace fs = std::filesystem;
  fs::path p1 = fs::temp_directory_path() / "mmclab_rob1.csv";
  fs::path p2 = fs::temp_directory_path() / "mmclab_rob2.csv";
  write_robustness_csv(rep, p1);
  write_robustness_csv(rep, p2);
  std::ifstream f1(p1), f2(p2);
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  CHECK(s1.str() == s2.str());
  CHECK(s1.str().starts_with("index,clean_label,pred_clean,pred_adv,success,l2,linf\n"));
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("more pgd steps do not reduce the success rate (statistically)") {
  const TrainedPair& tp = trained_models();
  Dataset big = make_blobs(10, 32, 60, 0.08, 77);  // 600 examples

  auto rate = [&](int steps) {
    AttackConfig cfg;
    cfg.family = AttackFamily::Pgd;
    cfg.objective = AttackObjective::AdaUn1;
    cfg.epsilon = 12.0 / 255.0;
    cfg.step_size = 2.0 / 255.0;
    cfg.steps = steps;
    RobustnessReport rep = evaluate_robustness(tp.mmc.model, *tp.mmc.head, big, cfg);
    return 1.0 - rep.adversarial_accuracy;
  };
  double r5 = rate(5), r10 = rate(10), r20 = rate(20);
  CHECK(r10 >= r5 - 0.01);
  CHECK(r20 >= r10 - 0.01);
}

TEST_CASE("the adaptive objective attacks the center model at least as well as the standard one") {
  const TrainedPair& tp = trained_models();
  Dataset eval = make_blobs(10, 32, 30, 0.08, 31);  // 300 examples

  auto success_rate = [&](AttackObjective objective) {
    AttackConfig cfg;
    cfg.family = AttackFamily::Pgd;
    cfg.objective = objective;
    cfg.epsilon = 16.0 / 255.0;
    cfg.step_size = 4.0 / 255.0;
    cfg.steps = 10;
    RobustnessReport rep = evaluate_robustness(tp.mmc.model, *tp.mmc.head, eval, cfg);
    return 1.0 - rep.adversarial_accuracy;
  };
  CHECK(success_rate(AttackObjective::AdaUn1) >= success_rate(AttackObjective::Standard));
}

TEST_CASE("attack configuration validation") {
  AttackConfig cfg;
  cfg.epsilon = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.epsilon = 0.1;
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.steps = 10;
  cfg.mode = AttackMode::Targeted;
  cfg.objective = AttackObjective::AdaUn1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.mode = AttackMode::Untargeted;
  cfg.objective = AttackObjective::AdaTar2;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.objective = AttackObjective::Standard;
  cfg.family = AttackFamily::Mim;
  cfg.mode = AttackMode::Targeted;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
