#include <benchmark/benchmark.h>

#include "mmclab/attacks.hpp"
#include "mmclab/density.hpp"
#include "mmclab/trainer.hpp"

using namespace mmc;

static void BM_GenerateCenters(benchmark::State& state) {
  for (auto _ : state) {
    CenterSet cs = generate_mm_centers(10.0, static_cast<int>(state.range(0)), 10);
    benchmark::DoNotOptimize(cs.centers.data());
  }
}
BENCHMARK(BM_GenerateCenters)->Arg(16)->Arg(64)->Arg(256);

static void BM_ForwardBatch(benchmark::State& state) {
  Mlp model({32, 64, 10}, 1);
  Rng rng(2);
  Tensor x({static_cast<std::size_t>(state.range(0)), 32});
  for (double& v : x.values()) v = rng.uniform01();
  for (auto _ : state) {
    Tensor z = model.forward(x);
    benchmark::DoNotOptimize(z.data());
  }
}
BENCHMARK(BM_ForwardBatch)->Arg(1)->Arg(64)->Arg(512);

static void BM_ForwardBackward(benchmark::State& state) {
  Mlp model({32, 64, 10}, 1);
  Rng rng(2);
  Tensor x({64, 32});
  for (double& v : x.values()) v = rng.uniform01();
  Tensor upstream({64, 10});
  for (double& v : upstream.values()) v = rng.normal();
  for (auto _ : state) {
    Mlp::Workspace ws;
    model.forward(x, ws);
    model.zero_grad();
    Tensor gx = model.backward(ws, upstream);
    benchmark::DoNotOptimize(gx.data());
  }
}
BENCHMARK(BM_ForwardBackward);

static void BM_CenterLossGrad(benchmark::State& state) {
  CenterSet cs = generate_mm_centers(10.0, 10, 10);
  Rng rng(3);
  std::vector<double> z(10);
  for (double& v : z) v = rng.normal();
  for (auto _ : state) {
    ScalarGrad sg = mmc_loss(z, 4, cs);
    benchmark::DoNotOptimize(sg.value);
  }
}
BENCHMARK(BM_CenterLossGrad);

static void BM_QuadraticSoftmaxGrad(benchmark::State& state) {
  Rng rng(4);
  QuadraticLogitParams q;
  q.mus = Tensor({10, 10});
  for (double& v : q.mus.values()) v = rng.normal();
  q.sigmas.assign(10, 1.0);
  q.sigmas[3] = 2.0;
  q.biases.assign(10, 0.0);
  std::vector<double> z(10);
  for (double& v : z) v = rng.normal();
  for (auto _ : state) {
    ScalarGrad sg = gsce_loss(z, 4, q);
    benchmark::DoNotOptimize(sg.value);
  }
}
BENCHMARK(BM_QuadraticSoftmaxGrad);

static void BM_PgdTenSteps(benchmark::State& state) {
  Mlp model({32, 64, 10}, 1);
  LossSpec spec;
  spec.kind = LossKind::Mmc;
  auto head = make_loss_head(spec, 10, 10, 2);
  Rng rng(5);
  std::vector<double> x(32);
  for (double& v : x) v = rng.uniform01();
  AttackConfig cfg;
  cfg.objective = AttackObjective::AdaUn1;
  cfg.epsilon = 8.0 / 255.0;
  cfg.step_size = 2.0 / 255.0;
  cfg.steps = 10;
  for (auto _ : state) {
    AdvResult r = pgd(model, *head, x, 3, -1, cfg);
    benchmark::DoNotOptimize(r.x_adv.data());
  }
}
BENCHMARK(BM_PgdTenSteps);

static void BM_EmpiricalDensity(benchmark::State& state) {
  CenterSet cs = generate_mm_centers(1.0, 3, 2);
  Rng rng(6);
  std::size_t n = static_cast<std::size_t>(state.range(0));
  Tensor feats({n, 3});
  for (double& v : feats.values()) v = rng.normal();
  std::vector<int> labels(n, 0);
  auto loss_fn = [&](std::span<const double> z, int y) { return mmc_loss(z, y, cs).value; };
  double vol = mmc_shell_volume(1.0, 0.05, 3);
  for (auto _ : state) {
    EmpiricalDensity e = empirical_density(feats, labels, loss_fn, 1.0, 0.05, vol);
    benchmark::DoNotOptimize(e.density);
  }
}
BENCHMARK(BM_EmpiricalDensity)->Arg(1000)->Arg(100000);

BENCHMARK_MAIN();
