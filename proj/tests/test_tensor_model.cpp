#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "mmclab/centers.hpp"
#include "mmclab/losses.hpp"
#include "mmclab/model.hpp"
#include "support/oracles.hpp"

using namespace mmc;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

}  // namespace

TEST_CASE("per-example rng streams are stable and independent") {
  Rng a = Rng::for_example(42, 7);
  Rng b = Rng::for_example(42, 7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  // neighbouring indices and seeds give unrelated streams
  Rng c = Rng::for_example(42, 8);
  Rng d = Rng::for_example(43, 7);
  int coincidences = 0;
  Rng a2 = Rng::for_example(42, 7);
  for (int i = 0; i < 64; ++i) {
    std::uint64_t ref = a2.next_u64();
    if (ref == c.next_u64()) ++coincidences;
    if (ref == d.next_u64()) ++coincidences;
  }
  CHECK(coincidences == 0);

  // distribution transforms stay inside their contracts
  Rng r(1);
  for (int i = 0; i < 1000; ++i) {
    double u = r.uniform01();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    int k = r.uniform_int(7);
    CHECK(k >= 0);
    CHECK(k < 7);
    int s = r.rademacher();
    CHECK((s == 1 || s == -1));
  }
}

TEST_CASE("tensor shape bookkeeping") {
  Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t(1, 2) == 6);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0}), std::invalid_argument);
  CHECK(log_sum_exp(std::vector<double>{1000.0, 0.0}) == doctest::Approx(1000.0));
}

TEST_CASE("zero-weight model maps everything to zero features") {
  Mlp m({4, 3}, 7);
  for (Tensor* p : m.parameters()) p->fill(0.0);
  Rng rng(3);
  Tensor x = random_tensor({5, 4}, rng);
  Tensor z = m.forward(x);
  for (double v : z.values()) CHECK(v == 0.0);
}

TEST_CASE("identity-initialized affine layer is the identity map") {
  Mlp m({3, 3}, 7);
  auto params = m.parameters();
  params[0]->fill(0.0);
  for (std::size_t i = 0; i < 3; ++i) (*params[0])(i, i) = 1.0;
  params[1]->fill(0.0);
  Rng rng(11);
  Tensor x = random_tensor({4, 3}, rng);
  Tensor z = m.forward(x);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(z.values()[i] == x.values()[i]);
}

TEST_CASE("forward matches an independent naive re-implementation") {
  Rng rng(99);
  Mlp m({6, 10, 4}, 42);
  Tensor x = random_tensor({8, 6}, rng);
  Tensor z = m.forward(x);
  for (std::size_t r = 0; r < 8; ++r) {
    std::vector<double> naive = testing::naive_forward(m, x.row(r));
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(z(r, j) == doctest::Approx(naive[j]).epsilon(1e-12));
  }
}

TEST_CASE("forward rejects bad inputs and backward requires a forward pass") {
  Mlp m({4, 3}, 0);
  Rng rng(1);
  CHECK_THROWS_AS(m.forward(random_tensor({2, 5}, rng)), std::invalid_argument);
  Tensor bad = random_tensor({1, 4}, rng);
  bad.values()[0] = std::nan("");
  CHECK_THROWS_AS(m.forward(bad), std::invalid_argument);

  Mlp::Workspace ws;
  Tensor upstream({1, 3});
  CHECK_THROWS_AS(m.backward(ws, upstream), std::logic_error);
}

TEST_CASE("zero upstream produces zero gradients") {
  Mlp m({4, 5, 3}, 21);
  Rng rng(2);
  Tensor x = random_tensor({3, 4}, rng);
  Mlp::Workspace ws;
  m.forward(x, ws);
  m.zero_grad();
  Tensor gx = m.backward(ws, Tensor({3, 3}));
  for (double v : gx.values()) CHECK(v == 0.0);
  for (Tensor* g : m.gradients())
    for (double v : g->values()) CHECK(v == 0.0);
}

TEST_CASE("single affine layer: input gradient of z.c is W^T c") {
  Mlp m({4, 3}, 5);
  Rng rng(8);
  Tensor x = random_tensor({1, 4}, rng);
  Tensor c = random_tensor({1, 3}, rng);
  Tensor gx = m.input_gradient(x, c);
  for (std::size_t j = 0; j < 4; ++j) {
    double expect = 0.0;
    for (std::size_t o = 0; o < 3; ++o) expect += m.weight(0)(o, j) * c(0, o);
    CHECK(gx(0, j) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("two-layer model passes central finite differences on random coordinates") {
  Mlp m({5, 8, 3}, 31);
  Rng rng(17);
  Tensor x = random_tensor({2, 5}, rng);
  Tensor head = random_tensor({2, 3}, rng);  // fixed linear head sum(z * head)

  // input gradient
  auto f_input = [&](const Tensor& q) {
    Tensor z = m.forward(q);
    double val = 0.0;
    for (std::size_t i = 0; i < z.numel(); ++i) val += z.values()[i] * head.values()[i];
    ValueGrad out{val, m.input_gradient(q, head)};
    return out;
  };
  CHECK(gradient_check(f_input, x, 1e-5) < 1e-6);

  // parameter gradients, probed per tensor through the public stores
  auto params = m.parameters();
  auto grads = m.gradients();
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto f_param = [&](const Tensor& q) {
      Tensor saved = *params[pi];
      *params[pi] = q;
      Mlp::Workspace ws;
      Tensor z = m.forward(x, ws);
      double val = 0.0;
      for (std::size_t i = 0; i < z.numel(); ++i) val += z.values()[i] * head.values()[i];
      m.zero_grad();
      m.backward(ws, head);
      ValueGrad out{val, *grads[pi]};
      *params[pi] = saved;
      return out;
    };
    CAPTURE(pi);
    CHECK(gradient_check(f_param, *params[pi], 1e-5) < 1e-6);
  }
}

TEST_CASE("gradient_check is exact for a quadratic and tight for losses") {
  Rng rng(23);
  Tensor x = random_tensor({6}, rng);
  auto quad = [](const Tensor& q) {
    Tensor g = q;
    double val = 0.5 * squared_norm(q.flat());
    return ValueGrad{val, g};
  };
  CHECK(gradient_check(quad, x, 1e-5) < 1e-8);

  CenterSet cs = generate_mm_centers(3.0, 6, 4);
  auto f_mmc = [&](const Tensor& q) {
    ScalarGrad sg = mmc_loss(q.flat(), 2, cs);
    return ValueGrad{sg.value, Tensor(q.shape(), sg.grad)};
  };
  CHECK(gradient_check(f_mmc, x, 1e-5) < 1e-6);

  Tensor logits = random_tensor({5}, rng);
  auto f_sce = [&](const Tensor& q) {
    ScalarGrad sg = sce_loss(q.flat(), 1);
    return ValueGrad{sg.value, Tensor(q.shape(), sg.grad)};
  };
  CHECK(gradient_check(f_sce, logits, 1e-5) < 1e-6);

  CHECK_THROWS_AS(gradient_check(quad, x, 0.0), std::invalid_argument);
  auto f_nan = [](const Tensor& q) { return ValueGrad{std::nan(""), q}; };
  CHECK_THROWS_AS(gradient_check(f_nan, x, 1e-5), std::invalid_argument);
}

TEST_CASE("forward is bit-deterministic for a fixed seed") {
  Mlp a({7, 9, 4}, 1234);
  Mlp b({7, 9, 4}, 1234);
  Rng rng(5);
  Tensor x = random_tensor({6, 7}, rng);
  Tensor za = a.forward(x);
  Tensor zb = b.forward(x);
  CHECK(std::memcmp(za.data(), zb.data(), za.numel() * sizeof(double)) == 0);
}

TEST_CASE("checkpoints round-trip through the binary format") {
  namespace fs = std::filesystem;
  Mlp m({5, 6, 3}, 77);
  fs::path path = fs::temp_directory_path() / "mmclab_test_model.bin";
  m.save(path);
  Mlp back = Mlp::load(path);
  CHECK(back.layer_sizes() == m.layer_sizes());
  auto pa = m.parameters();
  auto pb = back.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK(std::memcmp(pa[i]->data(), pb[i]->data(), pa[i]->numel() * sizeof(double)) == 0);
  fs::remove(path);

  CHECK_THROWS_AS(Mlp::load(fs::temp_directory_path() / "mmclab_no_such_file.bin"), std::runtime_error);
}
