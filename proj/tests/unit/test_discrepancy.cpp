#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "xscene/discrepancy/lmmd.hpp"

using namespace xscene;
using namespace xscene::disc;

namespace {

Tensor<double> randn(std::size_t n, std::size_t d, std::mt19937_64& rng, double shift = 0.0) {
  std::normal_distribution<double> dist(shift, 1.0);
  Tensor<double> t(Shape{n, d});
  for (auto& v : t.storage()) v = dist(rng);
  return t;
}

Tensor<double> random_probs(std::size_t n, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Tensor<double> t(Shape{n, c});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < c; ++k) s += t[i * c + k] = u(rng);
    for (std::size_t k = 0; k < c; ++k) t[i * c + k] /= s;
  }
  return t;
}

Tensor<double> random_onehot(std::size_t n, std::size_t c, std::mt19937_64& rng) {
  std::vector<int> labels(n);
  std::uniform_int_distribution<int> u(0, static_cast<int>(c) - 1);
  for (auto& l : labels) l = u(rng);
  return one_hot(labels, c);
}

double lmmd_value(const Tensor<double>& zs, const Tensor<double>& ys, const Tensor<double>& zt,
                  const Tensor<double>& pt, const KernelSpec& spec) {
  return lmmd(Var<double>::constant(zs), Var<double>::constant(zt), ys, pt, spec).value().item();
}

Tensor<double> permute_rows(const Tensor<double>& t, const std::vector<std::size_t>& perm) {
  const std::size_t d = t.dim(1);
  Tensor<double> out(t.shape());
  for (std::size_t i = 0; i < perm.size(); ++i) std::copy_n(t.ptr() + perm[i] * d, d, out.ptr() + i * d);
  return out;
}

}  // namespace

TEST_CASE("pairwise squared distances") {
  CHECK(pairwise_sq_dists(Tensor<double>(Shape{1, 2}, {1, 2}), Tensor<double>(Shape{1, 2}, {1, 2}))[0] == 0.0);
  CHECK(pairwise_sq_dists(Tensor<double>(Shape{1, 2}, {0, 0}), Tensor<double>(Shape{1, 2}, {3, 4}))[0] == 25.0);
  std::mt19937_64 rng(1);
  const Tensor<double> x = randn(5, 3, rng);
  const Tensor<double> d = pairwise_sq_dists(x, x);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(d[i * 5 + i] < 1e-10);
    for (std::size_t j = 0; j < 5; ++j) CHECK(d[i * 5 + j] == d[j * 5 + i]);
  }
  CHECK_THROWS_AS(pairwise_sq_dists(x, randn(2, 4, rng)), ShapeError);
}

TEST_CASE("gaussian kernel") {
  std::mt19937_64 rng(2);
  const Tensor<double> x = randn(4, 3, rng), y = randn(3, 3, rng);
  const Tensor<double> kxx = gaussian_kernel(x, x, KernelSpec{});
  for (std::size_t i = 0; i < 4; ++i) CHECK(kxx[i * 4 + i] == 1.0);
  const Tensor<double> kxy = gaussian_kernel(x, y, KernelSpec{});
  for (double v : kxy.storage()) {
    CHECK(v > 0.0);
    CHECK(v <= 1.0);
  }

  // three points vs two, single kernel with sigma^2 = 1
  const Tensor<double> a(Shape{3, 2}, {0, 0, 1, 0, 0, 2});
  const Tensor<double> b(Shape{2, 2}, {1, 1, -1, 0});
  const Tensor<double> k = gaussian_kernel(a, b, KernelSpec::fixed(1.0));
  const double expected[6] = {std::exp(-2.0), std::exp(-1.0), std::exp(-1.0), std::exp(-4.0), std::exp(-2.0),
                              std::exp(-5.0)};
  for (int i = 0; i < 6; ++i) CHECK(k[i] == doctest::Approx(expected[i]).epsilon(1e-15));

  CHECK(bandwidths(KernelSpec{}, 1.0) == std::vector<double>{0.25, 0.5, 1.0, 2.0, 4.0});
  CHECK(bandwidths(KernelSpec{4, 3.0, {}}, 9.0) == std::vector<double>{1.0, 3.0, 9.0, 27.0});
  CHECK_THROWS_AS(bandwidths(KernelSpec{0, 2.0, {}}, 1.0), ConfigError);
}

TEST_CASE("median bandwidth") {
  // distances between 0, 1, 3 on a line: 1, 9, 4 (each twice) -> median 4
  const Tensor<double> p(Shape{3, 1}, {0, 1, 3});
  CHECK(median_bandwidth(pairwise_sq_dists(p, p)) == 4.0);
  const Tensor<double> same(Shape{3, 2}, 0.0);
  CHECK(median_bandwidth(pairwise_sq_dists(same, same)) == 1.0);

  std::mt19937_64 rng(3);
  const Tensor<double> x = randn(7, 3, rng);
  std::vector<std::size_t> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const Tensor<double> xp = permute_rows(x, perm);
  CHECK(median_bandwidth(pairwise_sq_dists(x, x)) == median_bandwidth(pairwise_sq_dists(xp, xp)));
}

TEST_CASE("kernel matrices are positive semi-definite") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + trial % 9;
    const Tensor<double> x = randn(n, 3, rng);
    const Tensor<double> k = gaussian_kernel(x, x, KernelSpec{});
    Eigen::MatrixXd m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) m(i, j) = k[i * n + j];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    CHECK(es.eigenvalues().minCoeff() > -1e-8);
  }
}

TEST_CASE("biased MMD") {
  std::mt19937_64 rng(5);
  const Tensor<double> a = randn(6, 3, rng), b = randn(4, 3, rng, 1.0);
  CHECK(std::abs(mmd_biased(a, a, KernelSpec::fixed(1.0))) < 1e-10);
  CHECK(std::abs(mmd_biased(a, a, KernelSpec{})) < 1e-10);
  CHECK(std::abs(mmd_biased(a, b, KernelSpec{}) - mmd_biased(b, a, KernelSpec{})) < 1e-12);

  // 1-D: s = {0, 1}, t = {2, 4}, sigma^2 = 1
  const Tensor<double> s(Shape{2, 1}, {0, 1}), t(Shape{2, 1}, {2, 4});
  const double kss = (1 + std::exp(-1.0) + std::exp(-1.0) + 1) / 4;
  const double ktt = (1 + std::exp(-4.0) + std::exp(-4.0) + 1) / 4;
  const double kst = (std::exp(-4.0) + std::exp(-16.0) + std::exp(-1.0) + std::exp(-9.0)) / 4;
  CHECK(mmd_biased(s, t, KernelSpec::fixed(1.0)) == doctest::Approx(kss + ktt - 2 * kst).epsilon(1e-14));
  CHECK_THROWS_AS(mmd_biased(Tensor<double>(Shape{0, 1}), t, KernelSpec{}), ShapeError);
}

TEST_CASE("class weights") {
  const Tensor<double> all2 = one_hot(std::vector<int>{1, 1, 1, 1}, 3);
  const ClassWeights w = class_weights(all2);
  CHECK(w.valid == std::vector<bool>{false, true, false});
  for (std::size_t i = 0; i < 4; ++i) CHECK(w.w[i * 3 + 1] == 0.25);

  const ClassWeights p = class_weights(Tensor<double>(Shape{2, 2}, {0.7, 0.3, 0.5, 0.5}));
  CHECK(p.w[0] == doctest::Approx(0.7 / 1.2).epsilon(1e-15));
  CHECK(p.w[2] == doctest::Approx(0.5 / 1.2).epsilon(1e-15));
  CHECK(p.valid == std::vector<bool>{true, true});

  CHECK_THROWS_AS(class_weights(Tensor<double>(Shape{1, 2}, {-0.1, 1.1})), NumericError);

  std::mt19937_64 rng(6);
  const WeightMatrix m = lmmd_weights(random_onehot(20, 4, rng), random_probs(15, 4, rng));
  for (std::size_t c = 0; c < 4; ++c) {
    if (!m.valid_classes[c]) continue;
    double ss = 0, st = 0;
    for (std::size_t i = 0; i < 20; ++i) ss += m.w_s[i * 4 + c];
    for (std::size_t j = 0; j < 15; ++j) st += m.w_t[j * 4 + c];
    CHECK(ss == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(st == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("lmmd agrees with the triple-loop oracle") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> size(1, 8), classes(1, 4), dims(1, 5);
  std::uniform_real_distribution<double> sig(0.3, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t ns = size(rng), nt = size(rng), c = classes(rng), d = dims(rng);
    const Tensor<double> zs = randn(ns, d, rng), zt = randn(nt, d, rng, 0.5);
    const Tensor<double> ys = random_onehot(ns, c, rng), pt = random_probs(nt, c, rng);
    const KernelSpec fixed = KernelSpec::fixed(sig(rng), 1 + trial % 5);
    CHECK(std::abs(lmmd_value(zs, ys, zt, pt, fixed) - lmmd_oracle(zs, ys, zt, pt, fixed)) < 1e-10);
    CHECK(std::abs(lmmd_value(zs, ys, zt, pt, KernelSpec{}) - lmmd_oracle(zs, ys, zt, pt, KernelSpec{})) < 1e-10);
  }
}

TEST_CASE("lmmd reduces to MMD for one class") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor<double> zs = randn(5, 3, rng), zt = randn(7, 3, rng, 1.0);
    const Tensor<double> ys(Shape{5, 1}, 1.0), pt(Shape{7, 1}, 1.0);
    for (const KernelSpec& spec : {KernelSpec::fixed(1.5), KernelSpec{}}) {
      CHECK(std::abs(lmmd_value(zs, ys, zt, pt, spec) - mmd_biased(zs, zt, spec)) < 1e-10);
      CHECK(std::abs(lmmd_oracle(zs, ys, zt, pt, spec) - mmd_biased(zs, zt, spec)) < 1e-10);
    }
  }
}

TEST_CASE("lmmd properties") {
  std::mt19937_64 rng(9);
  SUBCASE("matched copies give zero") {
    const Tensor<double> zs = randn(8, 4, rng);
    const Tensor<double> ys = random_onehot(8, 3, rng);
    CHECK(std::abs(lmmd_value(zs, ys, zs, ys, KernelSpec{})) < 1e-8);
  }
  SUBCASE("zero features give zero") {
    const Tensor<double> z(Shape{4, 3}, 0.0);
    CHECK(std::abs(lmmd_value(z, random_onehot(4, 2, rng), z, random_probs(4, 2, rng), KernelSpec{})) < 1e-15);
    CHECK(std::abs(lmmd_oracle(z, random_onehot(4, 2, rng), z, random_probs(4, 2, rng), KernelSpec{})) < 1e-15);
  }
  SUBCASE("non-negative") {
    for (int trial = 0; trial < 100; ++trial) {
      const Tensor<double> zs = randn(6, 3, rng), zt = randn(5, 3, rng, 0.3);
      CHECK(lmmd_value(zs, random_onehot(6, 3, rng), zt, random_probs(5, 3, rng), KernelSpec{}) >= -1e-8);
    }
  }
  SUBCASE("permutation invariance") {
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor<double> zs = randn(7, 3, rng), zt = randn(6, 3, rng, 0.4);
      const Tensor<double> ys = random_onehot(7, 3, rng), pt = random_probs(6, 3, rng);
      std::vector<std::size_t> ps(7), pq(6);
      std::iota(ps.begin(), ps.end(), 0);
      std::iota(pq.begin(), pq.end(), 0);
      std::shuffle(ps.begin(), ps.end(), rng);
      std::shuffle(pq.begin(), pq.end(), rng);
      const double base = lmmd_value(zs, ys, zt, pt, KernelSpec{});
      const double perm = lmmd_value(permute_rows(zs, ps), permute_rows(ys, ps), permute_rows(zt, pq),
                                     permute_rows(pt, pq), KernelSpec{});
      CHECK(std::abs(base - perm) < 1e-10);
    }
  }
  SUBCASE("no shared class gives zero") {
    LmmdInfo info;
    const Tensor<double> ys = one_hot(std::vector<int>{0, 0}, 2);
    const Tensor<double> pt(Shape{2, 2}, {0.0, 1.0, 0.0, 1.0});
    const Var<double> l =
        lmmd(Var<double>::leaf(randn(2, 3, rng), true), Var<double>::leaf(randn(2, 3, rng), true), ys, pt, {}, &info);
    CHECK(l.value().item() == 0.0);
    CHECK(info.valid_classes == 0);
  }
  SUBCASE("two source and two target points, one class") {
    const Tensor<double> zs(Shape{2, 1}, {0, 1}), zt(Shape{2, 1}, {2, 4});
    const Tensor<double> ys(Shape{2, 1}, 1.0), pt(Shape{2, 1}, 1.0);
    CHECK(std::abs(lmmd_value(zs, ys, zt, pt, KernelSpec::fixed(1.0)) -
                   lmmd_oracle(zs, ys, zt, pt, KernelSpec::fixed(1.0))) < 1e-10);
  }
}

TEST_CASE("lmmd gradients") {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    const GradCheckReport r = check_lmmd(seed);
    INFO("seed ", seed, " err ", r.max_rel_error, " ", r.failure);
    CHECK(r.passed);
  }
  std::mt19937_64 rng(10);
  const Var<float> zs = Var<float>::leaf(randn(4, 3, rng).cast<float>(), true);
  const Var<float> zt = Var<float>::leaf(randn(5, 3, rng).cast<float>(), true);
  const Var<float> l = lmmd(zs, zt, random_onehot(4, 2, rng), random_probs(5, 2, rng), KernelSpec{});
  backward(l);
  CHECK(zs.has_grad());
  CHECK(zt.has_grad());
  CHECK(zs.grad().all_finite());
}
