#include <doctest.h>

#include <cmath>
#include <random>

#include "xscene/core/gradcheck.hpp"
#include "xscene/core/ops.hpp"
#include "xscene/core/optim.hpp"
#include "xscene/core/primitive_checks.hpp"

using namespace xscene;

namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed, float lo = -1.f, float hi = 1.f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(lo, hi);
  Tensor<float> t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace

TEST_CASE("tensor rejects a shape that does not match its storage") {
  CHECK_THROWS_AS(Tensor<float>(Shape{10, 10, 4}, std::vector<float>(399)), ShapeError);
  Tensor<float> ok(Shape{2, 3}, std::vector<float>(6, 1.f));
  CHECK(ok.size() == 6);
  CHECK_THROWS_AS(ok.reshaped({4, 2}), ShapeError);
}

TEST_CASE("pointwise primitive values") {
  auto x = Var<float>::constant(Tensor<float>(Shape{3}, {0.f, -1.f, 2.f}));
  auto g = ops::gelu(x);
  CHECK(g.value()[0] == 0.f);
  auto l = ops::leaky_relu(x);
  CHECK(l.value()[1] == doctest::Approx(-0.01f));
  CHECK(l.value()[2] == 2.f);

  for (float c : {-50.f, 0.f, 3.5f, 80.f}) {
    auto s = ops::softmax(Var<float>::constant(Tensor<float>(Shape{1, 4}, c)));
    for (float p : s.value().data()) CHECK(p == doctest::Approx(0.25f).epsilon(1e-7));
  }
}

TEST_CASE("softmax rows are non-negative and sum to one") {
  auto x = Var<float>::constant(random_tensor({64, 7}, 3, -20.f, 20.f));
  auto p = ops::softmax(x);
  for (std::size_t i = 0; i < 64; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 7; ++j) {
      CHECK(p.value()[i * 7 + j] >= 0.f);
      s += p.value()[i * 7 + j];
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("training-mode batch norm standardises each channel") {
  Tensor<float> xin = random_tensor({8, 3, 5, 5}, 11, 2.f, 9.f);
  auto x = Var<float>::constant(xin);
  auto gamma = Var<float>::constant(Tensor<float>(Shape{3}, 1.f));
  auto beta = Var<float>::constant(Tensor<float>(Shape{3}, 0.f));
  BatchNormStats<float> stats(3);
  auto y = ops::batch_norm2d(x, gamma, beta, stats, true);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (std::size_t n = 0; n < 8; ++n)
      for (std::size_t p = 0; p < 25; ++p) m += y.value()[(n * 3 + c) * 25 + p];
    m /= 200;
    for (std::size_t n = 0; n < 8; ++n)
      for (std::size_t p = 0; p < 25; ++p) v += std::pow(y.value()[(n * 3 + c) * 25 + p] - m, 2);
    v /= 200;
    CHECK(std::abs(m) < 1e-5);
    CHECK(std::abs(v - 1.0) < 1e-4);
  }
  // running statistics moved 10% of the way toward the batch statistics
  CHECK(stats.running_mean[0] > 0.3f);
  CHECK(stats.running_mean[0] < 0.7f);
}

TEST_CASE("shape mismatches and non-finite values are errors") {
  auto a = Var<float>::constant(Tensor<float>(Shape{2, 3}));
  auto b = Var<float>::constant(Tensor<float>(Shape{3, 2}));
  CHECK_THROWS_AS(ops::add(a, b), ShapeError);
  CHECK_THROWS_AS(ops::affine(a, b, Var<float>::constant(Tensor<float>(Shape{3}))), ShapeError);
  CHECK_THROWS_AS(ops::center_pixel(Var<float>::constant(Tensor<float>(Shape{1, 2, 4, 4}))), ShapeError);
  CHECK_THROWS_AS(ops::log(Var<float>::constant(Tensor<float>(Shape{2}, 0.f))), NumericError);
  CHECK_THROWS_AS(Var<float>::leaf(Tensor<float>(Shape{1}, NAN), true), NumericError);
}

TEST_CASE("reused subexpressions accumulate gradients") {
  auto x = Var<double>::leaf(Tensor<double>(Shape{3}, {1.0, -2.0, 0.5}), true);
  backward(ops::sum(ops::mul(x, x)));
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == -4.0);
  CHECK(x.grad()[2] == 1.0);
}

TEST_CASE("forward passes are bitwise reproducible") {
  auto x = Var<float>::constant(random_tensor({4, 6, 5, 5}, 1));
  auto w = Var<float>::constant(random_tensor({8, 6, 3, 3}, 2));
  auto b = Var<float>::constant(random_tensor({8}, 3));
  auto y1 = ops::conv3x3(x, w, b);
  auto y2 = ops::conv3x3(x, w, b);
  CHECK(bitwise_equal(y1.value(), y2.value()));
}

TEST_CASE("learning-rate schedule") {
  CHECK(lr_schedule(0.0, 0.01, 10, 0.75) == 0.01);
  const long double expected = 0.01L / std::pow(11.0L, 0.75L);
  CHECK(std::abs(lr_schedule(1.0, 0.01, 10, 0.75) - static_cast<double>(expected)) < 1e-15);
  CHECK(std::abs(lr_schedule(1.0, 0.01, 10, 0.75) - 1.6556e-3) < 1e-7);
  for (double w : {0.0, 0.3, 1.0}) CHECK(lr_schedule(w, 0.02, 10, 0.0) == 0.02);

  double prev = INFINITY;
  for (int i = 0; i <= 1000; ++i) {
    const double lr = lr_schedule(i / 1000.0, 0.01, 10, 0.75);
    CHECK(lr <= prev);
    prev = lr;
  }
}

TEST_CASE("sgd with momentum") {
  SUBCASE("zero gradient and zero decay leaves values unchanged") {
    Parameter<float> p("w", random_tensor({3, 3}, 5));
    const Tensor<float> before = p.value();
    Parameter<float>* ps[] = {&p};
    sgd_momentum_step<float>(ps, 0.1, {0.9, 0.0});
    CHECK(bitwise_equal(before, p.value()));
  }
  SUBCASE("two hand-applied steps on a scalar") {
    Parameter<double> p("theta", Tensor<double>(Shape{1}, 1.0));
    Parameter<double>* ps[] = {&p};
    for (int step = 0; step < 2; ++step) {
      p.zero_grad();
      backward(ops::sum(p.var));  // dL/dtheta = 1
      sgd_momentum_step<double>(ps, 0.1, {0.9, 0.0});
      if (step == 0) {
        CHECK(p.value()[0] == doctest::Approx(0.9).epsilon(1e-15));
        CHECK(p.momentum[0] == doctest::Approx(1.0).epsilon(1e-15));
      } else {
        CHECK(p.value()[0] == doctest::Approx(0.71).epsilon(1e-15));
        CHECK(p.momentum[0] == doctest::Approx(1.9).epsilon(1e-15));
      }
    }
  }
  SUBCASE("lr = 0 keeps values but still updates buffers") {
    Parameter<double> p("w", Tensor<double>(Shape{2}, {0.5, -1.0}));
    Parameter<double>* ps[] = {&p};
    backward(ops::sum(p.var));
    sgd_momentum_step<double>(ps, 0.0, {0.9, 0.1});
    CHECK(p.value()[0] == 0.5);
    CHECK(p.value()[1] == -1.0);
    CHECK(p.momentum[0] == doctest::Approx(1.0 + 0.1 * 0.5));
    CHECK(p.momentum[1] == doctest::Approx(1.0 - 0.1));
  }
  SUBCASE("non-finite gradient aborts the whole step") {
    Parameter<double> good("good", Tensor<double>(Shape{1}, 1.0));
    Parameter<double> bad("bad", Tensor<double>(Shape{1}, 1.0));
    backward(ops::sum(good.var));
    backward(ops::sum(bad.var));
    bad.var.node()->grad[0] = NAN;
    Parameter<double>* ps[] = {&good, &bad};
    try {
      sgd_momentum_step<double>(ps, 0.1, {});
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("'bad'") != std::string::npos);
    }
    CHECK(good.value()[0] == 1.0);
    CHECK(good.momentum[0] == 0.0);
  }
}

TEST_CASE("gradient check of an affine layer is near exact") {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> nd;
  auto rnd = [&](Shape s) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.data()) v = nd(rng);
    return t;
  };
  auto x = Var<double>::leaf(rnd({4, 3}), true);
  auto w = Var<double>::leaf(rnd({5, 3}), true);
  auto b = Var<double>::leaf(rnd({5}), true);
  auto r = Var<double>::constant(rnd({4, 5}));
  auto report = grad_check("affine", [&] { return ops::sum(ops::mul(ops::affine(x, w, b), r)); },
                           {{"x", x}, {"weight", w}, {"bias", b}});
  CHECK(report.passed);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("every primitive passes finite differences on 20 seeds") {
  for (OpKind op : kAllOps) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto report = check_primitive(op, seed);
      INFO(op_name(op), " seed ", seed, ": ", report.failure);
      CHECK(report.passed);
      CHECK(report.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("grad_check flags a non-deterministic subgraph") {
  auto x = Var<double>::leaf(Tensor<double>(Shape{2}, 1.0), true);
  int calls = 0;
  auto report = grad_check("drifting", [&] { return ops::scale(ops::sum(x), 1.0 + 1e-3 * ++calls); }, {{"x", x}});
  CHECK_FALSE(report.passed);
  CHECK_FALSE(report.deterministic);
  CHECK(report.failure.find("non-deterministic") != std::string::npos);
}

TEST_CASE("grad_check catches a sign error in a gradient rule") {
  auto faulty_gelu = [](const Var<double>& x) {
    Tensor<double> out = x.value();
    for (auto& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    return make_op<double>("gelu", std::move(out), {x}, [](Node<double>& self) {
      auto* g = grad_slot(self, 0);
      const auto& xv = self.parents[0]->value;
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double v = xv[i];
        const double d = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0))) + v * std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
        (*g)[i] -= self.grad[i] * d;
      }
    });
  };
  auto x = Var<double>::leaf(Tensor<double>(Shape{4}, {-1.0, 0.3, 0.8, 2.0}), true);
  auto report = grad_check("gelu", [&] { return ops::sum(faulty_gelu(x)); }, {{"x", x}});
  CHECK_FALSE(report.passed);
  CHECK(report.subgraph == "gelu");
}
