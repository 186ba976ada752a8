#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "xscene/model/checks.hpp"
#include "xscene/model/network.hpp"

using namespace xscene;
using namespace xscene::model;
namespace fs = std::filesystem;

namespace {

constexpr CfaacVariant kVariants[] = {CfaacVariant::A, CfaacVariant::B, CfaacVariant::C, CfaacVariant::D};

Tensor<double> randn(Shape shape, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sd);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.storage()) v = dist(rng);
  return t;
}

CfaacParams<double> cfaac_params(std::size_t c, std::uint64_t seed) {
  return CfaacParams<double>{
      Parameter<double>("kw", randn(Shape{c, c}, seed + 1)),  Parameter<double>("kb", randn(Shape{c}, seed + 2)),
      Parameter<double>("vw", randn(Shape{c, c}, seed + 3)),  Parameter<double>("vb", randn(Shape{c}, seed + 4)),
      Parameter<double>("qw", randn(Shape{c, c}, seed + 5)),  Parameter<double>("qb", randn(Shape{c}, seed + 6)),
      Parameter<double>("dw", randn(Shape{c, 1, 3, 3}, seed + 7)),
  };
}

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

NetworkConfig small_config(std::size_t bands = 6, std::size_t ps = 5, std::size_t classes = 3) {
  NetworkConfig c;
  c.input_bands = bands;
  c.patch_size = ps;
  c.num_classes = classes;
  return c;
}

Tensor<float> random_patches(std::size_t n, std::size_t ps, std::size_t b, std::uint64_t seed) {
  return randn(Shape{n, ps, ps, b}, seed).cast<float>();
}

}  // namespace

TEST_CASE("attention block with zero key, value and query maps is the identity") {
  for (auto v : kVariants) {
    auto p = cfaac_params(4, 10);
    for (auto* q : {&p.key_w, &p.key_b, &p.value_w, &p.value_b, &p.query_w, &p.query_b}) q->mutable_value().fill(0.0);
    const Var<double> f = Var<double>::constant(randn(Shape{3, 4, 5, 5}, 99));
    CfaacConfig cfg;
    cfg.variant = v;
    CHECK(bitwise_equal(cfaac_forward(f, p, cfg).value(), f.value()));
  }
}

TEST_CASE("attention block hand example on a 3x3 single-channel input of ones") {
  auto one = [](Shape s) { return Tensor<double>(std::move(s), 1.0); };
  Tensor<double> delta(Shape{1, 1, 3, 3}, 0.0);
  delta[4] = 1.0;
  CfaacParams<double> p{
      Parameter<double>("kw", one(Shape{1, 1})), Parameter<double>("kb", Tensor<double>(Shape{1}, 0.0)),
      Parameter<double>("vw", one(Shape{1, 1})), Parameter<double>("vb", Tensor<double>(Shape{1}, 0.0)),
      Parameter<double>("qw", one(Shape{1, 1})), Parameter<double>("qb", Tensor<double>(Shape{1}, 0.0)),
      Parameter<double>("dw", delta),
  };
  const Var<double> f = Var<double>::constant(one(Shape{1, 1, 3, 3}));
  const double g = gelu_ref(1.0);
  // key k, value v and query 1 give score k / sqrt(3); the gate times the centred delta conv (1) plus the residual
  const struct {
    CfaacVariant v;
    double expected;
  } cases[] = {
      {CfaacVariant::A, 1.0 / std::sqrt(3.0) + 1.0},
      {CfaacVariant::B, g / std::sqrt(3.0) + 1.0},
      {CfaacVariant::C, g / std::sqrt(3.0) + 1.0},
      {CfaacVariant::D, g * g / std::sqrt(3.0) + 1.0},
  };
  for (const auto& c : cases) {
    CfaacConfig cfg;
    cfg.variant = c.v;
    const Tensor<double> out = cfaac_forward(f, p, cfg).value();
    for (double v : out.storage()) CHECK(v == doctest::Approx(c.expected).epsilon(1e-12));
  }
  CHECK(g * g / std::sqrt(3.0) + 1.0 == doctest::Approx(1.4086837).epsilon(1e-7));

  CfaacConfig by_channels;
  by_channels.scale_divisor = ScaleDivisor::SqrtChannels;
  CHECK(cfaac_forward(f, p, by_channels).value()[0] == doctest::Approx(g * g + 1.0).epsilon(1e-12));
}

TEST_CASE("attention block preserves shape") {
  for (auto [ps, w] : {std::pair{3, 4}, std::pair{5, 8}, std::pair{7, 16}}) {
    auto p = cfaac_params(w, 3);
    const Var<double> f = Var<double>::constant(randn(Shape{2, std::size_t(w), std::size_t(ps), std::size_t(ps)}, 4));
    CHECK(cfaac_forward(f, p, {}).shape() == f.shape());
  }
  auto p = cfaac_params(4, 3);
  CHECK_THROWS_AS(cfaac_forward(Var<double>::constant(randn(Shape{1, 5, 3, 3}, 1)), p, {}), ShapeError);
}

TEST_CASE("initialisation") {
  const NetworkConfig cfg = small_config(16, 5, 5);
  DualHeadNet<float> a(cfg, 7), b(cfg, 7), c(cfg, 8);
  CHECK(same_state(a, b));
  CHECK_FALSE(same_state(a, c));

  for (auto* p : a.parameters()) {
    if (p->name.find(".bn.weight") != std::string::npos) {
      for (float v : p->value().storage()) CHECK(v == 1.0f);
    }
    if (p->name.ends_with(".bias")) {
      for (float v : p->value().storage()) CHECK(v == 0.0f);
    }
  }

  const Tensor<float>& w = a.parameter("unit2.conv.weight").value();  // 64 x 32 x 3 x 3
  REQUIRE(w.size() >= 10000);
  double mean = 0, sq = 0;
  for (float v : w.storage()) mean += v;
  mean /= static_cast<double>(w.size());
  for (float v : w.storage()) sq += (v - mean) * (v - mean);
  const double var = sq / static_cast<double>(w.size() - 1);
  const double expected = 2.0 / ((1.0 + 0.01 * 0.01) * 32 * 9);
  CHECK(std::abs(var / expected - 1.0) < 0.1);
}

TEST_CASE("config validation") {
  NetworkConfig cfg = small_config();
  cfg.patch_size = 4;
  CHECK_THROWS_AS(DualHeadNet<float>(cfg, 0), ConfigError);
  cfg = small_config();
  cfg.input_bands = 0;
  CHECK_THROWS_AS(DualHeadNet<float>(cfg, 0), ConfigError);
  CHECK(parse_variant("c") == CfaacVariant::C);
  CHECK_THROWS_AS(parse_variant("e"), ConfigError);
}

TEST_CASE("feature and head shapes") {
  for (std::size_t ps : {3u, 5u, 9u}) {
    DualHeadNet<float> net(small_config(6, ps, 4), 1);
    const Var<float> x = Var<float>::constant(to_nchw<float>(random_patches(3, ps, 6, ps)));
    const Var<float> z = net.features(x, true);
    CHECK(z.shape() == Shape{3, 32});
    const Tensor<float> p = net.probs(z, Head::Cls).value();
    CHECK(p.shape() == Shape{3, 4});
    for (std::size_t i = 0; i < 3; ++i) {
      double s = 0;
      for (std::size_t c = 0; c < 4; ++c) s += p[i * 4 + c];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
  NetworkConfig flat = small_config(6, 5, 4);
  flat.head = HeadKind::Flatten;
  DualHeadNet<float> net(flat, 1);
  const Var<float> x = Var<float>::constant(to_nchw<float>(random_patches(2, 5, 6, 1)));
  CHECK(net.features(x, false).shape() == Shape{2, 32 * 25});

  DualHeadNet<float> wrong(small_config(5, 5, 4), 1);
  CHECK_THROWS_AS(wrong.features(x, false), ShapeError);
}

TEST_CASE("heads") {
  DualHeadNet<double> net(small_config(), 3);
  const Var<double> z = Var<double>::constant(randn(Shape{5, 32}, 4));
  const Tensor<double> pc = net.probs(z, Head::Cls).value();
  const Tensor<double> pp = net.probs(z, Head::Psd).value();
  CHECK_FALSE(pc == pp);

  for (auto* p : net.head_parameters(Head::Cls)) p->mutable_value().fill(0.0);
  const Tensor<double> uniform = net.probs(z, Head::Cls).value();
  for (double v : uniform.storage()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  CHECK(net.head_parameters(Head::Cls)[0]->value().ptr() != net.head_parameters(Head::Psd)[0]->value().ptr());
  CHECK_THROWS_AS(net.logits(Var<double>::constant(randn(Shape{5, 31}, 1)), Head::Cls), ShapeError);
}

TEST_CASE("per-sample determinism and eval repeatability") {
  DualHeadNet<float> net(small_config(6, 5, 3), 2);
  Tensor<float> patches = random_patches(4, 5, 6, 5);
  std::copy_n(patches.ptr(), 150, patches.ptr() + 150);  // sample 1 := sample 0
  const Var<float> x = Var<float>::constant(to_nchw<float>(patches));
  const Tensor<float> z = net.features(x, true).value();
  CHECK(std::equal(z.ptr(), z.ptr() + 32, z.ptr() + 32));

  const Tensor<float> e1 = net.features(x, false).value();
  const Tensor<float> e2 = net.features(x, false).value();
  CHECK(bitwise_equal(e1, e2));
}

TEST_CASE("pseudo head does not influence inference") {
  DualHeadNet<float> net(small_config(6, 5, 3), 11);
  const Tensor<float> patches = random_patches(8, 5, 6, 12);
  const Tensor<float> before = net.predict_probs(patches);
  const auto labels = net.predict(patches);
  for (auto* p : net.head_parameters(Head::Psd)) {
    for (auto& v : p->mutable_value().storage()) v = v * 3.0f + 0.5f;
  }
  CHECK(bitwise_equal(net.predict_probs(patches), before));
  CHECK(net.predict(patches) == labels);
}

TEST_CASE("inference builds no graph") {
  DualHeadNet<float> net(small_config(6, 5, 3), 11);
  {
    NoGradGuard guard;
    const Var<float> z = net.features(Var<float>::constant(to_nchw<float>(random_patches(2, 5, 6, 1))), false);
    CHECK_FALSE(z.requires_grad());
  }
  const Var<float> z = net.features(Var<float>::constant(to_nchw<float>(random_patches(2, 5, 6, 1))), false);
  CHECK(z.requires_grad());
}

TEST_CASE("clone is deep") {
  DualHeadNet<float> net(small_config(), 5);
  DualHeadNet<float> copy = net.clone();
  CHECK(same_state(net, copy));
  copy.parameter("h_cls.bias").mutable_value()[0] = 9.0f;
  copy.bn_stats()[0].running_mean[0] = 3.0f;
  CHECK(net.parameter("h_cls.bias").value()[0] == 0.0f);
  CHECK(net.bn_stats()[0].running_mean[0] == 0.0f);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const fs::path dir = fs::temp_directory_path() / "xscene_test_model_ckpt";
  fs::remove_all(dir);
  NetworkConfig cfg = small_config(6, 7, 4);
  cfg.cfaac.variant = CfaacVariant::B;
  DualHeadNet<float> net(cfg, 21);
  net.features(Var<float>::constant(to_nchw<float>(random_patches(4, 7, 6, 2))), true);  // moves running stats
  net.save(dir);
  DualHeadNet<float> back = DualHeadNet<float>::load(dir);
  CHECK(same_state(net, back));
  CHECK(back.config() == cfg);
  CHECK_THROWS_AS(DualHeadNet<double>::load(dir), DataError);

  NetworkConfig plain = small_config();
  plain.use_cfaac = false;
  DualHeadNet<float> nocf(plain, 2);
  nocf.save(dir / "plain");
  CHECK(same_state(nocf, DualHeadNet<float>::load(dir / "plain")));
  CHECK_THROWS_AS(DualHeadNet<float>::load(dir / "missing"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("attention block gradients, all variants") {
  for (auto v : kVariants) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const GradCheckReport r = check_cfaac(v, seed);
      INFO(r.subgraph, " seed ", seed, " err ", r.max_rel_error, " ", r.failure);
      CHECK(r.passed);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("full model gradients") {
  GradCheckOptions opts;
  opts.max_entries = 24;
  const GradCheckReport r = check_full_model(1, opts);
  INFO("err ", r.max_rel_error, " ", r.failure);
  CHECK(r.passed);
  CHECK(r.entries.size() == 23);
}
