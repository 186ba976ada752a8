#include "xscene/model/checks.hpp"

#include <random>
#include <string>

namespace xscene::model {

namespace {

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  Tensor<double> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, sd);
  for (auto& v : t.storage()) v = dist(rng);
  return t;
}

}  // namespace

GradCheckReport check_cfaac(CfaacVariant variant, std::uint64_t seed, const GradCheckOptions& opts) {
  std::mt19937_64 rng(seed);
  const std::size_t n = 2, c = 4, ps = 5;
  const Var<double> f = Var<double>::leaf(random_tensor(Shape{n, c, ps, ps}, rng), true);
  CfaacParams<double> p{
      Parameter<double>("key.weight", random_tensor(Shape{c, c}, rng, 0.5)),
      Parameter<double>("key.bias", random_tensor(Shape{c}, rng, 0.1)),
      Parameter<double>("value.weight", random_tensor(Shape{c, c}, rng, 0.5)),
      Parameter<double>("value.bias", random_tensor(Shape{c}, rng, 0.1)),
      Parameter<double>("query.weight", random_tensor(Shape{c, c}, rng, 0.5)),
      Parameter<double>("query.bias", random_tensor(Shape{c}, rng, 0.1)),
      Parameter<double>("dw.weight", random_tensor(Shape{c, 1, 3, 3}, rng, 0.5)),
  };
  const Var<double> proj = Var<double>::constant(random_tensor(Shape{n, c, ps, ps}, rng));
  CfaacConfig cfg;
  cfg.variant = variant;

  std::vector<NamedVar> wrt{{"input", f}};
  for (auto* q : {&p.key_w, &p.key_b, &p.value_w, &p.value_b, &p.query_w, &p.query_b, &p.dw_w}) {
    wrt.push_back({q->name, q->var});
  }
  auto loss = [&] { return ops::sum(ops::mul(cfaac_forward(f, p, cfg), proj)); };
  return grad_check("cfaac_" + std::string(variant_name(variant)), loss, wrt, opts);
}

GradCheckReport check_full_model(std::uint64_t seed, const GradCheckOptions& opts) {
  NetworkConfig cfg;
  cfg.input_bands = 6;
  cfg.patch_size = 5;
  cfg.num_classes = 3;
  DualHeadNet<double> net(cfg, seed);

  std::mt19937_64 rng(seed ^ 0x5eedULL);
  const std::size_t n = 4;
  const Var<double> x = Var<double>::constant(random_tensor(Shape{n, cfg.input_bands, 5, 5}, rng));
  Tensor<double> pick(Shape{n, cfg.num_classes}, 0.0);
  for (std::size_t i = 0; i < n; ++i) pick[i * cfg.num_classes] = 1.0;
  const Var<double> mask = Var<double>::constant(pick);

  std::vector<NamedVar> wrt;
  for (auto* p : net.parameters()) wrt.push_back({p->name, p->var});
  auto loss = [&] {
    const Var<double> z = net.features(x, true);
    const Var<double> pc = ops::add(net.probs(z, Head::Cls), net.probs(z, Head::Psd));
    return ops::scale(ops::sum(ops::mul(pc, mask)), 1.0 / static_cast<double>(n));
  };
  return grad_check("full_model", loss, wrt, opts);
}

}  // namespace xscene::model
