#include "xscene/core/primitive_checks.hpp"

#include <random>

namespace xscene {
namespace {

using V = Var<double>;

class Inputs {
 public:
  explicit Inputs(std::uint64_t seed) : rng_(seed) {}

  Tensor<double> uniform(Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.data()) v = dist(rng_);
    return t;
  }

  // Keeps values at least `gap` away from zero so kinks are not straddled.
  Tensor<double> away_from_zero(Shape shape, double gap) {
    Tensor<double> t = uniform(std::move(shape));
    for (auto& v : t.data()) v = v < 0 ? v - gap : v + gap;
    return t;
  }

  V leaf(Tensor<double> t, const std::string& name) {
    V v = V::leaf(std::move(t), true);
    wrt.push_back({name, v});
    return v;
  }

  // Projection of `out` onto a fixed random direction, so every output entry
  // contributes a distinct weight to the scalar loss.
  std::function<V(const V&)> projector(const Shape& shape) {
    auto r = V::constant(uniform(shape));
    return [r](const V& out) { return ops::sum(ops::mul(out, r)); };
  }

  std::vector<NamedVar> wrt;

 private:
  std::mt19937_64 rng_;
};

}  // namespace

GradCheckReport check_primitive(OpKind op, std::uint64_t seed, const GradCheckOptions& opts) {
  Inputs in(seed * 7919 + static_cast<std::uint64_t>(op));
  std::function<V()> loss;
  switch (op) {
    case OpKind::Affine: {
      V x = in.leaf(in.uniform({4, 3}), "x"), w = in.leaf(in.uniform({2, 3}), "weight"),
        b = in.leaf(in.uniform({2}), "bias");
      auto p = in.projector({4, 2});
      loss = [=] { return p(ops::affine(x, w, b)); };
      break;
    }
    case OpKind::Matmul: {
      V a = in.leaf(in.uniform({3, 4}), "a"), b = in.leaf(in.uniform({4, 2}), "b");
      auto p = in.projector({3, 2});
      loss = [=] { return p(ops::matmul(a, b)); };
      break;
    }
    case OpKind::Conv3x3: {
      V x = in.leaf(in.uniform({2, 3, 4, 5}), "x"), w = in.leaf(in.uniform({4, 3, 3, 3}), "weight"),
        b = in.leaf(in.uniform({4}), "bias");
      auto p = in.projector({2, 4, 4, 5});
      loss = [=] { return p(ops::conv3x3(x, w, b)); };
      break;
    }
    case OpKind::DepthwiseConv3x3: {
      V x = in.leaf(in.uniform({2, 3, 4, 4}), "x"), w = in.leaf(in.uniform({3, 1, 3, 3}), "weight");
      auto p = in.projector({2, 3, 4, 4});
      loss = [=] { return p(ops::depthwise_conv3x3(x, w)); };
      break;
    }
    case OpKind::PointwiseAffine: {
      V x = in.leaf(in.uniform({2, 3, 3, 3}), "x"), w = in.leaf(in.uniform({4, 3}), "weight"),
        b = in.leaf(in.uniform({4}), "bias");
      auto p = in.projector({2, 4, 3, 3});
      loss = [=] { return p(ops::pointwise_affine(x, w, b)); };
      break;
    }
    case OpKind::BatchNorm2d: {
      V x = in.leaf(in.uniform({3, 2, 3, 3}), "x"), g = in.leaf(in.uniform({2}, 0.5, 1.5), "gamma"),
        b = in.leaf(in.uniform({2}), "beta");
      BatchNormStats<double> init(2);
      init.running_mean = in.uniform({2}, -0.2, 0.2);
      init.running_var = in.uniform({2}, 0.5, 1.5);
      auto p_train = in.projector({3, 2, 3, 3});
      auto p_eval = in.projector({3, 2, 3, 3});
      loss = [=] {
        BatchNormStats<double> stats = init;
        V train = p_train(ops::batch_norm2d(x, g, b, stats, true));
        BatchNormStats<double> frozen = init;
        V eval = p_eval(ops::batch_norm2d(x, g, b, frozen, false));
        return ops::add(train, eval);
      };
      break;
    }
    case OpKind::LeakyRelu: {
      V x = in.leaf(in.away_from_zero({3, 4}, 1e-3), "x");
      auto p = in.projector({3, 4});
      loss = [=] { return p(ops::leaky_relu(x)); };
      break;
    }
    case OpKind::Gelu: {
      V x = in.leaf(in.uniform({3, 4}, -3.0, 3.0), "x");
      auto p = in.projector({3, 4});
      loss = [=] { return p(ops::gelu(x)); };
      break;
    }
    case OpKind::Softmax: {
      V x = in.leaf(in.uniform({3, 4}, -2.0, 2.0), "x");
      auto p = in.projector({3, 4});
      loss = [=] { return p(ops::softmax(x)); };
      break;
    }
    case OpKind::LogSoftmax: {
      V x = in.leaf(in.uniform({3, 4}, -2.0, 2.0), "x");
      auto p = in.projector({3, 4});
      loss = [=] { return p(ops::log_softmax(x)); };
      break;
    }
    case OpKind::Log: {
      V x = in.leaf(in.uniform({3, 4}, 0.5, 2.0), "x");
      auto p = in.projector({3, 4});
      loss = [=] { return p(ops::log(x)); };
      break;
    }
    case OpKind::GlobalAvgPool: {
      V x = in.leaf(in.uniform({2, 3, 3, 4}), "x");
      auto p = in.projector({2, 3});
      loss = [=] { return p(ops::global_avg_pool(x)); };
      break;
    }
    case OpKind::Add: {
      V a = in.leaf(in.uniform({3, 4}), "a"), b = in.leaf(in.uniform({3, 4}), "b");
      auto p = in.projector({3, 4});
      loss = [=] { return p(ops::add(a, b)); };
      break;
    }
    case OpKind::Mul: {
      V a = in.leaf(in.uniform({3, 4}), "a"), b = in.leaf(in.uniform({3, 4}), "b");
      auto p = in.projector({3, 4});
      loss = [=] { return p(ops::mul(a, b)); };
      break;
    }
    case OpKind::Scale: {
      V x = in.leaf(in.uniform({3, 4}), "x");
      auto p = in.projector({3, 4});
      loss = [=] { return p(ops::scale(x, 1.7)); };
      break;
    }
    case OpKind::Sum: {
      V x = in.leaf(in.uniform({3, 4}), "x");
      loss = [=] {
        V s = ops::sum(x);
        return ops::mul(s, s);
      };
      break;
    }
    case OpKind::Mean: {
      V x = in.leaf(in.uniform({3, 4}), "x");
      loss = [=] {
        V m = ops::mean(x);
        return ops::mul(m, m);
      };
      break;
    }
    case OpKind::Reshape: {
      V x = in.leaf(in.uniform({2, 6}), "x");
      auto p = in.projector({3, 4});
      loss = [=] { return p(ops::reshape(x, {3, 4})); };
      break;
    }
    case OpKind::CenterPixel: {
      V x = in.leaf(in.uniform({2, 3, 5, 5}), "x");
      auto p = in.projector({2, 3});
      loss = [=] { return p(ops::center_pixel(x)); };
      break;
    }
    case OpKind::CenterScores: {
      V q = in.leaf(in.uniform({2, 3}), "q"), k = in.leaf(in.uniform({2, 3, 3, 3}), "k");
      auto p = in.projector({2, 1, 3, 3});
      loss = [=] { return p(ops::center_scores(q, k)); };
      break;
    }
    case OpKind::SpatialGate: {
      V a = in.leaf(in.uniform({2, 1, 3, 3}), "a"), v = in.leaf(in.uniform({2, 3, 3, 3}), "v");
      auto p = in.projector({2, 3, 3, 3});
      loss = [=] { return p(ops::spatial_gate(a, v)); };
      break;
    }
    case OpKind::GatherRows: {
      V x = in.leaf(in.uniform({5, 3}), "x");
      auto p = in.projector({4, 3});
      loss = [=] {
        const std::vector<std::size_t> rows{4, 0, 4, 2};
        return p(ops::gather_rows(x, rows));
      };
      break;
    }
    case OpKind::Nll: {
      V lp = in.leaf(in.uniform({3, 4}, -3.0, -0.1), "logp");
      Tensor<double> targets = in.uniform({3, 4}, 0.0, 1.0);
      loss = [=] { return ops::nll(lp, targets); };
      break;
    }
  }
  return grad_check(std::string(op_name(op)), loss, in.wrt, opts);
}

}  // namespace xscene
