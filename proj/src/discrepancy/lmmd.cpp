#include "xscene/discrepancy/lmmd.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <spdlog/spdlog.h>

namespace xscene::disc {

namespace {

void require_matrix(const Tensor<double>& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + " must be a matrix, got " + shape_str(t.shape()));
}

Tensor<double> stack_rows(const Tensor<double>& a, const Tensor<double>& b) {
  Tensor<double> out(Shape{a.dim(0) + b.dim(0), a.dim(1)});
  std::copy(a.data().begin(), a.data().end(), out.ptr());
  std::copy(b.data().begin(), b.data().end(), out.ptr() + a.size());
  return out;
}

}  // namespace

void KernelSpec::validate() const {
  if (num_kernels == 0) throw ConfigError("kernel family needs at least one member");
  if (!(mul_factor > 0.0) || !std::isfinite(mul_factor)) throw ConfigError("kernel multiplier must be positive");
  if (fixed_bandwidth && !(*fixed_bandwidth > 0.0)) throw ConfigError("fixed bandwidth must be positive");
}

Tensor<double> pairwise_sq_dists(const Tensor<double>& x, const Tensor<double>& y) {
  require_matrix(x, "X");
  require_matrix(y, "Y");
  if (x.dim(1) != y.dim(1)) {
    throw ShapeError("feature dimensions differ: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  const std::size_t n = x.dim(0), m = y.dim(0), d = x.dim(1);
  Tensor<double> out(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.ptr() + i * d;
    for (std::size_t j = 0; j < m; ++j) {
      const double* yj = y.ptr() + j * d;
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = xi[k] - yj[k];
        s += diff * diff;
      }
      out[i * m + j] = s;
    }
  }
  return out;
}

double median_bandwidth(const Tensor<double>& sq) {
  const std::size_t n = sq.dim(0);
  std::vector<double> off;
  off.reserve(n * (n > 0 ? n - 1 : 0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) off.push_back(sq[i * n + j]);
    }
  }
  if (off.empty()) return 1.0;
  std::sort(off.begin(), off.end());
  const std::size_t mid = off.size() / 2;
  const double median = off.size() % 2 ? off[mid] : 0.5 * (off[mid - 1] + off[mid]);
  return median > 0.0 ? median : 1.0;
}

std::vector<double> bandwidths(const KernelSpec& spec, double base) {
  spec.validate();
  std::vector<double> out(spec.num_kernels);
  const long half = static_cast<long>(spec.num_kernels / 2);
  for (std::size_t k = 0; k < spec.num_kernels; ++k) {
    out[k] = base * std::pow(spec.mul_factor, static_cast<double>(static_cast<long>(k) - half));
  }
  return out;
}

double base_bandwidth(const Tensor<double>& x, const Tensor<double>& y, const KernelSpec& spec) {
  if (spec.fixed_bandwidth) return *spec.fixed_bandwidth;
  const Tensor<double> pooled = stack_rows(x, y);
  return median_bandwidth(pairwise_sq_dists(pooled, pooled));
}

Tensor<double> gaussian_kernel(const Tensor<double>& x, const Tensor<double>& y, const KernelSpec& spec,
                               double base) {
  const auto bws = bandwidths(spec, base);
  Tensor<double> k = pairwise_sq_dists(x, y);
  for (auto& v : k.storage()) {
    double s = 0.0;
    for (double bw : bws) s += std::exp(-v / bw);
    v = s / static_cast<double>(bws.size());
  }
  return k;
}

Tensor<double> gaussian_kernel(const Tensor<double>& x, const Tensor<double>& y, const KernelSpec& spec) {
  return gaussian_kernel(x, y, spec, base_bandwidth(x, y, spec));
}

double mmd_biased(const Tensor<double>& zs, const Tensor<double>& zt, const KernelSpec& spec) {
  require_matrix(zs, "Zs");
  require_matrix(zt, "Zt");
  if (zs.dim(0) == 0 || zt.dim(0) == 0) throw ShapeError("MMD needs at least one sample per domain");
  const double base = base_bandwidth(zs, zt, spec);
  auto mean_of = [](const Tensor<double>& t) {
    double s = 0.0;
    for (double v : t.storage()) s += v;
    return s / static_cast<double>(t.size());
  };
  return mean_of(gaussian_kernel(zs, zs, spec, base)) + mean_of(gaussian_kernel(zt, zt, spec, base)) -
         2.0 * mean_of(gaussian_kernel(zs, zt, spec, base));
}

ClassWeights class_weights(const Tensor<double>& y) {
  require_matrix(y, "class scores");
  const std::size_t n = y.dim(0), c = y.dim(1);
  ClassWeights out{Tensor<double>(Shape{n, c}, 0.0), std::vector<bool>(c, false)};
  for (double v : y.storage()) {
    if (v < 0.0 || !std::isfinite(v)) throw NumericError("class weights need finite non-negative scores");
  }
  for (std::size_t k = 0; k < c; ++k) {
    double col = 0.0;
    for (std::size_t i = 0; i < n; ++i) col += y[i * c + k];
    if (col <= 0.0) continue;
    out.valid[k] = true;
    for (std::size_t i = 0; i < n; ++i) out.w[i * c + k] = y[i * c + k] / col;
  }
  return out;
}

std::size_t WeightMatrix::num_valid() const {
  return static_cast<std::size_t>(std::count(valid_classes.begin(), valid_classes.end(), true));
}

WeightMatrix lmmd_weights(const Tensor<double>& ys_onehot, const Tensor<double>& pt_probs) {
  if (ys_onehot.rank() != 2 || pt_probs.rank() != 2 || ys_onehot.dim(1) != pt_probs.dim(1)) {
    throw ShapeError("source labels " + shape_str(ys_onehot.shape()) + " and target probabilities " +
                     shape_str(pt_probs.shape()) + " disagree on the class count");
  }
  ClassWeights s = class_weights(ys_onehot), t = class_weights(pt_probs);
  WeightMatrix out{std::move(s.w), std::move(t.w), std::vector<bool>(s.valid.size())};
  for (std::size_t c = 0; c < s.valid.size(); ++c) out.valid_classes[c] = s.valid[c] && t.valid[c];
  return out;
}

Tensor<double> one_hot(std::span<const int> labels, std::size_t num_classes) {
  Tensor<double> out(Shape{labels.size(), num_classes}, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw DataError("label " + std::to_string(labels[i]) + " outside 0.." + std::to_string(num_classes - 1));
    }
    out[i * num_classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return out;
}

template <typename T>
Var<T> lmmd(const Var<T>& zs, const Var<T>& zt, const Tensor<double>& ys_onehot, const Tensor<double>& pt_probs,
            const KernelSpec& spec, LmmdInfo* info) {
  const Tensor<double> xs = zs.value().template cast<double>(), xt = zt.value().template cast<double>();
  require_matrix(xs, "Zs");
  require_matrix(xt, "Zt");
  if (xs.dim(0) != ys_onehot.dim(0) || xt.dim(0) != pt_probs.dim(0)) {
    throw ShapeError("feature rows and weight rows differ in count");
  }
  const WeightMatrix wm = lmmd_weights(ys_onehot, pt_probs);
  const std::size_t ns = xs.dim(0), nt = xt.dim(0), n = ns + nt, d = xs.dim(1), c = ys_onehot.dim(1);
  const std::size_t valid = wm.num_valid();
  const Tensor<double> z = stack_rows(xs, xt);
  const double base = spec.fixed_bandwidth ? *spec.fixed_bandwidth : median_bandwidth(pairwise_sq_dists(z, z));
  if (info) *info = LmmdInfo{base, valid};
  if (valid == 0) {
    spdlog::warn("lmmd: no class present in both domains of this batch, loss set to 0");
    return Var<T>::constant(Tensor<T>::scalar(T(0)));
  }

  // M = (1/|valid|) sum_c u_c u_c^T with u_c = [w_s[:, c]; -w_t[:, c]]
  std::vector<double> u(n * c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    if (!wm.valid_classes[k]) continue;
    for (std::size_t i = 0; i < ns; ++i) u[i * c + k] = wm.w_s[i * c + k];
    for (std::size_t j = 0; j < nt; ++j) u[(ns + j) * c + k] = -wm.w_t[j * c + k];
  }
  const double inv_valid = 1.0 / static_cast<double>(valid);
  const auto bws = bandwidths(spec, base);
  const Tensor<double> dist = pairwise_sq_dists(z, z);

  // G[a, b] = M[a, b] * dK/dD[a, b]; the loss is sum M * K
  auto g = std::make_shared<std::vector<double>>(n * n);
  double loss = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      double m = 0.0;
      for (std::size_t k = 0; k < c; ++k) m += u[a * c + k] * u[b * c + k];
      m *= inv_valid;
      double kv = 0.0, dk = 0.0;
      for (double bw : bws) {
        const double e = std::exp(-dist[a * n + b] / bw);
        kv += e;
        dk -= e / bw;
      }
      kv /= static_cast<double>(bws.size());
      dk /= static_cast<double>(bws.size());
      loss += m * kv;
      (*g)[a * n + b] = m * dk;
    }
  }

  auto zbuf = std::make_shared<Tensor<double>>(z);
  return make_op<T>("lmmd", Tensor<T>::scalar(static_cast<T>(loss)), {zs, zt}, [g, zbuf, ns, nt, d](Node<T>& self) {
    const double up = static_cast<double>(self.grad[0]);
    const std::size_t n = ns + nt;
    const Tensor<double>& zz = *zbuf;
    std::vector<double> row(d);
    Tensor<T>* gs = grad_slot(self, 0);
    Tensor<T>* gt = grad_slot(self, 1);
    for (std::size_t a = 0; a < n; ++a) {
      Tensor<T>* dst = a < ns ? gs : gt;
      if (!dst) continue;
      std::fill(row.begin(), row.end(), 0.0);
      const double* za = zz.ptr() + a * d;
      for (std::size_t b = 0; b < n; ++b) {
        const double coef = (*g)[a * n + b];
        if (coef == 0.0) continue;
        const double* zb = zz.ptr() + b * d;
        for (std::size_t k = 0; k < d; ++k) row[k] += coef * (za[k] - zb[k]);
      }
      T* out = dst->ptr() + (a < ns ? a : a - ns) * d;
      for (std::size_t k = 0; k < d; ++k) out[k] += static_cast<T>(4.0 * up * row[k]);
    }
  });
}

double lmmd_oracle(const Tensor<double>& zs, const Tensor<double>& ys, const Tensor<double>& zt,
                   const Tensor<double>& pt, const KernelSpec& spec) {
  const std::size_t ns = zs.dim(0), nt = zt.dim(0), d = zs.dim(1), num_classes = ys.dim(1);
  auto sq = [d](const double* a, const double* b) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return s;
  };

  double base = 0.0;
  if (spec.fixed_bandwidth) {
    base = *spec.fixed_bandwidth;
  } else {
    std::vector<const double*> pts;
    for (std::size_t i = 0; i < ns; ++i) pts.push_back(zs.ptr() + i * d);
    for (std::size_t j = 0; j < nt; ++j) pts.push_back(zt.ptr() + j * d);
    std::vector<double> all;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      for (std::size_t j = 0; j < pts.size(); ++j) {
        if (i != j) all.push_back(sq(pts[i], pts[j]));
      }
    }
    std::sort(all.begin(), all.end());
    if (all.empty()) {
      base = 1.0;
    } else {
      const std::size_t h = all.size() / 2;
      base = all.size() % 2 ? all[h] : (all[h - 1] + all[h]) / 2.0;
      if (base == 0.0) base = 1.0;
    }
  }
  auto kernel = [&](const double* a, const double* b) {
    const double dd = sq(a, b);
    double s = 0.0;
    for (std::size_t k = 0; k < spec.num_kernels; ++k) {
      const double e = static_cast<double>(static_cast<long>(k) - static_cast<long>(spec.num_kernels / 2));
      s += std::exp(-dd / (base * std::pow(spec.mul_factor, e)));
    }
    return s / static_cast<double>(spec.num_kernels);
  };

  double total = 0.0;
  std::size_t valid = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    double col_s = 0.0, col_t = 0.0;
    for (std::size_t i = 0; i < ns; ++i) col_s += ys[i * num_classes + c];
    for (std::size_t j = 0; j < nt; ++j) col_t += pt[j * num_classes + c];
    if (col_s <= 0.0 || col_t <= 0.0) continue;
    ++valid;
    double ss = 0.0, tt = 0.0, st = 0.0;
    for (std::size_t i = 0; i < ns; ++i) {
      for (std::size_t j = 0; j < ns; ++j) {
        ss += (ys[i * num_classes + c] / col_s) * (ys[j * num_classes + c] / col_s) *
              kernel(zs.ptr() + i * d, zs.ptr() + j * d);
      }
    }
    for (std::size_t i = 0; i < nt; ++i) {
      for (std::size_t j = 0; j < nt; ++j) {
        tt += (pt[i * num_classes + c] / col_t) * (pt[j * num_classes + c] / col_t) *
              kernel(zt.ptr() + i * d, zt.ptr() + j * d);
      }
    }
    for (std::size_t i = 0; i < ns; ++i) {
      for (std::size_t j = 0; j < nt; ++j) {
        st += (ys[i * num_classes + c] / col_s) * (pt[j * num_classes + c] / col_t) *
              kernel(zs.ptr() + i * d, zt.ptr() + j * d);
      }
    }
    total += ss + tt - 2.0 * st;
  }
  return valid == 0 ? 0.0 : total / static_cast<double>(valid);
}

GradCheckReport check_lmmd(std::uint64_t seed, const GradCheckOptions& opts) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.05, 1.0);
  const std::size_t ns = 6, nt = 5, d = 4, c = 3;
  Tensor<double> xs(Shape{ns, d}), xt(Shape{nt, d}), pt(Shape{nt, c});
  for (auto& v : xs.storage()) v = normal(rng);
  for (auto& v : xt.storage()) v = normal(rng) + 0.5;
  for (std::size_t j = 0; j < nt; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += pt[j * c + k] = unif(rng);
    for (std::size_t k = 0; k < c; ++k) pt[j * c + k] /= s;
  }
  std::vector<int> labels(ns);
  for (std::size_t i = 0; i < ns; ++i) labels[i] = static_cast<int>(i % c);
  const Tensor<double> ys = one_hot(labels, c);
  const Var<double> zs = Var<double>::leaf(xs, true), zt = Var<double>::leaf(xt, true);
  const KernelSpec spec = KernelSpec::fixed(2.0, 5, 2.0);
  return grad_check("lmmd", [&] { return lmmd(zs, zt, ys, pt, spec); }, {{"zs", zs}, {"zt", zt}}, opts);
}

template Var<float> lmmd<float>(const Var<float>&, const Var<float>&, const Tensor<double>&, const Tensor<double>&,
                                const KernelSpec&, LmmdInfo*);
template Var<double> lmmd<double>(const Var<double>&, const Var<double>&, const Tensor<double>&, const Tensor<double>&,
                                  const KernelSpec&, LmmdInfo*);

}  // namespace xscene::disc
