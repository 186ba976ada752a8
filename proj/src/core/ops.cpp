#include "xscene/core/ops.hpp"

#include <cmath>
#include <numbers>

#include "gemm.hpp"

namespace xscene {

std::string_view op_name(OpKind op) {
  switch (op) {
    case OpKind::Affine: return "affine";
    case OpKind::Matmul: return "matmul";
    case OpKind::Conv3x3: return "conv3x3";
    case OpKind::DepthwiseConv3x3: return "depthwise_conv3x3";
    case OpKind::PointwiseAffine: return "pointwise_affine";
    case OpKind::BatchNorm2d: return "batch_norm2d";
    case OpKind::LeakyRelu: return "leaky_relu";
    case OpKind::Gelu: return "gelu";
    case OpKind::Softmax: return "softmax";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::Log: return "log";
    case OpKind::GlobalAvgPool: return "global_avg_pool";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Reshape: return "reshape";
    case OpKind::CenterPixel: return "center_pixel";
    case OpKind::CenterScores: return "center_scores";
    case OpKind::SpatialGate: return "spatial_gate";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::Nll: return "nll";
  }
  return "unknown";
}

namespace ops {
namespace {

void require(bool cond, std::string_view op, const std::string& what) {
  if (!cond) throw ShapeError(std::string(op) + ": " + what);
}

template <typename T>
void require_rank(const Var<T>& v, std::size_t rank, std::string_view op, std::string_view arg) {
  require(v.defined(), op, std::string(arg) + " is undefined");
  require(v.shape().size() == rank, op,
          std::string(arg) + " must have rank " + std::to_string(rank) + ", got " + shape_str(v.shape()));
}

struct ImageDims {
  std::size_t n, c, h, w;
  std::size_t hw() const { return h * w; }
};

template <typename T>
ImageDims image_dims(const Var<T>& x, std::string_view op) {
  require_rank(x, 4, op, "input");
  const auto& s = x.shape();
  return {s[0], s[1], s[2], s[3]};
}

// Column buffer for a 3x3/pad-1 convolution: row (ci*9 + ky*3 + kx), column n*HW + y*W + x.
template <typename T>
std::vector<T> im2col(const T* x, const ImageDims& d) {
  const std::size_t cols = d.n * d.hw();
  std::vector<T> col(d.c * 9 * cols, T(0));
  for (std::size_t ci = 0; ci < d.c; ++ci) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* row = col.data() + (ci * 9 + ky * 3 + kx) * cols;
        for (std::size_t n = 0; n < d.n; ++n) {
          const T* src = x + (n * d.c + ci) * d.hw();
          T* dst = row + n * d.hw();
          for (std::size_t y = 0; y < d.h; ++y) {
            const long sy = static_cast<long>(y) + ky - 1;
            if (sy < 0 || sy >= static_cast<long>(d.h)) continue;
            for (std::size_t xx = 0; xx < d.w; ++xx) {
              const long sx = static_cast<long>(xx) + kx - 1;
              if (sx < 0 || sx >= static_cast<long>(d.w)) continue;
              dst[y * d.w + xx] = src[static_cast<std::size_t>(sy) * d.w + static_cast<std::size_t>(sx)];
            }
          }
        }
      }
    }
  }
  return col;
}

template <typename T>
void col2im_add(const T* col, const ImageDims& d, T* gx) {
  const std::size_t cols = d.n * d.hw();
  for (std::size_t ci = 0; ci < d.c; ++ci) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* row = col + (ci * 9 + ky * 3 + kx) * cols;
        for (std::size_t n = 0; n < d.n; ++n) {
          T* dst = gx + (n * d.c + ci) * d.hw();
          const T* src = row + n * d.hw();
          for (std::size_t y = 0; y < d.h; ++y) {
            const long sy = static_cast<long>(y) + ky - 1;
            if (sy < 0 || sy >= static_cast<long>(d.h)) continue;
            for (std::size_t xx = 0; xx < d.w; ++xx) {
              const long sx = static_cast<long>(xx) + kx - 1;
              if (sx < 0 || sx >= static_cast<long>(d.w)) continue;
              dst[static_cast<std::size_t>(sy) * d.w + static_cast<std::size_t>(sx)] += src[y * d.w + xx];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "add", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op<T>("add", std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* g = grad_slot(self, k)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "mul", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op<T>("mul", std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* g = grad_slot(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (auto* g = grad_slot(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= factor;
  return make_op<T>("scale", std::move(out), {a}, [factor](Node<T>& self) {
    if (auto* g = grad_slot(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * factor;
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T acc = T(0);
  for (T v : a.value().data()) acc += v;
  return make_op<T>("sum", Tensor<T>::scalar(acc), {a}, [](Node<T>& self) {
    if (auto* g = grad_slot(self, 0)) {
      const T up = self.grad[0];
      for (auto& v : g->data()) v += up;
    }
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  require(a.size() > 0, "mean", "empty input");
  T acc = T(0);
  for (T v : a.value().data()) acc += v;
  const T inv = T(1) / static_cast<T>(a.size());
  return make_op<T>("mean", Tensor<T>::scalar(acc * inv), {a}, [inv](Node<T>& self) {
    if (auto* g = grad_slot(self, 0)) {
      const T up = self.grad[0] * inv;
      for (auto& v : g->data()) v += up;
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return make_op<T>("reshape", std::move(out), {a}, [](Node<T>& self) {
    if (auto* g = grad_slot(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_rank(a, 2, "matmul", "a");
  require_rank(b, 2, "matmul", "b");
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  require(b.shape()[0] == k, "matmul", "inner dimensions " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<T> out(Shape{n, m});
  detail::gemm(false, false, n, m, k, a.value().ptr(), b.value().ptr(), out.ptr(), false);
  return make_op<T>("matmul", std::move(out), {a, b}, [n, k, m](Node<T>& self) {
    if (auto* g = grad_slot(self, 0)) {
      detail::gemm(false, true, n, k, m, self.grad.ptr(), self.parents[1]->value.ptr(), g->ptr(), true);
    }
    if (auto* g = grad_slot(self, 1)) {
      detail::gemm(true, false, k, m, n, self.parents[0]->value.ptr(), self.grad.ptr(), g->ptr(), true);
    }
  });
}

template <typename T>
Var<T> affine(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require_rank(x, 2, "affine", "x");
  require_rank(weight, 2, "affine", "weight");
  require_rank(bias, 1, "affine", "bias");
  const std::size_t n = x.shape()[0], in = x.shape()[1], out_dim = weight.shape()[0];
  require(weight.shape()[1] == in, "affine",
          "weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
  require(bias.shape()[0] == out_dim, "affine", "bias length must equal output dimension");
  Tensor<T> out(Shape{n, out_dim});
  detail::gemm(false, true, n, out_dim, in, x.value().ptr(), weight.value().ptr(), out.ptr(), false);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < out_dim; ++o) out[i * out_dim + o] += bias.value()[o];
  }
  return make_op<T>("affine", std::move(out), {x, weight, bias}, [n, in, out_dim](Node<T>& self) {
    const T* gy = self.grad.ptr();
    if (auto* g = grad_slot(self, 0)) {
      detail::gemm(false, false, n, in, out_dim, gy, self.parents[1]->value.ptr(), g->ptr(), true);
    }
    if (auto* g = grad_slot(self, 1)) {
      detail::gemm(true, false, out_dim, in, n, gy, self.parents[0]->value.ptr(), g->ptr(), true);
    }
    if (auto* g = grad_slot(self, 2)) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t o = 0; o < out_dim; ++o) (*g)[o] += gy[i * out_dim + o];
      }
    }
  });
}

template <typename T>
Var<T> conv3x3(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const ImageDims d = image_dims(x, "conv3x3");
  require_rank(weight, 4, "conv3x3", "weight");
  const std::size_t co = weight.shape()[0];
  require(weight.shape()[1] == d.c && weight.shape()[2] == 3 && weight.shape()[3] == 3, "conv3x3",
          "weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
  const bool has_bias = bias.defined();
  if (has_bias) {
    require_rank(bias, 1, "conv3x3", "bias");
    require(bias.shape()[0] == co, "conv3x3", "bias length must equal output channels");
  }
  const std::size_t k = d.c * 9, cols = d.n * d.hw();
  auto col = std::make_shared<std::vector<T>>(im2col(x.value().ptr(), d));
  std::vector<T> mat(co * cols);
  detail::gemm(false, false, co, cols, k, weight.value().ptr(), col->data(), mat.data(), false);

  Tensor<T> out(Shape{d.n, co, d.h, d.w});
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t o = 0; o < co; ++o) {
      const T b = has_bias ? bias.value()[o] : T(0);
      const T* src = mat.data() + o * cols + n * d.hw();
      T* dst = out.ptr() + (n * co + o) * d.hw();
      for (std::size_t p = 0; p < d.hw(); ++p) dst[p] = src[p] + b;
    }
  }
  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_op<T>("conv3x3", std::move(out), inputs, [d, co, k, cols, col, has_bias](Node<T>& self) {
    std::vector<T> gmat(co * cols);
    for (std::size_t n = 0; n < d.n; ++n) {
      for (std::size_t o = 0; o < co; ++o) {
        const T* src = self.grad.ptr() + (n * co + o) * d.hw();
        std::copy(src, src + d.hw(), gmat.data() + o * cols + n * d.hw());
      }
    }
    if (auto* g = grad_slot(self, 1)) {
      detail::gemm(false, true, co, k, cols, gmat.data(), col->data(), g->ptr(), true);
    }
    if (has_bias) {
      if (auto* g = grad_slot(self, 2)) {
        for (std::size_t o = 0; o < co; ++o) {
          T acc = T(0);
          const T* row = gmat.data() + o * cols;
          for (std::size_t j = 0; j < cols; ++j) acc += row[j];
          (*g)[o] += acc;
        }
      }
    }
    if (auto* g = grad_slot(self, 0)) {
      std::vector<T> gcol(k * cols);
      detail::gemm(true, false, k, cols, co, self.parents[1]->value.ptr(), gmat.data(), gcol.data(), false);
      col2im_add(gcol.data(), d, g->ptr());
    }
  });
}

template <typename T>
Var<T> depthwise_conv3x3(const Var<T>& x, const Var<T>& weight) {
  const ImageDims d = image_dims(x, "depthwise_conv3x3");
  require_rank(weight, 4, "depthwise_conv3x3", "weight");
  require(weight.shape()[0] == d.c && weight.shape()[1] == 1 && weight.shape()[2] == 3 && weight.shape()[3] == 3,
          "depthwise_conv3x3", "weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
  Tensor<T> out(x.shape(), T(0));
  const T* xv = x.value().ptr();
  const T* wv = weight.value().ptr();
  const auto h = static_cast<long>(d.h), w = static_cast<long>(d.w);
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      const T* src = xv + (n * d.c + c) * d.hw();
      const T* ker = wv + c * 9;
      T* dst = out.ptr() + (n * d.c + c) * d.hw();
      for (long y = 0; y < h; ++y) {
        for (long xx = 0; xx < w; ++xx) {
          T acc = T(0);
          for (long ky = 0; ky < 3; ++ky) {
            const long sy = y + ky - 1;
            if (sy < 0 || sy >= h) continue;
            for (long kx = 0; kx < 3; ++kx) {
              const long sx = xx + kx - 1;
              if (sx < 0 || sx >= w) continue;
              acc += ker[ky * 3 + kx] * src[sy * w + sx];
            }
          }
          dst[y * w + xx] = acc;
        }
      }
    }
  }
  return make_op<T>("depthwise_conv3x3", std::move(out), {x, weight}, [d](Node<T>& self) {
    const T* xv = self.parents[0]->value.ptr();
    const T* wv = self.parents[1]->value.ptr();
    Tensor<T>* gx = grad_slot(self, 0);
    Tensor<T>* gw = grad_slot(self, 1);
    const auto h = static_cast<long>(d.h), w = static_cast<long>(d.w);
    for (std::size_t n = 0; n < d.n; ++n) {
      for (std::size_t c = 0; c < d.c; ++c) {
        const std::size_t base = (n * d.c + c) * d.hw();
        const T* gy = self.grad.ptr() + base;
        for (long y = 0; y < h; ++y) {
          for (long xx = 0; xx < w; ++xx) {
            const T up = gy[y * w + xx];
            for (long ky = 0; ky < 3; ++ky) {
              const long sy = y + ky - 1;
              if (sy < 0 || sy >= h) continue;
              for (long kx = 0; kx < 3; ++kx) {
                const long sx = xx + kx - 1;
                if (sx < 0 || sx >= w) continue;
                if (gw) (*gw)[c * 9 + ky * 3 + kx] += up * xv[base + sy * w + sx];
                if (gx) (*gx)[base + sy * w + sx] += up * wv[c * 9 + ky * 3 + kx];
              }
            }
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> pointwise_affine(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const ImageDims d = image_dims(x, "pointwise_affine");
  require_rank(weight, 2, "pointwise_affine", "weight");
  require_rank(bias, 1, "pointwise_affine", "bias");
  const std::size_t co = weight.shape()[0];
  require(weight.shape()[1] == d.c, "pointwise_affine",
          "weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
  require(bias.shape()[0] == co, "pointwise_affine", "bias length must equal output channels");
  Tensor<T> out(Shape{d.n, co, d.h, d.w});
  for (std::size_t n = 0; n < d.n; ++n) {
    T* dst = out.ptr() + n * co * d.hw();
    detail::gemm(false, false, co, d.hw(), d.c, weight.value().ptr(), x.value().ptr() + n * d.c * d.hw(), dst, false);
    for (std::size_t o = 0; o < co; ++o) {
      for (std::size_t p = 0; p < d.hw(); ++p) dst[o * d.hw() + p] += bias.value()[o];
    }
  }
  return make_op<T>("pointwise_affine", std::move(out), {x, weight, bias}, [d, co](Node<T>& self) {
    Tensor<T>* gx = grad_slot(self, 0);
    Tensor<T>* gw = grad_slot(self, 1);
    Tensor<T>* gb = grad_slot(self, 2);
    for (std::size_t n = 0; n < d.n; ++n) {
      const T* gy = self.grad.ptr() + n * co * d.hw();
      if (gw) {
        detail::gemm(false, true, co, d.c, d.hw(), gy, self.parents[0]->value.ptr() + n * d.c * d.hw(), gw->ptr(), true);
      }
      if (gx) {
        detail::gemm(true, false, d.c, d.hw(), co, self.parents[1]->value.ptr(), gy, gx->ptr() + n * d.c * d.hw(), true);
      }
      if (gb) {
        for (std::size_t o = 0; o < co; ++o) {
          T acc = T(0);
          for (std::size_t p = 0; p < d.hw(); ++p) acc += gy[o * d.hw() + p];
          (*gb)[o] += acc;
        }
      }
    }
  });
}

template <typename T>
Var<T> batch_norm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T>& stats,
                    bool training, const BatchNormOptions& opts) {
  const ImageDims d = image_dims(x, "batch_norm2d");
  require_rank(gamma, 1, "batch_norm2d", "gamma");
  require_rank(beta, 1, "batch_norm2d", "beta");
  require(gamma.shape()[0] == d.c && beta.shape()[0] == d.c, "batch_norm2d", "affine parameters must match channels");
  require(stats.running_mean.size() == d.c && stats.running_var.size() == d.c, "batch_norm2d",
          "running statistics must match channels");
  const std::size_t count = d.n * d.hw();
  require(!training || count > 1, "batch_norm2d", "training mode needs more than one value per channel");

  std::vector<T> mean(d.c), inv_std(d.c);
  const T* xv = x.value().ptr();
  for (std::size_t c = 0; c < d.c; ++c) {
    if (training) {
      double s = 0.0;
      for (std::size_t n = 0; n < d.n; ++n) {
        const T* src = xv + (n * d.c + c) * d.hw();
        for (std::size_t p = 0; p < d.hw(); ++p) s += src[p];
      }
      const double m = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t n = 0; n < d.n; ++n) {
        const T* src = xv + (n * d.c + c) * d.hw();
        for (std::size_t p = 0; p < d.hw(); ++p) {
          const double dv = src[p] - m;
          ss += dv * dv;
        }
      }
      const double var = ss / static_cast<double>(count);
      mean[c] = static_cast<T>(m);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + opts.eps));
      const double unbiased = ss / static_cast<double>(count - 1);
      stats.running_mean[c] = static_cast<T>((1.0 - opts.momentum) * stats.running_mean[c] + opts.momentum * m);
      stats.running_var[c] = static_cast<T>((1.0 - opts.momentum) * stats.running_var[c] + opts.momentum * unbiased);
    } else {
      mean[c] = stats.running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.running_var[c]) + opts.eps));
    }
  }

  Tensor<T> out(x.shape());
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      const std::size_t base = (n * d.c + c) * d.hw();
      const T g = gamma.value()[c], b = beta.value()[c];
      for (std::size_t p = 0; p < d.hw(); ++p) out[base + p] = g * ((xv[base + p] - mean[c]) * inv_std[c]) + b;
    }
  }
  return make_op<T>("batch_norm2d", std::move(out), {x, gamma, beta},
                    [d, count, training, mean = std::move(mean), inv_std = std::move(inv_std)](Node<T>& self) {
    const T* xv = self.parents[0]->value.ptr();
    const T* gy = self.grad.ptr();
    Tensor<T>* gx = grad_slot(self, 0);
    Tensor<T>* gg = grad_slot(self, 1);
    Tensor<T>* gb = grad_slot(self, 2);
    for (std::size_t c = 0; c < d.c; ++c) {
      T sum_g = T(0), sum_gx = T(0);
      for (std::size_t n = 0; n < d.n; ++n) {
        const std::size_t base = (n * d.c + c) * d.hw();
        for (std::size_t p = 0; p < d.hw(); ++p) {
          const T xhat = (xv[base + p] - mean[c]) * inv_std[c];
          sum_g += gy[base + p];
          sum_gx += gy[base + p] * xhat;
        }
      }
      if (gg) (*gg)[c] += sum_gx;
      if (gb) (*gb)[c] += sum_g;
      if (!gx) continue;
      const T gamma = self.parents[1]->value[c];
      const T m = static_cast<T>(count);
      for (std::size_t n = 0; n < d.n; ++n) {
        const std::size_t base = (n * d.c + c) * d.hw();
        for (std::size_t p = 0; p < d.hw(); ++p) {
          if (training) {
            const T xhat = (xv[base + p] - mean[c]) * inv_std[c];
            (*gx)[base + p] += gamma * inv_std[c] / m * (m * gy[base + p] - sum_g - xhat * sum_gx);
          } else {
            (*gx)[base + p] += gamma * inv_std[c] * gy[base + p];
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = v > T(0) ? v : slope * v;
  return make_op<T>("leaky_relu", std::move(out), {x}, [slope](Node<T>& self) {
    if (auto* g = grad_slot(self, 0)) {
      const auto& xv = self.parents[0]->value;
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * (xv[i] > T(0) ? T(1) : slope);
    }
  });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = T(0.5) * v * (T(1) + std::erf(v * static_cast<T>(std::numbers::sqrt2 / 2.0)));
  return make_op<T>("gelu", std::move(out), {x}, [](Node<T>& self) {
    if (auto* g = grad_slot(self, 0)) {
      const auto& xv = self.parents[0]->value;
      const T inv_sqrt2 = static_cast<T>(std::numbers::sqrt2 / 2.0);
      const T inv_sqrt2pi = static_cast<T>(std::numbers::inv_sqrtpi * std::numbers::sqrt2 / 2.0);
      for (std::size_t i = 0; i < g->size(); ++i) {
        const T v = xv[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
        (*g)[i] += self.grad[i] * (cdf + v * pdf);
      }
    }
  });
}

template <typename T>
Var<T> softmax(const Var<T>& x) {
  require_rank(x, 2, "softmax", "x");
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < n; ++i) {
    T* row = out.ptr() + i * c;
    const T mx = *std::max_element(row, row + c);
    T s = T(0);
    for (std::size_t j = 0; j < c; ++j) s += (row[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) row[j] /= s;
  }
  Tensor<T> probs = out;
  return make_op<T>("softmax", std::move(out), {x}, [n, c, probs = std::move(probs)](Node<T>& self) {
    if (auto* g = grad_slot(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) {
        const T* y = probs.ptr() + i * c;
        const T* gy = self.grad.ptr() + i * c;
        T dot = T(0);
        for (std::size_t j = 0; j < c; ++j) dot += gy[j] * y[j];
        for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += y[j] * (gy[j] - dot);
      }
    }
  });
}

template <typename T>
Var<T> log_softmax(const Var<T>& x) {
  require_rank(x, 2, "log_softmax", "x");
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < n; ++i) {
    T* row = out.ptr() + i * c;
    const T mx = *std::max_element(row, row + c);
    T s = T(0);
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) row[j] -= lse;
  }
  return make_op<T>("log_softmax", std::move(out), {x}, [n, c](Node<T>& self) {
    if (auto* g = grad_slot(self, 0)) {
      // self.value holds log-probabilities
      for (std::size_t i = 0; i < n; ++i) {
        const T* lp = self.value.ptr() + i * c;
        const T* gy = self.grad.ptr() + i * c;
        T s = T(0);
        for (std::size_t j = 0; j < c; ++j) s += gy[j];
        for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += gy[j] - std::exp(lp[j]) * s;
      }
    }
  });
}

template <typename T>
Var<T> log(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = std::log(v);
  return make_op<T>("log", std::move(out), {x}, [](Node<T>& self) {
    if (auto* g = grad_slot(self, 0)) {
      const auto& xv = self.parents[0]->value;
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] / xv[i];
    }
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const ImageDims d = image_dims(x, "global_avg_pool");
  Tensor<T> out(Shape{d.n, d.c});
  const T inv = T(1) / static_cast<T>(d.hw());
  for (std::size_t i = 0; i < d.n * d.c; ++i) {
    const T* src = x.value().ptr() + i * d.hw();
    T acc = T(0);
    for (std::size_t p = 0; p < d.hw(); ++p) acc += src[p];
    out[i] = acc * inv;
  }
  return make_op<T>("global_avg_pool", std::move(out), {x}, [d, inv](Node<T>& self) {
    if (auto* g = grad_slot(self, 0)) {
      for (std::size_t i = 0; i < d.n * d.c; ++i) {
        const T up = self.grad[i] * inv;
        T* dst = g->ptr() + i * d.hw();
        for (std::size_t p = 0; p < d.hw(); ++p) dst[p] += up;
      }
    }
  });
}

template <typename T>
Var<T> center_pixel(const Var<T>& x) {
  const ImageDims d = image_dims(x, "center_pixel");
  require(d.h % 2 == 1 && d.w % 2 == 1, "center_pixel", "spatial size must be odd, got " + shape_str(x.shape()));
  const std::size_t center = (d.h / 2) * d.w + d.w / 2;
  Tensor<T> out(Shape{d.n, d.c});
  for (std::size_t i = 0; i < d.n * d.c; ++i) out[i] = x.value()[i * d.hw() + center];
  return make_op<T>("center_pixel", std::move(out), {x}, [d, center](Node<T>& self) {
    if (auto* g = grad_slot(self, 0)) {
      for (std::size_t i = 0; i < d.n * d.c; ++i) (*g)[i * d.hw() + center] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> center_scores(const Var<T>& q, const Var<T>& k) {
  const ImageDims d = image_dims(k, "center_scores");
  require_rank(q, 2, "center_scores", "q");
  require(q.shape()[0] == d.n && q.shape()[1] == d.c, "center_scores",
          "query " + shape_str(q.shape()) + " incompatible with keys " + shape_str(k.shape()));
  Tensor<T> out(Shape{d.n, 1, d.h, d.w}, T(0));
  for (std::size_t n = 0; n < d.n; ++n) {
    T* dst = out.ptr() + n * d.hw();
    for (std::size_t c = 0; c < d.c; ++c) {
      const T qc = q.value()[n * d.c + c];
      const T* src = k.value().ptr() + (n * d.c + c) * d.hw();
      for (std::size_t p = 0; p < d.hw(); ++p) dst[p] += qc * src[p];
    }
  }
  return make_op<T>("center_scores", std::move(out), {q, k}, [d](Node<T>& self) {
    const auto& qv = self.parents[0]->value;
    const auto& kv = self.parents[1]->value;
    Tensor<T>* gq = grad_slot(self, 0);
    Tensor<T>* gk = grad_slot(self, 1);
    for (std::size_t n = 0; n < d.n; ++n) {
      const T* gy = self.grad.ptr() + n * d.hw();
      for (std::size_t c = 0; c < d.c; ++c) {
        const std::size_t base = (n * d.c + c) * d.hw();
        if (gq) {
          T acc = T(0);
          for (std::size_t p = 0; p < d.hw(); ++p) acc += gy[p] * kv[base + p];
          (*gq)[n * d.c + c] += acc;
        }
        if (gk) {
          const T qc = qv[n * d.c + c];
          for (std::size_t p = 0; p < d.hw(); ++p) (*gk)[base + p] += gy[p] * qc;
        }
      }
    }
  });
}

template <typename T>
Var<T> spatial_gate(const Var<T>& a, const Var<T>& v) {
  const ImageDims d = image_dims(v, "spatial_gate");
  require(a.shape() == Shape{d.n, 1, d.h, d.w}, "spatial_gate",
          "gate " + shape_str(a.shape()) + " incompatible with values " + shape_str(v.shape()));
  Tensor<T> out(v.shape());
  for (std::size_t n = 0; n < d.n; ++n) {
    const T* gate = a.value().ptr() + n * d.hw();
    for (std::size_t c = 0; c < d.c; ++c) {
      const std::size_t base = (n * d.c + c) * d.hw();
      for (std::size_t p = 0; p < d.hw(); ++p) out[base + p] = gate[p] * v.value()[base + p];
    }
  }
  return make_op<T>("spatial_gate", std::move(out), {a, v}, [d](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& vv = self.parents[1]->value;
    Tensor<T>* ga = grad_slot(self, 0);
    Tensor<T>* gv = grad_slot(self, 1);
    for (std::size_t n = 0; n < d.n; ++n) {
      for (std::size_t c = 0; c < d.c; ++c) {
        const std::size_t base = (n * d.c + c) * d.hw();
        for (std::size_t p = 0; p < d.hw(); ++p) {
          const T up = self.grad[base + p];
          if (ga) (*ga)[n * d.hw() + p] += up * vv[base + p];
          if (gv) (*gv)[base + p] += up * av[n * d.hw() + p];
        }
      }
    }
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows", "x");
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  Tensor<T> out(Shape{rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < n, "gather_rows", "row index " + std::to_string(rows[i]) + " out of range");
    std::copy_n(x.value().ptr() + rows[i] * c, c, out.ptr() + i * c);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_op<T>("gather_rows", std::move(out), {x}, [c, idx = std::move(idx)](Node<T>& self) {
    if (auto* g = grad_slot(self, 0)) {
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < c; ++j) (*g)[idx[i] * c + j] += self.grad[i * c + j];
      }
    }
  });
}

template <typename T>
Var<T> nll(const Var<T>& logp, const Tensor<T>& targets) {
  require_rank(logp, 2, "nll", "logp");
  require(targets.shape() == logp.shape(), "nll",
          "targets " + shape_str(targets.shape()) + " vs log-probabilities " + shape_str(logp.shape()));
  const std::size_t n = logp.shape()[0];
  require(n > 0, "nll", "empty batch");
  T acc = T(0);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] != T(0)) acc += targets[i] * logp.value()[i];
  }
  const T inv = T(1) / static_cast<T>(n);
  return make_op<T>("nll", Tensor<T>::scalar(-acc * inv), {logp}, [inv, targets](Node<T>& self) {
    if (auto* g = grad_slot(self, 0)) {
      const T up = -self.grad[0] * inv;
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += up * targets[i];
    }
  });
}

#define XSCENE_INSTANTIATE_OPS(T)                                                                       \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                    \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                    \
  template Var<T> scale(const Var<T>&, T);                                                              \
  template Var<T> sum(const Var<T>&);                                                                   \
  template Var<T> mean(const Var<T>&);                                                                  \
  template Var<T> reshape(const Var<T>&, Shape);                                                        \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> affine(const Var<T>&, const Var<T>&, const Var<T>&);                                  \
  template Var<T> conv3x3(const Var<T>&, const Var<T>&, const Var<T>&);                                 \
  template Var<T> depthwise_conv3x3(const Var<T>&, const Var<T>&);                                      \
  template Var<T> pointwise_affine(const Var<T>&, const Var<T>&, const Var<T>&);                        \
  template Var<T> batch_norm2d(const Var<T>&, const Var<T>&, const Var<T>&, BatchNormStats<T>&, bool,   \
                               const BatchNormOptions&);                                                \
  template Var<T> leaky_relu(const Var<T>&, T);                                                         \
  template Var<T> gelu(const Var<T>&);                                                                  \
  template Var<T> softmax(const Var<T>&);                                                               \
  template Var<T> log_softmax(const Var<T>&);                                                           \
  template Var<T> log(const Var<T>&);                                                                   \
  template Var<T> global_avg_pool(const Var<T>&);                                                       \
  template Var<T> center_pixel(const Var<T>&);                                                          \
  template Var<T> center_scores(const Var<T>&, const Var<T>&);                                          \
  template Var<T> spatial_gate(const Var<T>&, const Var<T>&);                                           \
  template Var<T> gather_rows(const Var<T>&, std::span<const std::size_t>);                             \
  template Var<T> nll(const Var<T>&, const Tensor<T>&);

XSCENE_INSTANTIATE_OPS(float)
XSCENE_INSTANTIATE_OPS(double)

#undef XSCENE_INSTANTIATE_OPS

}  // namespace ops
}  // namespace xscene
