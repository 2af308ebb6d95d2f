#pragma once

// Differentiable layer primitives with hand-derived backward rules.
// All functions are pure: inputs are never mutated, every call returns
// fresh tensors. Gradients follow the convention grad_x = dLoss/dx for the
// scalar loss the caller is backpropagating.

#include <cmath>
#include <cstddef>

#include "advit/tensor.hpp"

namespace advit {

// ---------------------------------------------------------------------------
// matmul helpers (2-D only)

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require_ndim(a, 2, "matmul");
  require_ndim(b, 2, "matmul");
  if (a.shape[1] != b.shape[0]) {
    throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  }
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = &a.data[i * k];
    double* orow = &out.data[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = &b.data[p * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

// a · bᵀ
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_ndim(a, 2, "matmul_nt");
  require_ndim(b, 2, "matmul_nt");
  if (a.shape[1] != b.shape[1]) {
    throw ShapeError("matmul_nt: inner dims differ, " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  }
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[0];
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = &a.data[i * k];
    double* orow = &out.data[i * n];
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = &b.data[j * k];
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      orow[j] = s;
    }
  }
  return out;
}

// aᵀ · b
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_ndim(a, 2, "matmul_tn");
  require_ndim(b, 2, "matmul_tn");
  if (a.shape[0] != b.shape[0]) {
    throw ShapeError("matmul_tn: inner dims differ, " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  }
  const std::size_t k = a.shape[0], m = a.shape[1], n = b.shape[1];
  Tensor out({m, n});
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = &a.data[p * m];
    const double* brow = &b.data[p * n];
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* orow = &out.data[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  require_ndim(a, 2, "transpose");
  Tensor out({a.shape[1], a.shape[0]});
  for (std::size_t i = 0; i < a.shape[0]; ++i)
    for (std::size_t j = 0; j < a.shape[1]; ++j) out.at2(j, i) = a.at2(i, j);
  return out;
}

// ---------------------------------------------------------------------------
// linear

inline Tensor linear_fwd(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_ndim(input, 2, "linear_fwd");
  require_ndim(weight, 2, "linear_fwd");
  if (input.shape[1] != weight.shape[0]) {
    throw ShapeError("linear_fwd: input " + shape_str(input.shape) +
                     " does not conform with weight " + shape_str(weight.shape));
  }
  require_shape(bias, {weight.shape[1]}, "linear_fwd bias");
  Tensor out = matmul(input, weight);
  const std::size_t m = out.shape[0], n = out.shape[1];
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += bias.data[j];
  ensure_finite(out, "linear_fwd");
  return out;
}

struct LinearGrads {
  Tensor grad_input;
  Tensor grad_weight;
  Tensor grad_bias;
};

inline LinearGrads linear_bwd(const Tensor& input, const Tensor& weight,
                              const Tensor& grad_out) {
  require_ndim(grad_out, 2, "linear_bwd");
  if (input.shape[1] != weight.shape[0] || grad_out.shape[0] != input.shape[0] ||
      grad_out.shape[1] != weight.shape[1]) {
    throw ShapeError("linear_bwd: shapes do not conform, input " + shape_str(input.shape) +
                     ", weight " + shape_str(weight.shape) + ", grad_out " +
                     shape_str(grad_out.shape));
  }
  LinearGrads g;
  g.grad_input = matmul_nt(grad_out, weight);
  g.grad_weight = matmul_tn(input, grad_out);
  g.grad_bias = Tensor({weight.shape[1]});
  for (std::size_t i = 0; i < grad_out.shape[0]; ++i)
    for (std::size_t j = 0; j < grad_out.shape[1]; ++j)
      g.grad_bias.data[j] += grad_out.data[i * grad_out.shape[1] + j];
  return g;
}

// ---------------------------------------------------------------------------
// softmax over rows

inline Tensor softmax_rows_fwd(const Tensor& logits) {
  require_ndim(logits, 2, "softmax_rows_fwd");
  ensure_finite(logits, "softmax_rows_fwd input");
  const std::size_t r = logits.shape[0], c = logits.shape[1];
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = &logits.data[i * c];
    double* orow = &out.data[i * c];
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (std::size_t j = 0; j < c; ++j) orow[j] /= sum;
  }
  return out;
}

inline Tensor softmax_rows_bwd(const Tensor& probs, const Tensor& grad_out) {
  require_same_shape(probs, grad_out, "softmax_rows_bwd");
  const std::size_t r = probs.shape[0], c = probs.shape[1];
  Tensor grad({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const double* p = &probs.data[i * c];
    const double* g = &grad_out.data[i * c];
    double dot = 0.0;
    for (std::size_t j = 0; j < c; ++j) dot += p[j] * g[j];
    for (std::size_t j = 0; j < c; ++j) grad.data[i * c + j] = p[j] * (g[j] - dot);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// layer norm over the last axis, eps fixed at 1e-5

constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  Tensor mean;  // one entry per row
  Tensor rstd;
};

inline Tensor layer_norm_fwd(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                             LayerNormCache* cache = nullptr) {
  if (x.ndim() == 0) throw ShapeError("layer_norm_fwd: scalar input");
  const std::size_t d = x.shape.back();
  require_shape(gamma, {d}, "layer_norm_fwd gamma");
  require_shape(beta, {d}, "layer_norm_fwd beta");
  const std::size_t rows = x.numel() / d;
  Tensor out(x.shape);
  Tensor mean({rows}), rstd({rows});
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = &x.data[i * d];
    double m = 0.0;
    for (std::size_t j = 0; j < d; ++j) m += row[j];
    m /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - m;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
    mean.data[i] = m;
    rstd.data[i] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      out.data[i * d + j] = (row[j] - m) * rs * gamma.data[j] + beta.data[j];
    }
  }
  if (cache) {
    cache->mean = std::move(mean);
    cache->rstd = std::move(rstd);
  }
  ensure_finite(out, "layer_norm_fwd");
  return out;
}

struct LayerNormGrads {
  Tensor grad_input;
  Tensor grad_gamma;
  Tensor grad_beta;
};

inline LayerNormGrads layer_norm_bwd(const Tensor& x, const Tensor& gamma,
                                     const LayerNormCache& cache, const Tensor& grad_out) {
  require_same_shape(x, grad_out, "layer_norm_bwd");
  const std::size_t d = x.shape.back();
  const std::size_t rows = x.numel() / d;
  LayerNormGrads g;
  g.grad_input = Tensor(x.shape);
  g.grad_gamma = Tensor({d});
  g.grad_beta = Tensor({d});
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = &x.data[i * d];
    const double* go = &grad_out.data[i * d];
    const double m = cache.mean.data[i];
    const double rs = cache.rstd.data[i];
    double sum_gy = 0.0, sum_gyx = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double xhat = (row[j] - m) * rs;
      const double gy = go[j] * gamma.data[j];
      sum_gy += gy;
      sum_gyx += gy * xhat;
      g.grad_gamma.data[j] += go[j] * xhat;
      g.grad_beta.data[j] += go[j];
    }
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double xhat = (row[j] - m) * rs;
      const double gy = go[j] * gamma.data[j];
      g.grad_input.data[i * d + j] = rs * (gy - inv_d * sum_gy - xhat * inv_d * sum_gyx);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// GELU, tanh approximation (pinned so forward values are exact across builds):
//   gelu(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))

constexpr double kGeluC = 0.7978845608028653558798921;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

inline double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

inline Tensor gelu_fwd(const Tensor& x) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) out.data[i] = gelu_scalar(x.data[i]);
  ensure_finite(out, "gelu_fwd");
  return out;
}

inline Tensor gelu_bwd(const Tensor& x, const Tensor& grad_out) {
  require_same_shape(x, grad_out, "gelu_bwd");
  Tensor grad(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = x.data[i];
    const double u = kGeluC * (v + kGeluA * v * v * v);
    const double t = std::tanh(u);
    const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
    const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
    grad.data[i] = grad_out.data[i] * d;
  }
  return grad;
}

// ---------------------------------------------------------------------------
// conv2d on H x W x C layout, stride 1, zero "same" padding, odd kernel.
// kernel layout: kh x kw x Cin x Cout.

inline Tensor conv2d_fwd(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  require_ndim(input, 3, "conv2d_fwd");
  require_ndim(kernel, 4, "conv2d_fwd");
  const std::size_t h = input.shape[0], w = input.shape[1], cin = input.shape[2];
  const std::size_t kh = kernel.shape[0], kw = kernel.shape[1];
  const std::size_t cout = kernel.shape[3];
  if (kernel.shape[2] != cin) {
    throw ShapeError("conv2d_fwd: kernel channels " + shape_str(kernel.shape) +
                     " do not match input " + shape_str(input.shape));
  }
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d_fwd: kernel dims must be odd");
  require_shape(bias, {cout}, "conv2d_fwd bias");
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(kw / 2);
  Tensor out({h, w, cout});
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      double* opix = &out.data[(r * w + c) * cout];
      for (std::size_t j = 0; j < cout; ++j) opix[j] = bias.data[j];
      for (std::size_t u = 0; u < kh; ++u) {
        const std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r + u) - ph;
        if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t v = 0; v < kw; ++v) {
          const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(c + v) - pw;
          if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(w)) continue;
          const double* ipix = &input.data[(static_cast<std::size_t>(rr) * w +
                                            static_cast<std::size_t>(cc)) * cin];
          const double* krow = &kernel.data[((u * kw + v) * cin) * cout];
          for (std::size_t i = 0; i < cin; ++i) {
            const double iv = ipix[i];
            const double* kc = &krow[i * cout];
            for (std::size_t j = 0; j < cout; ++j) opix[j] += iv * kc[j];
          }
        }
      }
    }
  }
  ensure_finite(out, "conv2d_fwd");
  return out;
}

struct Conv2dGrads {
  Tensor grad_input;
  Tensor grad_kernel;
  Tensor grad_bias;
};

inline Conv2dGrads conv2d_bwd(const Tensor& input, const Tensor& kernel,
                              const Tensor& grad_out) {
  const std::size_t h = input.shape[0], w = input.shape[1], cin = input.shape[2];
  const std::size_t kh = kernel.shape[0], kw = kernel.shape[1];
  const std::size_t cout = kernel.shape[3];
  require_shape(grad_out, {h, w, cout}, "conv2d_bwd grad_out");
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(kw / 2);
  Conv2dGrads g;
  g.grad_input = Tensor(input.shape);
  g.grad_kernel = Tensor(kernel.shape);
  g.grad_bias = Tensor({cout});
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double* gpix = &grad_out.data[(r * w + c) * cout];
      for (std::size_t j = 0; j < cout; ++j) g.grad_bias.data[j] += gpix[j];
      for (std::size_t u = 0; u < kh; ++u) {
        const std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r + u) - ph;
        if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t v = 0; v < kw; ++v) {
          const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(c + v) - pw;
          if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(w)) continue;
          const std::size_t ioff = (static_cast<std::size_t>(rr) * w +
                                    static_cast<std::size_t>(cc)) * cin;
          for (std::size_t i = 0; i < cin; ++i) {
            const double iv = input.data[ioff + i];
            const std::size_t koff = ((u * kw + v) * cin + i) * cout;
            double acc = 0.0;
            for (std::size_t j = 0; j < cout; ++j) {
              g.grad_kernel.data[koff + j] += iv * gpix[j];
              acc += kernel.data[koff + j] * gpix[j];
            }
            g.grad_input.data[ioff + i] += acc;
          }
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// average pooling, square window == stride, H and W divisible by the window

inline Tensor avgpool_fwd(const Tensor& input, std::size_t win) {
  require_ndim(input, 3, "avgpool_fwd");
  const std::size_t h = input.shape[0], w = input.shape[1], c = input.shape[2];
  if (win == 0 || h % win != 0 || w % win != 0) {
    throw ShapeError("avgpool_fwd: window " + std::to_string(win) +
                     " does not divide " + shape_str(input.shape));
  }
  const std::size_t oh = h / win, ow = w / win;
  Tensor out({oh, ow, c});
  const double inv = 1.0 / static_cast<double>(win * win);
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t cc = 0; cc < ow; ++cc)
      for (std::size_t u = 0; u < win; ++u)
        for (std::size_t v = 0; v < win; ++v) {
          const double* ipix = &input.data[((r * win + u) * w + cc * win + v) * c];
          double* opix = &out.data[(r * ow + cc) * c];
          for (std::size_t k = 0; k < c; ++k) opix[k] += ipix[k] * inv;
        }
  return out;
}

inline Tensor avgpool_bwd(const Shape& input_shape, std::size_t win, const Tensor& grad_out) {
  const std::size_t h = input_shape[0], w = input_shape[1], c = input_shape[2];
  const std::size_t oh = h / win, ow = w / win;
  require_shape(grad_out, {oh, ow, c}, "avgpool_bwd grad_out");
  Tensor grad({h, w, c});
  const double inv = 1.0 / static_cast<double>(win * win);
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t cc = 0; cc < ow; ++cc)
      for (std::size_t u = 0; u < win; ++u)
        for (std::size_t v = 0; v < win; ++v) {
          const double* gpix = &grad_out.data[(r * ow + cc) * c];
          double* ipix = &grad.data[((r * win + u) * w + cc * win + v) * c];
          for (std::size_t k = 0; k < c; ++k) ipix[k] += gpix[k] * inv;
        }
  return grad;
}

// ---------------------------------------------------------------------------
// cross entropy on raw logits (1-D), integer label; grad = softmax - one_hot

struct CrossEntropyResult {
  double loss;
  Tensor grad_logits;
};

inline CrossEntropyResult cross_entropy(const Tensor& logits, std::size_t label) {
  require_ndim(logits, 1, "cross_entropy");
  ensure_finite(logits, "cross_entropy input");
  const std::size_t k = logits.shape[0];
  if (label >= k) {
    throw ShapeError("cross_entropy: label " + std::to_string(label) +
                     " out of range for " + std::to_string(k) + " classes");
  }
  double mx = logits.data[0];
  for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits.data[j]);
  double sum = 0.0;
  CrossEntropyResult r;
  r.grad_logits = Tensor({k});
  for (std::size_t j = 0; j < k; ++j) {
    r.grad_logits.data[j] = std::exp(logits.data[j] - mx);
    sum += r.grad_logits.data[j];
  }
  r.loss = std::log(sum) - (logits.data[label] - mx);
  for (std::size_t j = 0; j < k; ++j) r.grad_logits.data[j] /= sum;
  r.grad_logits.data[label] -= 1.0;
  return r;
}

}  // namespace advit
