#pragma once

// Independent brute-force verifiers for the gradient machinery. These only
// ever call forward passes, so they share no code path with the analytic
// backward rules they are checking.
//
// Vectorization convention for the decomposition identity: vec() stacks
// COLUMNS, so vec(ABC) = (C^T kron A) vec(B). The identity below only holds
// under a consistent choice; this one is pinned project-wide.

#include <cstddef>
#include <set>
#include <vector>

#include "advit/model.hpp"
#include "advit/ops.hpp"
#include "advit/rng.hpp"
#include "advit/tensor.hpp"

namespace advit {

// Central finite differences of the cross-entropy loss per input pixel.
inline Tensor fd_input_grad(const ModelHandle& m, const Tensor& image, std::size_t label,
                            double step = 1e-5) {
  if (!(step > 0.0)) throw ShapeError("fd_input_grad: step must be positive");
  Tensor grad(image.shape);
  Tensor probe = image;
  for (std::size_t i = 0; i < image.numel(); ++i) {
    const double orig = probe.data[i];
    probe.data[i] = orig + step;
    const double up = model_loss(m, probe, label);
    probe.data[i] = orig - step;
    const double down = model_loss(m, probe, label);
    probe.data[i] = orig;
    grad.data[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

// Finite differences of the frozen-attention loss: one forward at the base
// image records the attention weights of every block in `frozen_blocks`;
// perturbed forwards reuse those recorded weights and recompute attention
// everywhere else. The exact gradient of this loss is what the
// stop-attention-gradient backward computes.
inline Tensor fd_frozen_attention_grad(const ModelHandle& m, const Tensor& image,
                                       std::size_t label,
                                       const std::set<std::size_t>& frozen_blocks,
                                       double step = 1e-5) {
  if (m.kind != ModelKind::vit) {
    throw ShapeError("fd_frozen_attention_grad: needs a vit model");
  }
  for (std::size_t b : frozen_blocks) {
    if (b >= m.vit.depth) {
      throw ShapeError("fd_frozen_attention_grad: block " + std::to_string(b) +
                       " out of range for depth " + std::to_string(m.vit.depth));
    }
  }
  ViTCache base = vit_forward(m.vit, m.params, image);
  AttnOverrides overrides;
  for (std::size_t b : frozen_blocks) overrides[b] = base.blocks[b].attn;

  auto frozen_loss = [&](const Tensor& x) {
    ViTCache c = vit_forward(m.vit, m.params, x, &overrides);
    return cross_entropy(c.logits, label).loss;
  };

  Tensor grad(image.shape);
  Tensor probe = image;
  for (std::size_t i = 0; i < image.numel(); ++i) {
    const double orig = probe.data[i];
    probe.data[i] = orig + step;
    const double up = frozen_loss(probe);
    probe.data[i] = orig - step;
    const double down = frozen_loss(probe);
    probe.data[i] = orig;
    grad.data[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

namespace detail {

// Dense Kronecker product, row-major result.
inline Tensor kron(const Tensor& a, const Tensor& b) {
  const std::size_t ar = a.shape[0], ac = a.shape[1];
  const std::size_t br = b.shape[0], bc = b.shape[1];
  Tensor out({ar * br, ac * bc});
  for (std::size_t i = 0; i < ar; ++i)
    for (std::size_t j = 0; j < ac; ++j) {
      const double av = a.at2(i, j);
      for (std::size_t p = 0; p < br; ++p)
        for (std::size_t q = 0; q < bc; ++q)
          out.at2(i * br + p, j * bc + q) = av * b.at2(p, q);
    }
  return out;
}

// Column-stacked vectorization of a matrix.
inline Tensor vec_cols(const Tensor& m) {
  const std::size_t r = m.shape[0], c = m.shape[1];
  Tensor v({r * c});
  for (std::size_t j = 0; j < c; ++j)
    for (std::size_t i = 0; i < r; ++i) v.data[j * r + i] = m.at2(i, j);
  return v;
}

inline Tensor identity(std::size_t n) {
  Tensor id({n, n});
  for (std::size_t i = 0; i < n; ++i) id.at2(i, i) = 1.0;
  return id;
}

// Jacobian of vec_cols(f(Z)) w.r.t. vec_cols(Z) by central differences.
template <typename F>
Tensor fd_jacobian(const F& f, const Tensor& z, double step) {
  Tensor out0 = vec_cols(f(z));
  const std::size_t rows_z = z.shape[0], cols_z = z.shape[1];
  Tensor jac({out0.numel(), rows_z * cols_z});
  Tensor probe = z;
  for (std::size_t j = 0; j < cols_z; ++j)
    for (std::size_t i = 0; i < rows_z; ++i) {
      const std::size_t col = j * rows_z + i;
      const double orig = probe.at2(i, j);
      probe.at2(i, j) = orig + step;
      Tensor up = vec_cols(f(probe));
      probe.at2(i, j) = orig - step;
      Tensor down = vec_cols(f(probe));
      probe.at2(i, j) = orig;
      for (std::size_t r = 0; r < up.numel(); ++r)
        jac.at2(r, col) = (up.data[r] - down.data[r]) / (2.0 * step);
    }
  return jac;
}

}  // namespace detail

// Verifies the decomposition of the single-head attention Jacobian
//   d vec(A (Z Wv)) / d vec(Z)
//     = (I kron A) d vec(Z Wv)/d vec(Z)  +  ((Z Wv)^T kron I) d vec(A)/d vec(Z)
// by assembling all three Jacobians densely (the full map and both factors
// by finite differences, the Kronecker products by brute force) and
// returning the max absolute discrepancy.
inline double kronecker_identity_check(RngStream& rng, std::size_t n_tokens,
                                       std::size_t dim, std::size_t head_dim,
                                       double step = 1e-5) {
  if (n_tokens > 6 || dim > 6 || head_dim > 6) {
    throw ShapeError("kronecker_identity_check: sizes too large for dense Jacobians");
  }
  auto rnd = [&rng](Shape s) {
    Tensor t(std::move(s));
    for (double& v : t.data) v = rng.next_normal(0.0, 1.0);
    return t;
  };
  const Tensor z = rnd({n_tokens, dim});
  const Tensor wq = rnd({dim, head_dim});
  const Tensor wk = rnd({dim, head_dim});
  const Tensor wv = rnd({dim, head_dim});
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  auto attention = [&](const Tensor& zz) {
    Tensor scores = scale(matmul_nt(matmul(zz, wq), matmul(zz, wk)), inv_sqrt);
    return softmax_rows_fwd(scores);
  };
  auto value = [&](const Tensor& zz) { return matmul(zz, wv); };
  auto head_out = [&](const Tensor& zz) { return matmul(attention(zz), value(zz)); };

  Tensor jac_full = detail::fd_jacobian(head_out, z, step);
  Tensor jac_value = detail::fd_jacobian(value, z, step);
  Tensor jac_attn = detail::fd_jacobian(attention, z, step);

  Tensor term1 = matmul(detail::kron(detail::identity(head_dim), attention(z)), jac_value);
  Tensor term2 = matmul(detail::kron(transpose(value(z)), detail::identity(n_tokens)),
                        jac_attn);

  double worst = 0.0;
  for (std::size_t i = 0; i < jac_full.numel(); ++i) {
    worst = std::max(worst,
                     std::fabs(jac_full.data[i] - term1.data[i] - term2.data[i]));
  }
  return worst;
}

}  // namespace advit
