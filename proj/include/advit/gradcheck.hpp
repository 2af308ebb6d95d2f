#pragma once

// The gradcheck suite behind the CLI subcommand: every backward rule against
// central finite differences, the routed ViT gradients against their frozen
// oracles, and the attention-Jacobian decomposition identity.

#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "advit/model.hpp"
#include "advit/oracles.hpp"

namespace advit {

struct GradCheckLine {
  std::string name;
  double value = 0.0;      // max relative error (absolute for the identity check)
  double tolerance = 1e-5;
  bool pass() const { return value < tolerance; }
};

namespace detail {

inline Tensor gc_random(RngStream& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = lo + (hi - lo) * rng.next_double();
  return t;
}

inline double gc_dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.data[i] * b.data[i];
  return s;
}

inline Tensor gc_fd(const std::function<double(const Tensor&)>& f, const Tensor& x,
                    double step = 1e-5) {
  Tensor g(x.shape);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe.data[i];
    probe.data[i] = orig + step;
    const double up = f(probe);
    probe.data[i] = orig - step;
    const double down = f(probe);
    probe.data[i] = orig;
    g.data[i] = (up - down) / (2.0 * step);
  }
  return g;
}

}  // namespace detail

inline std::vector<GradCheckLine> run_gradcheck(std::uint64_t seed) {
  using detail::gc_dot;
  using detail::gc_fd;
  using detail::gc_random;
  std::vector<GradCheckLine> lines;
  RngStream rng(seed);

  {
    Tensor in = gc_random(rng, {3, 4}), w = gc_random(rng, {4, 2}), b = gc_random(rng, {2});
    Tensor probe = gc_random(rng, {3, 2});
    LinearGrads g = linear_bwd(in, w, probe);
    double e = max_rel_diff(
        g.grad_input, gc_fd([&](const Tensor& x) { return gc_dot(linear_fwd(x, w, b), probe); }, in));
    e = std::max(e, max_rel_diff(g.grad_weight,
                                 gc_fd([&](const Tensor& x) { return gc_dot(linear_fwd(in, x, b), probe); }, w)));
    e = std::max(e, max_rel_diff(g.grad_bias,
                                 gc_fd([&](const Tensor& x) { return gc_dot(linear_fwd(in, w, x), probe); }, b)));
    lines.push_back({"linear_bwd", e});
  }
  {
    Tensor logits = gc_random(rng, {4, 5}, -3, 3);
    Tensor probe = gc_random(rng, {4, 5});
    Tensor g = softmax_rows_bwd(softmax_rows_fwd(logits), probe);
    double e = max_rel_diff(
        g, gc_fd([&](const Tensor& x) { return gc_dot(softmax_rows_fwd(x), probe); }, logits));
    lines.push_back({"softmax_rows_bwd", e});
  }
  {
    Tensor x = gc_random(rng, {3, 6}), gm = gc_random(rng, {6}, 0.5, 1.5), bt = gc_random(rng, {6});
    Tensor probe = gc_random(rng, {3, 6});
    LayerNormCache cache;
    layer_norm_fwd(x, gm, bt, &cache);
    LayerNormGrads g = layer_norm_bwd(x, gm, cache, probe);
    double e = max_rel_diff(
        g.grad_input, gc_fd([&](const Tensor& xx) { return gc_dot(layer_norm_fwd(xx, gm, bt), probe); }, x));
    lines.push_back({"layer_norm_bwd", e});
  }
  {
    Tensor x = gc_random(rng, {2, 7}, -3, 3);
    Tensor probe = gc_random(rng, {2, 7});
    double e = max_rel_diff(gelu_bwd(x, probe),
                            gc_fd([&](const Tensor& xx) { return gc_dot(gelu_fwd(xx), probe); }, x));
    lines.push_back({"gelu_bwd", e});
  }
  {
    Tensor x = gc_random(rng, {5, 4, 2}), k = gc_random(rng, {3, 3, 2, 3}), b = gc_random(rng, {3});
    Tensor probe = gc_random(rng, {5, 4, 3});
    Conv2dGrads g = conv2d_bwd(x, k, probe);
    double e = max_rel_diff(
        g.grad_input, gc_fd([&](const Tensor& xx) { return gc_dot(conv2d_fwd(xx, k, b), probe); }, x));
    e = std::max(e, max_rel_diff(g.grad_kernel,
                                 gc_fd([&](const Tensor& kk) { return gc_dot(conv2d_fwd(x, kk, b), probe); }, k)));
    lines.push_back({"conv2d_bwd", e});
  }
  {
    Tensor x = gc_random(rng, {4, 4, 2});
    Tensor probe = gc_random(rng, {2, 2, 2});
    double e = max_rel_diff(avgpool_bwd(x.shape, 2, probe),
                            gc_fd([&](const Tensor& xx) { return gc_dot(avgpool_fwd(xx, 2), probe); }, x));
    lines.push_back({"avgpool_bwd", e});
  }
  {
    Tensor logits = gc_random(rng, {6}, -2, 2);
    double e = max_rel_diff(cross_entropy(logits, 2).grad_logits,
                            gc_fd([&](const Tensor& x) { return cross_entropy(x, 2).loss; }, logits));
    lines.push_back({"cross_entropy_bwd", e});
  }

  // routed vit gradients against the finite-difference oracles
  ViTConfig cfg;
  cfg.image_h = cfg.image_w = 8;
  cfg.channels = 3;
  cfg.patch_size = 4;
  cfg.embed_dim = 16;
  cfg.head_dim = 8;
  cfg.num_heads = 2;
  cfg.depth = 2;
  cfg.mlp_hidden = 24;
  cfg.num_classes = 4;
  ModelHandle m = make_vit_random(cfg, rng.next_u64(), "gradcheck");
  Tensor img({8, 8, 3});
  for (double& v : img.data) v = rng.next_double();
  {
    Tensor analytic = vit_input_grad(cfg, m.params, img, 1,
                                     GradRoutingPolicy::full_gradient(cfg.depth));
    lines.push_back({"vit_full_vs_fd", max_rel_diff(analytic, fd_input_grad(m, img, 1))});
  }
  {
    Tensor analytic = vit_input_grad(cfg, m.params, img, 1, GradRoutingPolicy::pna_all(cfg.depth));
    lines.push_back({"vit_pna_vs_frozen_fd",
                     max_rel_diff(analytic, fd_frozen_attention_grad(m, img, 1, {0, 1}))});
  }
  {
    GradRoutingPolicy mixed = GradRoutingPolicy::full_gradient(cfg.depth);
    mixed.attention_grad_enabled[1] = false;
    Tensor analytic = vit_input_grad(cfg, m.params, img, 1, mixed);
    lines.push_back({"vit_chunk_vs_frozen_fd",
                     max_rel_diff(analytic, fd_frozen_attention_grad(m, img, 1, {1}))});
  }
  {
    CNNConfig ccfg;
    ccfg.image_h = ccfg.image_w = 8;
    ccfg.channels = 3;
    ccfg.conv_channels = {4};
    ccfg.kernel_size = 3;
    ccfg.pool_after = {2};
    ccfg.num_classes = 4;
    ModelHandle cm = make_cnn(ccfg, rng.next_u64(), "gradcheck_cnn");
    CNNGradients g = cnn_backward(ccfg, cm.params, img, 2, false);
    lines.push_back({"cnn_input_grad_vs_fd", max_rel_diff(g.input, fd_input_grad(cm, img, 2))});
  }
  {
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
      worst = std::max(worst, kronecker_identity_check(rng, 3, 4, 2));
    }
    lines.push_back({"attention_jacobian_identity", worst, 1e-6});
  }
  return lines;
}

inline bool print_gradcheck(const std::vector<GradCheckLine>& lines, std::FILE* out = stdout) {
  bool all_pass = true;
  for (const GradCheckLine& l : lines) {
    std::fprintf(out, "%-30s %.3e (tol %.0e) %s\n", l.name.c_str(), l.value, l.tolerance,
                 l.pass() ? "PASS" : "FAIL");
    all_pass &= l.pass();
  }
  return all_pass;
}

}  // namespace advit
