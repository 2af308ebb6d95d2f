#pragma once

// Attack engine. One iteration of the dual attack: sample a patch subset,
// take the loss gradient at x + M*delta under the configured gradient
// routing, add the masked L2-growth term, step (optionally through a
// momentum accumulator and a sign map), then clip to the L-inf ball and to
// valid pixels.
//
// Internal pixel scale is [0, 1]; budgets quoted in /255 units are divided
// by 255 at the interface.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advit/model.hpp"
#include "advit/rng.hpp"
#include "advit/tensor.hpp"

namespace advit {

struct DegenerateGradientError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AttackConfig {
  double epsilon = 16.0 / 255.0;  // L-inf budget, [0,1] pixel units
  int iterations = 10;
  double step_size = 0.0;         // alpha; 0 means the default epsilon/iterations
  int patch_count = 0;            // T; 0 means all patches
  double lambda = 0.0;            // weight of the L2-growth term
  bool use_pna = false;           // stop attention gradients in the surrogate
  bool use_patchout = false;      // resample a T-patch mask each iteration
  bool use_l2 = false;            // enable the lambda * ||delta||_2 term
  bool l2_unmasked = false;       // let the L2 term update unselected patches
  double mi_momentum = 0.0;       // mu; 0 disables the momentum accumulator
  double sgm_decay = 1.0;         // gamma applied to mlp residual-branch gradients
  bool sign_step = true;
  std::uint64_t seed = 0;
  // explicit per-block routing, for experiments gating only some blocks;
  // overrides use_pna/sgm_decay when set
  std::optional<GradRoutingPolicy> policy_override;

  double effective_step() const {
    return step_size > 0.0 ? step_size : epsilon / static_cast<double>(iterations);
  }

  void validate() const {
    if (!(epsilon > 0.0) || epsilon > 1.0) {
      throw ShapeError("attack config: epsilon must be in (0, 1]");
    }
    if (iterations < 1) throw ShapeError("attack config: iterations must be >= 1");
    if (!(effective_step() > 0.0)) throw ShapeError("attack config: step must be positive");
    if (lambda < 0.0) throw ShapeError("attack config: lambda must be >= 0");
    if (mi_momentum < 0.0) throw ShapeError("attack config: momentum must be >= 0");
    if (!(sgm_decay > 0.0) || sgm_decay > 1.0) {
      throw ShapeError("attack config: sgm decay must be in (0, 1]");
    }
  }

  GradRoutingPolicy policy_for(const ModelHandle& m) const {
    if (policy_override) return *policy_override;
    const std::size_t depth = m.kind == ModelKind::vit ? m.vit.depth : 1;
    GradRoutingPolicy p = use_pna ? GradRoutingPolicy::pna_all(depth)
                                  : GradRoutingPolicy::full_gradient(depth);
    std::fill(p.mlp_grad_decay.begin(), p.mlp_grad_decay.end(), sgm_decay);
    return p;
  }
};

struct PatchGeometry {
  std::size_t image_h, image_w, channels, patch_size;
  std::size_t num_patches() const {
    return (image_h / patch_size) * (image_w / patch_size);
  }
};

inline PatchGeometry geometry_of(const ModelHandle& m) {
  if (m.kind == ModelKind::vit) {
    return {m.vit.image_h, m.vit.image_w, m.vit.channels, m.vit.patch_size};
  }
  // cnn surrogates carry no patch grid; treat the whole image as one patch
  return {m.cnn.image_h, m.cnn.image_w, m.cnn.channels, m.cnn.image_h};
}

struct PatchMask {
  std::vector<std::size_t> selected;  // patch indices, sorted
  Tensor mask;                        // H x W x C, entries in {0, 1}

  std::size_t ones() const {
    std::size_t n = 0;
    for (double v : mask.data) n += (v == 1.0);
    return n;
  }
};

inline PatchMask mask_from_selection(std::vector<std::size_t> selected,
                                     const PatchGeometry& geo) {
  PatchMask pm;
  pm.selected = std::move(selected);
  pm.mask = Tensor({geo.image_h, geo.image_w, geo.channels});
  const std::size_t grid_w = geo.image_w / geo.patch_size;
  for (std::size_t idx : pm.selected) {
    const std::size_t gr = idx / grid_w, gc = idx % grid_w;
    for (std::size_t u = 0; u < geo.patch_size; ++u)
      for (std::size_t v = 0; v < geo.patch_size; ++v)
        for (std::size_t k = 0; k < geo.channels; ++k)
          pm.mask.at3(gr * geo.patch_size + u, gc * geo.patch_size + v, k) = 1.0;
  }
  return pm;
}

inline PatchMask full_mask(const PatchGeometry& geo) {
  std::vector<std::size_t> all(geo.num_patches());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return mask_from_selection(std::move(all), geo);
}

inline PatchMask sample_patch_mask(RngStream& rng, std::size_t num_patches,
                                   std::size_t count, const PatchGeometry& geo) {
  if (count < 1 || count > num_patches) {
    throw ShapeError("sample_patch_mask: T=" + std::to_string(count) +
                     " out of range [1, " + std::to_string(num_patches) + "]");
  }
  if (geo.num_patches() != num_patches) {
    throw ShapeError("sample_patch_mask: geometry gives " +
                     std::to_string(geo.num_patches()) + " patches, caller expects " +
                     std::to_string(num_patches));
  }
  return mask_from_selection(rng.sample_without_replacement(num_patches, count), geo);
}

// Gradient of  J(f(x + M*delta), y) + lambda*||delta||_2  with respect to
// delta. The loss term is the routed input gradient at x + M*delta chained
// through the mask; the L2 term uses the subgradient 0 at delta = 0 and is
// masked as well unless l2_unmasked is set.
inline Tensor objective_grad(const ModelHandle& surrogate, const Tensor& x,
                             std::size_t label, const Tensor& delta, const PatchMask& mask,
                             const AttackConfig& cfg, double* objective_out = nullptr) {
  require_same_shape(x, delta, "objective_grad");
  require_same_shape(x, mask.mask, "objective_grad mask");
  Tensor perturbed(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    perturbed.data[i] = x.data[i] + mask.mask.data[i] * delta.data[i];
  }
  double loss = 0.0;
  Tensor grad = model_input_grad(surrogate, perturbed, label, cfg.policy_for(surrogate), &loss);
  for (std::size_t i = 0; i < grad.numel(); ++i) grad.data[i] *= mask.mask.data[i];

  if (cfg.use_l2 && cfg.lambda > 0.0) {
    const double norm = l2_norm(delta);
    if (norm > 0.0) {
      const double s = cfg.lambda / norm;
      for (std::size_t i = 0; i < grad.numel(); ++i) {
        const double m = cfg.l2_unmasked ? 1.0 : mask.mask.data[i];
        grad.data[i] += s * delta.data[i] * m;
      }
    }
    if (objective_out) *objective_out = loss + cfg.lambda * norm;
  } else if (objective_out) {
    *objective_out = loss;
  }
  return grad;
}

struct AttackState {
  Tensor delta;
  Tensor momentum;
  int iteration = 0;
};

inline AttackState init_attack_state(const Tensor& x) {
  return {Tensor(x.shape), Tensor(x.shape), 0};
}

// One ascent step followed by the two clips. The feasibility invariants
// ||delta||_inf <= eps and x + delta in [0,1] hold exactly on return.
inline AttackState attack_step(const AttackState& state, const Tensor& grad,
                               const Tensor& x, const AttackConfig& cfg) {
  require_same_shape(state.delta, grad, "attack_step");
  AttackState next = state;
  next.iteration = state.iteration + 1;

  const Tensor* direction = &grad;
  if (cfg.mi_momentum > 0.0) {
    const double l1 = l1_norm(grad);
    if (l1 == 0.0) {
      throw DegenerateGradientError("attack_step: zero gradient with momentum enabled");
    }
    for (std::size_t i = 0; i < grad.numel(); ++i) {
      next.momentum.data[i] = cfg.mi_momentum * state.momentum.data[i] + grad.data[i] / l1;
    }
    direction = &next.momentum;
  }

  const double alpha = cfg.effective_step();
  const double eps = cfg.epsilon;
  for (std::size_t i = 0; i < next.delta.numel(); ++i) {
    double step = (*direction).data[i];
    if (cfg.sign_step) step = (step > 0.0) ? 1.0 : (step < 0.0 ? -1.0 : 0.0);
    double d = next.delta.data[i] + alpha * step;
    d = std::min(std::max(d, -eps), eps);
    // keep x + delta a realizable pixel
    const double px = x.data[i];
    if (px + d > 1.0) d = 1.0 - px;
    if (px + d < 0.0) d = -px;
    while (px + d > 1.0) d = std::nextafter(d, -1.0);
    while (px + d < 0.0) d = std::nextafter(d, 1.0);
    next.delta.data[i] = d;
  }
  return next;
}

inline void check_state_invariants(const AttackState& state, const Tensor& x, double eps) {
  for (std::size_t i = 0; i < state.delta.numel(); ++i) {
    const double d = state.delta.data[i];
    if (std::fabs(d) > eps || x.data[i] + d < 0.0 || x.data[i] + d > 1.0) {
      throw NumericError("attack state violates feasibility at pixel " + std::to_string(i));
    }
  }
}

struct AttackTraceRow {
  std::vector<std::size_t> mask_patches;
  double objective = 0.0;
  double delta_linf = 0.0;
};

struct AttackResult {
  Tensor x_adv;
  Tensor delta;
  std::vector<AttackTraceRow> trace;
};

namespace detail {

inline AttackResult run_attack_loop(const ModelHandle& surrogate, const Tensor& x,
                                    std::size_t label, const AttackConfig& cfg,
                                    RngStream& rng, AttackState& state,
                                    const PatchMask* fixed_mask) {
  cfg.validate();
  const PatchGeometry geo = geometry_of(surrogate);
  const std::size_t n = geo.num_patches();
  if (cfg.use_patchout && surrogate.kind != ModelKind::vit) {
    throw ShapeError("attack: patchout needs the surrogate's patch grid (vit)");
  }
  const std::size_t t =
      cfg.patch_count > 0 ? static_cast<std::size_t>(cfg.patch_count) : n;

  AttackResult out;
  for (int i = 0; i < cfg.iterations; ++i) {
    PatchMask mask;
    if (fixed_mask) {
      mask = *fixed_mask;
    } else if (cfg.use_patchout) {
      mask = sample_patch_mask(rng, n, t, geo);
    } else {
      mask = full_mask(geo);
    }
    double objective = 0.0;
    Tensor grad = objective_grad(surrogate, x, label, state.delta, mask, cfg, &objective);
    state = attack_step(state, grad, x, cfg);
    check_state_invariants(state, x, cfg.epsilon);
    out.trace.push_back({mask.selected, objective, linf_norm(state.delta)});
  }
  out.delta = state.delta;
  out.x_adv = add(x, state.delta);
  return out;
}

}  // namespace detail

// Full attack loop; one fresh mask per iteration when patchout is on.
inline AttackResult dual_attack(const ModelHandle& surrogate, const Tensor& x,
                                std::size_t label, const AttackConfig& cfg) {
  RngStream rng = RngStream(cfg.seed).split(0x6d61736b);  // mask sampling stream
  AttackState state = init_attack_state(x);
  return detail::run_attack_loop(surrogate, x, label, cfg, rng, state, nullptr);
}

// Accumulates `stages` sparse perturbations: each stage samples one
// ten-patch mask, holds it fixed for a full inner loop, and continues from
// the delta of the previous stage under the same global budget. The
// momentum accumulator restarts with each stage.
inline AttackResult ten_patch_stacking(const ModelHandle& surrogate, const Tensor& x,
                                       std::size_t label, int stages,
                                       const AttackConfig& cfg) {
  if (stages < 1) throw ShapeError("ten_patch_stacking: stages must be >= 1");
  const PatchGeometry geo = geometry_of(surrogate);
  const std::size_t n = geo.num_patches();
  const std::size_t t = std::min<std::size_t>(10, n);

  RngStream rng = RngStream(cfg.seed).split(0x6d61736b);
  AttackResult out;
  AttackState state = init_attack_state(x);
  for (int s = 0; s < stages; ++s) {
    PatchMask mask = sample_patch_mask(rng, n, t, geo);
    state.momentum = Tensor(x.shape);
    AttackResult stage = detail::run_attack_loop(surrogate, x, label, cfg, rng, state, &mask);
    out.trace.insert(out.trace.end(), stage.trace.begin(), stage.trace.end());
    out.delta = stage.delta;
    out.x_adv = stage.x_adv;
  }
  return out;
}

}  // namespace advit
