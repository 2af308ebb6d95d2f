#pragma once

// Miniature vision transformer with analytic forward and input-gradient
// computation. Block wiring is pre-norm: LayerNorm before the attention and
// MLP sublayers, residual adds after, a final LayerNorm before the head.
// The classifier reads the class token when one is configured, otherwise the
// mean over patch tokens.
//
// The backward pass is routed by a GradRoutingPolicy:
//   * attention_grad_enabled[b] == false stops the gradient at block b's
//     attention weights: the backward pass runs only through the value path
//     (grad_tokens += A^T * grad_head * W_V^T) and contributes nothing
//     through the softmax / query / key branch. Forward is always exact.
//   * mlp_grad_decay[b] scales the gradient entering block b's MLP residual
//     branch; the identity path is untouched.

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "advit/ops.hpp"
#include "advit/rng.hpp"
#include "advit/tensor.hpp"

namespace advit {

using ParamMap = std::map<std::string, Tensor>;

struct ViTConfig {
  std::size_t image_h = 32;
  std::size_t image_w = 32;
  std::size_t channels = 3;
  std::size_t patch_size = 8;
  std::size_t embed_dim = 16;
  std::size_t head_dim = 8;
  std::size_t num_heads = 2;
  std::size_t depth = 2;
  std::size_t mlp_hidden = 32;
  std::size_t num_classes = 10;
  bool use_class_token = true;

  std::size_t num_patches() const {
    return (image_h / patch_size) * (image_w / patch_size);
  }
  std::size_t seq_len() const { return num_patches() + (use_class_token ? 1 : 0); }

  void validate() const {
    if (patch_size == 0 || image_h % patch_size != 0 || image_w % patch_size != 0) {
      throw ShapeError("vit config: image " + std::to_string(image_h) + "x" +
                       std::to_string(image_w) + " not divisible by patch size " +
                       std::to_string(patch_size));
    }
    if (num_heads * head_dim != embed_dim) {
      throw ShapeError("vit config: num_heads * head_dim != embed_dim");
    }
    if (depth == 0 || num_classes == 0 || mlp_hidden == 0 || channels == 0) {
      throw ShapeError("vit config: zero-sized field");
    }
  }
};

struct GradRoutingPolicy {
  std::vector<bool> attention_grad_enabled;  // false = stop-gradient on that block's A
  std::vector<double> mlp_grad_decay;        // gamma per block, 1 = full gradient

  static GradRoutingPolicy full_gradient(std::size_t depth) {
    return {std::vector<bool>(depth, true), std::vector<double>(depth, 1.0)};
  }
  static GradRoutingPolicy pna_all(std::size_t depth, double gamma = 1.0) {
    return {std::vector<bool>(depth, false), std::vector<double>(depth, gamma)};
  }

  void validate(std::size_t depth) const {
    if (attention_grad_enabled.size() != depth || mlp_grad_decay.size() != depth) {
      throw ShapeError("routing policy: list lengths (" +
                       std::to_string(attention_grad_enabled.size()) + ", " +
                       std::to_string(mlp_grad_decay.size()) + ") do not match depth " +
                       std::to_string(depth));
    }
    for (double g : mlp_grad_decay) {
      if (!(g > 0.0) || g > 1.0) {
        throw ShapeError("routing policy: mlp decay must be in (0, 1]");
      }
    }
  }
};

// ---------------------------------------------------------------------------
// patch <-> image layout. Patches ordered row-major over the grid, pixels
// row-major within a patch, channels innermost.

inline Tensor patchify(const Tensor& image, std::size_t patch_size) {
  require_ndim(image, 3, "patchify");
  const std::size_t h = image.shape[0], w = image.shape[1], c = image.shape[2];
  if (patch_size == 0 || h % patch_size != 0 || w % patch_size != 0) {
    throw ShapeError("patchify: image " + shape_str(image.shape) +
                     " not divisible by patch size " + std::to_string(patch_size));
  }
  const std::size_t gh = h / patch_size, gw = w / patch_size;
  const std::size_t pd = patch_size * patch_size * c;
  Tensor out({gh * gw, pd});
  for (std::size_t gr = 0; gr < gh; ++gr)
    for (std::size_t gc = 0; gc < gw; ++gc) {
      double* prow = &out.data[(gr * gw + gc) * pd];
      for (std::size_t u = 0; u < patch_size; ++u)
        for (std::size_t v = 0; v < patch_size; ++v)
          for (std::size_t k = 0; k < c; ++k)
            prow[(u * patch_size + v) * c + k] =
                image.at3(gr * patch_size + u, gc * patch_size + v, k);
    }
  return out;
}

inline Tensor unpatchify(const Tensor& patches, std::size_t h, std::size_t w,
                         std::size_t c, std::size_t patch_size) {
  const std::size_t gh = h / patch_size, gw = w / patch_size;
  const std::size_t pd = patch_size * patch_size * c;
  require_shape(patches, {gh * gw, pd}, "unpatchify");
  Tensor img({h, w, c});
  for (std::size_t gr = 0; gr < gh; ++gr)
    for (std::size_t gc = 0; gc < gw; ++gc) {
      const double* prow = &patches.data[(gr * gw + gc) * pd];
      for (std::size_t u = 0; u < patch_size; ++u)
        for (std::size_t v = 0; v < patch_size; ++v)
          for (std::size_t k = 0; k < c; ++k)
            img.at3(gr * patch_size + u, gc * patch_size + v, k) =
                prow[(u * patch_size + v) * c + k];
    }
  return img;
}

// ---------------------------------------------------------------------------
// parameters

inline std::map<std::string, Shape> vit_param_shapes(const ViTConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.embed_dim, t = cfg.seq_len();
  const std::size_t pd = cfg.patch_size * cfg.patch_size * cfg.channels;
  std::map<std::string, Shape> s;
  s["patch_embed.w"] = {pd, d};
  s["patch_embed.b"] = {d};
  s["pos"] = {t, d};
  if (cfg.use_class_token) s["cls"] = {std::size_t{1}, d};
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    s[p + "ln1.g"] = {d};
    s[p + "ln1.b"] = {d};
    s[p + "attn.wq"] = {d, d};
    s[p + "attn.wk"] = {d, d};
    s[p + "attn.wv"] = {d, d};
    s[p + "attn.wo"] = {d, d};
    s[p + "attn.bo"] = {d};
    s[p + "ln2.g"] = {d};
    s[p + "ln2.b"] = {d};
    s[p + "mlp.w1"] = {d, cfg.mlp_hidden};
    s[p + "mlp.b1"] = {cfg.mlp_hidden};
    s[p + "mlp.w2"] = {cfg.mlp_hidden, d};
    s[p + "mlp.b2"] = {d};
  }
  s["ln_f.g"] = {d};
  s["ln_f.b"] = {d};
  s["head.w"] = {d, cfg.num_classes};
  s["head.b"] = {cfg.num_classes};
  return s;
}

// All-random parameters (no zero blocks): every gradient path is live. For
// oracle checks and tests; training uses vit_init_params.
inline ParamMap vit_random_params(const ViTConfig& cfg, RngStream rng) {
  ParamMap params;
  for (const auto& [name, shape] : vit_param_shapes(cfg)) {
    Tensor t(shape);
    RngStream prng = rng.split(RngStream::mix64(std::hash<std::string>{}(name)));
    const bool is_norm_gain = name.ends_with("ln1.g") || name.ends_with("ln2.g") ||
                              name.ends_with("ln_f.g");
    for (double& v : t.data) {
      v = is_norm_gain ? 1.0 + prng.next_normal(0.0, 0.1) : prng.next_normal(0.0, 0.25);
    }
    params.emplace(name, std::move(t));
  }
  return params;
}

inline ParamMap vit_init_params(const ViTConfig& cfg, RngStream rng) {
  ParamMap params;
  for (const auto& [name, shape] : vit_param_shapes(cfg)) {
    Tensor t(shape);
    const bool is_norm_gain = name.ends_with("ln1.g") || name.ends_with("ln2.g") ||
                              name.ends_with("ln_f.g");
    const bool is_bias = name.ends_with(".b") || name.ends_with(".b1") ||
                         name.ends_with(".b2") || name.ends_with(".bo");
    RngStream prng = rng.split(RngStream::mix64(std::hash<std::string>{}(name)));
    // residual-branch output projections start at zero so every block is an
    // identity map at init; small transformers train far more reliably this way
    const bool is_residual_out = name.ends_with("attn.wo") || name.ends_with("mlp.w2");
    if (is_norm_gain) {
      std::fill(t.data.begin(), t.data.end(), 1.0);
    } else if (is_bias || name == "cls" || is_residual_out) {
      // zeros
    } else if (name == "pos") {
      for (double& v : t.data) v = prng.next_normal(0.0, 0.02);
    } else {
      for (double& v : t.data) v = prng.next_normal(0.0, 0.03);
    }
    params.emplace(name, std::move(t));
  }
  return params;
}

// ---------------------------------------------------------------------------
// forward

struct ViTBlockCache {
  Tensor z_in;      // block input tokens
  LayerNormCache ln1;
  Tensor y1;        // normalized tokens feeding attention
  Tensor q, k, v;   // [T x D], heads side by side
  std::vector<Tensor> attn;  // per-head [T x T] row-stochastic weights
  Tensor heads;     // concatenated head outputs [T x D]
  Tensor z_mid;     // after attention residual
  LayerNormCache ln2;
  Tensor y2;
  Tensor mlp_pre;   // before activation
  Tensor mlp_act;
};

struct ViTCache {
  Tensor patches;
  Tensor z0;        // embedded tokens incl. class token and positions
  std::vector<ViTBlockCache> blocks;
  Tensor z_out;     // tokens after the last block
  LayerNormCache ln_f;
  Tensor yf;
  Tensor pooled;    // [1 x D]
  Tensor logits;    // [K]
};

// Attention-weight overrides keyed by block index; each entry carries one
// [T x T] matrix per head and replaces the computed softmax in that block.
using AttnOverrides = std::map<std::size_t, std::vector<Tensor>>;

inline ViTCache vit_forward(const ViTConfig& cfg, const ParamMap& params,
                            const Tensor& image, const AttnOverrides* overrides = nullptr) {
  cfg.validate();
  require_shape(image, {cfg.image_h, cfg.image_w, cfg.channels}, "vit_forward image");
  const std::size_t d = cfg.embed_dim, nh = cfg.num_heads, hd = cfg.head_dim;
  const std::size_t t = cfg.seq_len();
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

  const auto& P = [&params](const std::string& n) -> const Tensor& {
    auto it = params.find(n);
    if (it == params.end()) throw ShapeError("vit_forward: missing parameter " + n);
    return it->second;
  };

  ViTCache cache;
  cache.patches = patchify(image, cfg.patch_size);
  Tensor embedded = linear_fwd(cache.patches, P("patch_embed.w"), P("patch_embed.b"));

  Tensor z({t, d});
  std::size_t row0 = 0;
  if (cfg.use_class_token) {
    const Tensor& cls = P("cls");
    for (std::size_t j = 0; j < d; ++j) z.at2(0, j) = cls.data[j];
    row0 = 1;
  }
  for (std::size_t i = 0; i < cfg.num_patches(); ++i)
    for (std::size_t j = 0; j < d; ++j) z.at2(row0 + i, j) = embedded.at2(i, j);
  const Tensor& pos = P("pos");
  for (std::size_t i = 0; i < z.numel(); ++i) z.data[i] += pos.data[i];
  cache.z0 = z;

  cache.blocks.resize(cfg.depth);
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    const std::string pre = "block" + std::to_string(b) + ".";
    ViTBlockCache& bc = cache.blocks[b];
    bc.z_in = z;
    bc.y1 = layer_norm_fwd(z, P(pre + "ln1.g"), P(pre + "ln1.b"), &bc.ln1);

    const bool frozen = overrides && overrides->count(b);
    if (!frozen) {
      bc.q = matmul(bc.y1, P(pre + "attn.wq"));
      bc.k = matmul(bc.y1, P(pre + "attn.wk"));
    }
    bc.v = matmul(bc.y1, P(pre + "attn.wv"));

    bc.attn.resize(nh);
    bc.heads = Tensor({t, d});
    for (std::size_t h = 0; h < nh; ++h) {
      const std::size_t off = h * hd;
      if (frozen) {
        const auto& ov = overrides->at(b);
        if (ov.size() != nh) throw ShapeError("vit_forward: override head count mismatch");
        require_shape(ov[h], {t, t}, "vit_forward attention override");
        bc.attn[h] = ov[h];
      } else {
        Tensor scores({t, t});
        for (std::size_t i = 0; i < t; ++i)
          for (std::size_t j = 0; j < t; ++j) {
            double s = 0.0;
            for (std::size_t e = 0; e < hd; ++e)
              s += bc.q.at2(i, off + e) * bc.k.at2(j, off + e);
            scores.at2(i, j) = s * inv_sqrt_hd;
          }
        bc.attn[h] = softmax_rows_fwd(scores);
      }
      const Tensor& a = bc.attn[h];
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < t; ++j) {
          const double av = a.at2(i, j);
          for (std::size_t e = 0; e < hd; ++e)
            bc.heads.at2(i, off + e) += av * bc.v.at2(j, off + e);
        }
    }

    Tensor proj = linear_fwd(bc.heads, P(pre + "attn.wo"), P(pre + "attn.bo"));
    bc.z_mid = add(z, proj);

    bc.y2 = layer_norm_fwd(bc.z_mid, P(pre + "ln2.g"), P(pre + "ln2.b"), &bc.ln2);
    bc.mlp_pre = linear_fwd(bc.y2, P(pre + "mlp.w1"), P(pre + "mlp.b1"));
    bc.mlp_act = gelu_fwd(bc.mlp_pre);
    Tensor mlp_out = linear_fwd(bc.mlp_act, P(pre + "mlp.w2"), P(pre + "mlp.b2"));
    z = add(bc.z_mid, mlp_out);
  }
  cache.z_out = z;

  cache.yf = layer_norm_fwd(z, P("ln_f.g"), P("ln_f.b"), &cache.ln_f);
  cache.pooled = Tensor({std::size_t{1}, d});
  if (cfg.use_class_token) {
    for (std::size_t j = 0; j < d; ++j) cache.pooled.at2(0, j) = cache.yf.at2(0, j);
  } else {
    const double inv = 1.0 / static_cast<double>(t);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < d; ++j) cache.pooled.at2(0, j) += cache.yf.at2(i, j) * inv;
  }
  Tensor logits2 = linear_fwd(cache.pooled, P("head.w"), P("head.b"));
  cache.logits = Tensor({cfg.num_classes});
  for (std::size_t j = 0; j < cfg.num_classes; ++j) cache.logits.data[j] = logits2.at2(0, j);
  ensure_finite(cache.logits, "vit_forward logits");
  return cache;
}

// ---------------------------------------------------------------------------
// backward

struct ViTGradients {
  Tensor input;      // dLoss/dImage, H x W x C
  ParamMap params;   // present only when requested
  double loss = 0.0;
  Tensor logits;
};

inline ViTGradients vit_backward(const ViTConfig& cfg, const ParamMap& params,
                                 const Tensor& image, std::size_t label,
                                 const GradRoutingPolicy& policy,
                                 bool want_param_grads = false) {
  policy.validate(cfg.depth);
  const std::size_t d = cfg.embed_dim, nh = cfg.num_heads, hd = cfg.head_dim;
  const std::size_t t = cfg.seq_len();
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

  ViTCache cache = vit_forward(cfg, params, image);
  CrossEntropyResult ce = cross_entropy(cache.logits, label);

  const auto& P = [&params](const std::string& n) -> const Tensor& {
    return params.at(n);
  };

  ViTGradients out;
  out.loss = ce.loss;
  out.logits = cache.logits;
  ParamMap* pg = nullptr;
  if (want_param_grads) {
    for (const auto& [name, tens] : params) out.params.emplace(name, Tensor(tens.shape));
    pg = &out.params;
  }

  // head
  Tensor grad_logits2({std::size_t{1}, cfg.num_classes});
  for (std::size_t j = 0; j < cfg.num_classes; ++j)
    grad_logits2.at2(0, j) = ce.grad_logits.data[j];
  LinearGrads head_g = linear_bwd(cache.pooled, P("head.w"), grad_logits2);
  if (pg) {
    (*pg)["head.w"] = head_g.grad_weight;
    (*pg)["head.b"] = head_g.grad_bias;
  }

  // unpool
  Tensor grad_yf({t, d});
  if (cfg.use_class_token) {
    for (std::size_t j = 0; j < d; ++j) grad_yf.at2(0, j) = head_g.grad_input.at2(0, j);
  } else {
    const double inv = 1.0 / static_cast<double>(t);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < d; ++j)
        grad_yf.at2(i, j) = head_g.grad_input.at2(0, j) * inv;
  }

  LayerNormGrads lnf_g = layer_norm_bwd(cache.z_out, P("ln_f.g"), cache.ln_f, grad_yf);
  if (pg) {
    (*pg)["ln_f.g"] = lnf_g.grad_gamma;
    (*pg)["ln_f.b"] = lnf_g.grad_beta;
  }
  Tensor grad_z = lnf_g.grad_input;

  for (std::size_t bi = cfg.depth; bi-- > 0;) {
    const std::string pre = "block" + std::to_string(bi) + ".";
    const ViTBlockCache& bc = cache.blocks[bi];
    const double gamma = policy.mlp_grad_decay[bi];
    const bool attn_grads = policy.attention_grad_enabled[bi];

    // MLP residual: z = z_mid + mlp(y2). Branch gradient scaled by gamma.
    Tensor grad_branch = (gamma == 1.0) ? grad_z : scale(grad_z, gamma);
    LinearGrads m2 = linear_bwd(bc.mlp_act, P(pre + "mlp.w2"), grad_branch);
    Tensor grad_pre = gelu_bwd(bc.mlp_pre, m2.grad_input);
    LinearGrads m1 = linear_bwd(bc.y2, P(pre + "mlp.w1"), grad_pre);
    LayerNormGrads ln2_g = layer_norm_bwd(bc.z_mid, P(pre + "ln2.g"), bc.ln2, m1.grad_input);
    if (pg) {
      (*pg)[pre + "mlp.w2"] = m2.grad_weight;
      (*pg)[pre + "mlp.b2"] = m2.grad_bias;
      (*pg)[pre + "mlp.w1"] = m1.grad_weight;
      (*pg)[pre + "mlp.b1"] = m1.grad_bias;
      (*pg)[pre + "ln2.g"] = ln2_g.grad_gamma;
      (*pg)[pre + "ln2.b"] = ln2_g.grad_beta;
    }
    Tensor grad_z_mid = add(grad_z, ln2_g.grad_input);

    // attention residual: z_mid = z_in + proj(heads)
    LinearGrads proj_g = linear_bwd(bc.heads, P(pre + "attn.wo"), grad_z_mid);
    if (pg) {
      (*pg)[pre + "attn.wo"] = proj_g.grad_weight;
      (*pg)[pre + "attn.bo"] = proj_g.grad_bias;
    }
    const Tensor& grad_heads = proj_g.grad_input;

    Tensor grad_q({t, d}), grad_k({t, d}), grad_v({t, d});
    for (std::size_t h = 0; h < nh; ++h) {
      const std::size_t off = h * hd;
      const Tensor& a = bc.attn[h];
      // value path: grad_v += A^T * grad_head
      for (std::size_t j = 0; j < t; ++j)
        for (std::size_t i = 0; i < t; ++i) {
          const double av = a.at2(i, j);
          for (std::size_t e = 0; e < hd; ++e)
            grad_v.at2(j, off + e) += av * grad_heads.at2(i, off + e);
        }
      if (!attn_grads) continue;  // stop-gradient on the attention weights
      // attention path: dA = grad_head * V^T, dS = softmax'(A, dA) / sqrt(hd)
      Tensor grad_a({t, t});
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < t; ++j) {
          double s = 0.0;
          for (std::size_t e = 0; e < hd; ++e)
            s += grad_heads.at2(i, off + e) * bc.v.at2(j, off + e);
          grad_a.at2(i, j) = s;
        }
      Tensor grad_s = softmax_rows_bwd(a, grad_a);
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < t; ++j) {
          const double sv = grad_s.at2(i, j) * inv_sqrt_hd;
          for (std::size_t e = 0; e < hd; ++e) {
            grad_q.at2(i, off + e) += sv * bc.k.at2(j, off + e);
            grad_k.at2(j, off + e) += sv * bc.q.at2(i, off + e);
          }
        }
    }

    Tensor grad_y1 = matmul_nt(grad_v, P(pre + "attn.wv"));
    if (attn_grads) {
      Tensor gq = matmul_nt(grad_q, P(pre + "attn.wq"));
      Tensor gk = matmul_nt(grad_k, P(pre + "attn.wk"));
      for (std::size_t i = 0; i < grad_y1.numel(); ++i)
        grad_y1.data[i] += gq.data[i] + gk.data[i];
    }
    if (pg) {
      (*pg)[pre + "attn.wv"] = matmul_tn(bc.y1, grad_v);
      (*pg)[pre + "attn.wq"] = attn_grads ? matmul_tn(bc.y1, grad_q) : Tensor({d, d});
      (*pg)[pre + "attn.wk"] = attn_grads ? matmul_tn(bc.y1, grad_k) : Tensor({d, d});
    }

    LayerNormGrads ln1_g = layer_norm_bwd(bc.z_in, P(pre + "ln1.g"), bc.ln1, grad_y1);
    if (pg) {
      (*pg)[pre + "ln1.g"] = ln1_g.grad_gamma;
      (*pg)[pre + "ln1.b"] = ln1_g.grad_beta;
    }
    grad_z = add(grad_z_mid, ln1_g.grad_input);
  }

  // embedding
  if (pg) (*pg)["pos"] = grad_z;
  std::size_t row0 = 0;
  if (cfg.use_class_token) {
    row0 = 1;
    if (pg) {
      Tensor gcls({std::size_t{1}, d});
      for (std::size_t j = 0; j < d; ++j) gcls.at2(0, j) = grad_z.at2(0, j);
      (*pg)["cls"] = gcls;
    }
  }
  Tensor grad_embedded({cfg.num_patches(), d});
  for (std::size_t i = 0; i < cfg.num_patches(); ++i)
    for (std::size_t j = 0; j < d; ++j) grad_embedded.at2(i, j) = grad_z.at2(row0 + i, j);
  LinearGrads emb_g = linear_bwd(cache.patches, P("patch_embed.w"), grad_embedded);
  if (pg) {
    (*pg)["patch_embed.w"] = emb_g.grad_weight;
    (*pg)["patch_embed.b"] = emb_g.grad_bias;
  }
  out.input = unpatchify(emb_g.grad_input, cfg.image_h, cfg.image_w, cfg.channels,
                         cfg.patch_size);
  return out;
}

inline Tensor vit_input_grad(const ViTConfig& cfg, const ParamMap& params,
                             const Tensor& image, std::size_t label,
                             const GradRoutingPolicy& policy, double* loss_out = nullptr) {
  ViTGradients g = vit_backward(cfg, params, image, label, policy, false);
  if (loss_out) *loss_out = g.loss;
  return g.input;
}

}  // namespace advit
