#pragma once

// A trained classifier of either family behind one handle. Handles are
// immutable after construction; forward and gradient calls are safe from
// many threads at once, each call owns its own cache.

#include <cstddef>
#include <string>

#include "advit/cnn.hpp"
#include "advit/vit.hpp"

namespace advit {

enum class ModelKind : std::uint8_t { vit = 0, cnn = 1 };

struct ModelHandle {
  ModelKind kind = ModelKind::vit;
  ViTConfig vit;
  CNNConfig cnn;
  ParamMap params;
  std::string label;

  std::size_t num_classes() const {
    return kind == ModelKind::vit ? vit.num_classes : cnn.num_classes;
  }
  std::size_t image_h() const { return kind == ModelKind::vit ? vit.image_h : cnn.image_h; }
  std::size_t image_w() const { return kind == ModelKind::vit ? vit.image_w : cnn.image_w; }
  std::size_t image_c() const { return kind == ModelKind::vit ? vit.channels : cnn.channels; }
};

inline ModelHandle make_vit(const ViTConfig& cfg, std::uint64_t init_seed,
                            std::string label) {
  ModelHandle m;
  m.kind = ModelKind::vit;
  m.vit = cfg;
  m.params = vit_init_params(cfg, RngStream(init_seed));
  m.label = std::move(label);
  return m;
}

// Fully random weights with every gradient path live; for oracle checks.
inline ModelHandle make_vit_random(const ViTConfig& cfg, std::uint64_t init_seed,
                                   std::string label) {
  ModelHandle m;
  m.kind = ModelKind::vit;
  m.vit = cfg;
  m.params = vit_random_params(cfg, RngStream(init_seed));
  m.label = std::move(label);
  return m;
}

inline ModelHandle make_cnn(const CNNConfig& cfg, std::uint64_t init_seed,
                            std::string label) {
  ModelHandle m;
  m.kind = ModelKind::cnn;
  m.cnn = cfg;
  m.params = cnn_init_params(cfg, RngStream(init_seed));
  m.label = std::move(label);
  return m;
}

inline Tensor model_logits(const ModelHandle& m, const Tensor& image) {
  if (m.kind == ModelKind::vit) return vit_forward(m.vit, m.params, image).logits;
  return cnn_forward(m.cnn, m.params, image).logits;
}

inline std::size_t model_predict(const ModelHandle& m, const Tensor& image) {
  Tensor logits = model_logits(m, image);
  std::size_t best = 0;
  for (std::size_t j = 1; j < logits.numel(); ++j)
    if (logits.data[j] > logits.data[best]) best = j;
  return best;
}

inline double model_loss(const ModelHandle& m, const Tensor& image, std::size_t label) {
  return cross_entropy(model_logits(m, image), label).loss;
}

// Input gradient of the cross-entropy loss. The routing policy applies to
// vit models only; cnn models always use the exact gradient.
inline Tensor model_input_grad(const ModelHandle& m, const Tensor& image, std::size_t label,
                               const GradRoutingPolicy& policy, double* loss_out = nullptr) {
  if (m.kind == ModelKind::vit) {
    return vit_input_grad(m.vit, m.params, image, label, policy, loss_out);
  }
  CNNGradients g = cnn_backward(m.cnn, m.params, image, label, false);
  if (loss_out) *loss_out = g.loss;
  return g.input;
}

inline GradRoutingPolicy default_policy(const ModelHandle& m) {
  const std::size_t depth = m.kind == ModelKind::vit ? m.vit.depth : 1;
  return GradRoutingPolicy::full_gradient(depth);
}

}  // namespace advit
