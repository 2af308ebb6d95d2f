#pragma once

// Small convolutional classifier used as a cross-family victim. Stages of
// conv + GELU + optional average pooling, global average pool, linear head.

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "advit/ops.hpp"
#include "advit/rng.hpp"
#include "advit/tensor.hpp"

namespace advit {

struct CNNConfig {
  std::size_t image_h = 32;
  std::size_t image_w = 32;
  std::size_t channels = 3;
  std::vector<std::size_t> conv_channels = {8, 16};
  std::size_t kernel_size = 3;
  std::vector<std::size_t> pool_after = {2, 2};  // window per stage, 1 = no pooling
  std::size_t num_classes = 10;

  void validate() const {
    if (conv_channels.empty() || conv_channels.size() != pool_after.size()) {
      throw ShapeError("cnn config: conv_channels and pool_after must be non-empty and equal length");
    }
    if (kernel_size % 2 == 0) throw ShapeError("cnn config: kernel size must be odd");
    std::size_t h = image_h, w = image_w;
    for (std::size_t p : pool_after) {
      if (p == 0 || h % p != 0 || w % p != 0) {
        throw ShapeError("cnn config: pooling schedule does not divide spatial dims");
      }
      h /= p;
      w /= p;
    }
  }
};

inline std::map<std::string, Shape> cnn_param_shapes(const CNNConfig& cfg) {
  cfg.validate();
  std::map<std::string, Shape> s;
  std::size_t cin = cfg.channels;
  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    const std::string p = "conv" + std::to_string(i) + ".";
    s[p + "k"] = {cfg.kernel_size, cfg.kernel_size, cin, cfg.conv_channels[i]};
    s[p + "b"] = {cfg.conv_channels[i]};
    cin = cfg.conv_channels[i];
  }
  s["head.w"] = {cin, cfg.num_classes};
  s["head.b"] = {cfg.num_classes};
  return s;
}

inline std::map<std::string, Tensor> cnn_init_params(const CNNConfig& cfg, RngStream rng) {
  std::map<std::string, Tensor> params;
  for (const auto& [name, shape] : cnn_param_shapes(cfg)) {
    Tensor t(shape);
    RngStream prng = rng.split(RngStream::mix64(std::hash<std::string>{}(name)));
    if (!name.ends_with(".b")) {
      double fan_in = 1.0;
      for (std::size_t i = 0; i + 1 < shape.size(); ++i)
        fan_in *= static_cast<double>(shape[i]);
      const double std = std::sqrt(2.0 / fan_in);
      for (double& v : t.data) v = prng.next_normal(0.0, std);
    }
    params.emplace(name, std::move(t));
  }
  return params;
}

struct CNNCache {
  std::vector<Tensor> stage_in;    // input of each conv
  std::vector<Tensor> conv_out;    // pre-activation
  std::vector<Tensor> act_out;     // post-GELU (input of pooling)
  Tensor features;                 // [1 x C_last] after global average pool
  Tensor logits;                   // [K]
};

inline CNNCache cnn_forward(const CNNConfig& cfg, const std::map<std::string, Tensor>& params,
                            const Tensor& image) {
  cfg.validate();
  require_shape(image, {cfg.image_h, cfg.image_w, cfg.channels}, "cnn_forward image");
  CNNCache cache;
  Tensor x = image;
  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    const std::string p = "conv" + std::to_string(i) + ".";
    cache.stage_in.push_back(x);
    Tensor conv = conv2d_fwd(x, params.at(p + "k"), params.at(p + "b"));
    cache.conv_out.push_back(conv);
    Tensor act = gelu_fwd(conv);
    cache.act_out.push_back(act);
    x = (cfg.pool_after[i] > 1) ? avgpool_fwd(act, cfg.pool_after[i]) : act;
  }
  const std::size_t h = x.shape[0], w = x.shape[1], c = x.shape[2];
  cache.features = Tensor({std::size_t{1}, c});
  const double inv = 1.0 / static_cast<double>(h * w);
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t k = 0; k < c; ++k) cache.features.at2(0, k) += x.data[i * c + k] * inv;
  Tensor logits2 = linear_fwd(cache.features, params.at("head.w"), params.at("head.b"));
  cache.logits = Tensor({cfg.num_classes});
  for (std::size_t j = 0; j < cfg.num_classes; ++j) cache.logits.data[j] = logits2.at2(0, j);
  ensure_finite(cache.logits, "cnn_forward logits");
  return cache;
}

struct CNNGradients {
  Tensor input;
  std::map<std::string, Tensor> params;
  double loss = 0.0;
  Tensor logits;
};

inline CNNGradients cnn_backward(const CNNConfig& cfg,
                                 const std::map<std::string, Tensor>& params,
                                 const Tensor& image, std::size_t label,
                                 bool want_param_grads = false) {
  CNNCache cache = cnn_forward(cfg, params, image);
  CrossEntropyResult ce = cross_entropy(cache.logits, label);
  CNNGradients out;
  out.loss = ce.loss;
  out.logits = cache.logits;
  std::map<std::string, Tensor>* pg = nullptr;
  if (want_param_grads) {
    for (const auto& [name, t] : params) out.params.emplace(name, Tensor(t.shape));
    pg = &out.params;
  }

  Tensor grad_logits2({std::size_t{1}, cfg.num_classes});
  for (std::size_t j = 0; j < cfg.num_classes; ++j)
    grad_logits2.at2(0, j) = ce.grad_logits.data[j];
  LinearGrads head_g = linear_bwd(cache.features, params.at("head.w"), grad_logits2);
  if (pg) {
    (*pg)["head.w"] = head_g.grad_weight;
    (*pg)["head.b"] = head_g.grad_bias;
  }

  // undo the global average pool
  const std::size_t n_stages = cfg.conv_channels.size();
  Shape last_shape = cfg.pool_after[n_stages - 1] > 1
      ? Shape{cache.act_out[n_stages - 1].shape[0] / cfg.pool_after[n_stages - 1],
              cache.act_out[n_stages - 1].shape[1] / cfg.pool_after[n_stages - 1],
              cache.act_out[n_stages - 1].shape[2]}
      : cache.act_out[n_stages - 1].shape;
  Tensor grad_x(last_shape);
  {
    const std::size_t h = last_shape[0], w = last_shape[1], c = last_shape[2];
    const double inv = 1.0 / static_cast<double>(h * w);
    for (std::size_t i = 0; i < h * w; ++i)
      for (std::size_t k = 0; k < c; ++k)
        grad_x.data[i * c + k] = head_g.grad_input.at2(0, k) * inv;
  }

  for (std::size_t i = n_stages; i-- > 0;) {
    const std::string p = "conv" + std::to_string(i) + ".";
    if (cfg.pool_after[i] > 1) {
      grad_x = avgpool_bwd(cache.act_out[i].shape, cfg.pool_after[i], grad_x);
    }
    Tensor grad_conv = gelu_bwd(cache.conv_out[i], grad_x);
    Conv2dGrads cg = conv2d_bwd(cache.stage_in[i], params.at(p + "k"), grad_conv);
    if (pg) {
      (*pg)[p + "k"] = cg.grad_kernel;
      (*pg)[p + "b"] = cg.grad_bias;
    }
    grad_x = cg.grad_input;
  }
  out.input = grad_x;
  return out;
}

}  // namespace advit
