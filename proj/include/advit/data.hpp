#pragma once

// Deterministic synthetic data and the training loop that produces the
// surrogate/victim zoo. Each class renders as an oriented sinusoidal
// grating (orientation and frequency are functions of the class id)
// composited with a class-colored Gaussian blob at a per-sample jittered
// position, plus pixel noise. Texture and location both carry label
// information, so models must learn more than a single cue.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "advit/checkpoint.hpp"
#include "advit/model.hpp"
#include "advit/rng.hpp"
#include "advit/tensor.hpp"

namespace advit {

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DatasetSpec {
  std::size_t num_classes = 10;
  std::size_t image_h = 32;
  std::size_t image_w = 32;
  std::size_t channels = 3;
  std::size_t train_per_class = 100;
  std::size_t eval_per_class = 24;
  double noise_std = 0.12;
  std::uint64_t seed = 1;
};

struct Dataset {
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;

  std::size_t size() const { return images.size(); }
};

struct DatasetPair {
  Dataset train;
  Dataset eval;
};

namespace detail {

#ifndef ADVIT_GRATING_AMP
#define ADVIT_GRATING_AMP 0.14
#endif
#ifndef ADVIT_BLOB_AMP
#define ADVIT_BLOB_AMP 0.60
#endif
constexpr double kGratingAmp = ADVIT_GRATING_AMP;
constexpr double kBlobAmp = ADVIT_BLOB_AMP;

inline void hue_to_rgb(double hue, double rgb[3]) {
  const double h6 = hue * 6.0;
  const int sector = static_cast<int>(h6) % 6;
  const double f = h6 - static_cast<double>(static_cast<int>(h6));
  switch (sector) {
    case 0: rgb[0] = 1; rgb[1] = f; rgb[2] = 0; break;
    case 1: rgb[0] = 1 - f; rgb[1] = 1; rgb[2] = 0; break;
    case 2: rgb[0] = 0; rgb[1] = 1; rgb[2] = f; break;
    case 3: rgb[0] = 0; rgb[1] = 1 - f; rgb[2] = 1; break;
    case 4: rgb[0] = f; rgb[1] = 0; rgb[2] = 1; break;
    default: rgb[0] = 1; rgb[1] = 0; rgb[2] = 1 - f; break;
  }
}

inline Tensor render_sample(const DatasetSpec& spec, std::size_t label, RngStream& rng) {
  const double pi = 3.14159265358979323846;
  const std::size_t h = spec.image_h, w = spec.image_w, c = spec.channels;
  const double k = static_cast<double>(label);
  const double theta = pi * k / static_cast<double>(spec.num_classes);
  const double freq = 2.0 + static_cast<double>(label % 3);
  const double ct = std::cos(theta), st = std::sin(theta);
  const double scale = 2.0 * pi * freq / static_cast<double>(std::max(h, w));

  double color[3] = {0.7, 0.7, 0.7};
  if (c >= 3) {
    hue_to_rgb(k / static_cast<double>(spec.num_classes), color);
  } else {
    color[0] = 0.25 + 0.7 * k / static_cast<double>(std::max<std::size_t>(1, spec.num_classes - 1));
  }

  // per-sample jitter: grating phase and blob position
  const double phase = 2.0 * pi * rng.next_double();
  const double sigma = static_cast<double>(std::min(h, w)) / 6.0;
  const double margin = sigma;
  const double cy = margin + (static_cast<double>(h) - 2 * margin) * rng.next_double();
  const double cx = margin + (static_cast<double>(w) - 2 * margin) * rng.next_double();

  Tensor img({h, w, c});
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t col = 0; col < w; ++col) {
      const double g = std::sin(scale * (static_cast<double>(col) * ct +
                                         static_cast<double>(r) * st) + phase);
      const double dy = static_cast<double>(r) - cy;
      const double dx = static_cast<double>(col) - cx;
      const double blob = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      for (std::size_t ch = 0; ch < c; ++ch) {
        double v = 0.5 + kGratingAmp * g + blob * (color[ch % 3] - 0.5) * kBlobAmp;
        if (spec.noise_std > 0.0) v += rng.next_normal(0.0, spec.noise_std);
        img.at3(r, col, ch) = std::min(std::max(v, 0.0), 1.0);
      }
    }
  }
  return img;
}

inline Dataset gen_split(const DatasetSpec& spec, std::size_t per_class, RngStream rng) {
  Dataset out;
  out.images.reserve(spec.num_classes * per_class);
  out.labels.reserve(spec.num_classes * per_class);
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    RngStream class_rng = rng.split(k);
    for (std::size_t i = 0; i < per_class; ++i) {
      RngStream sample_rng = class_rng.split(i);
      out.images.push_back(render_sample(spec, k, sample_rng));
      out.labels.push_back(k);
    }
  }
  return out;
}

}  // namespace detail

inline DatasetPair gen_dataset(const DatasetSpec& spec) {
  if (spec.num_classes == 0 || spec.channels == 0) {
    throw ShapeError("dataset spec: zero-sized field");
  }
  RngStream root(spec.seed);
  DatasetPair out;
  out.train = detail::gen_split(spec, spec.train_per_class, root.split(0));
  out.eval = detail::gen_split(spec, spec.eval_per_class, root.split(1));
  return out;
}

// ---------------------------------------------------------------------------
// training

struct TrainHyper {
  double lr = 0.07;             // peak; linear warmup, then cosine decay to the floor
  double momentum = 0.9;
  std::size_t batch = 16;
  std::size_t epochs = 16;
  double warmup_epochs = 1.0;
  double lr_floor = 0.004;      // final learning rate of the cosine schedule
  double grad_clip = 1.0;       // global L2 clip per batch, 0 disables
};

struct ModelArch {
  ModelKind kind = ModelKind::vit;
  ViTConfig vit;
  CNNConfig cnn;
  std::string label;
  TrainHyper hyper;  // the pinned recipe for this architecture
};

struct TrainOutcome {
  ModelHandle model;
  double train_acc = 0.0;
  double eval_acc = 0.0;
  std::vector<double> epoch_losses;
};

inline double accuracy(const ModelHandle& m, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    hits += (model_predict(m, data.images[i]) == data.labels[i]);
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

inline TrainOutcome train_model(const ModelArch& arch, const Dataset& train,
                                const Dataset& eval, const TrainHyper& hyper,
                                std::uint64_t seed) {
  if (train.size() == 0) throw TrainingError("train_model: empty training set");
  RngStream root(seed);
  ModelHandle model = arch.kind == ModelKind::vit
                          ? make_vit(arch.vit, root.split(0).key(), arch.label)
                          : make_cnn(arch.cnn, root.split(0).key(), arch.label);
  RngStream shuffle_rng = root.split(1);

  ParamMap velocity;
  for (const auto& [name, t] : model.params) velocity.emplace(name, Tensor(t.shape));

  TrainOutcome out;
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const std::size_t batches_per_epoch =
      (train.size() + hyper.batch - 1) / hyper.batch;
  std::size_t batch_counter = 0;

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    // Fisher-Yates reshuffle per epoch
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(shuffle_rng.next_below(i));
      std::swap(order[i - 1], order[j]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
      const std::size_t stop = std::min(order.size(), start + hyper.batch);
      ParamMap grad_sum;
      for (const auto& [name, t] : model.params) grad_sum.emplace(name, Tensor(t.shape));
      for (std::size_t bi = start; bi < stop; ++bi) {
        const std::size_t idx = order[bi];
        double loss;
        ParamMap grads;
        try {
          if (model.kind == ModelKind::vit) {
            ViTGradients g = vit_backward(model.vit, model.params, train.images[idx],
                                          train.labels[idx],
                                          GradRoutingPolicy::full_gradient(model.vit.depth),
                                          true);
            loss = g.loss;
            grads = std::move(g.params);
          } else {
            CNNGradients g = cnn_backward(model.cnn, model.params, train.images[idx],
                                          train.labels[idx], true);
            loss = g.loss;
            grads = std::move(g.params);
          }
        } catch (const NumericError& e) {
          throw TrainingError("train_model: diverged at epoch " + std::to_string(epoch) +
                              " (" + e.what() + ")");
        }
        if (!std::isfinite(loss)) {
          throw TrainingError("train_model: loss diverged at epoch " +
                              std::to_string(epoch));
        }
        epoch_loss += loss;
        for (auto& [name, t] : grad_sum) {
          const Tensor& g = grads.at(name);
          for (std::size_t i = 0; i < t.numel(); ++i) t.data[i] += g.data[i];
        }
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      double clip_scale = inv;
      if (hyper.grad_clip > 0.0) {
        double sq = 0.0;
        for (const auto& [name, g] : grad_sum)
          for (double v : g.data) sq += (v * inv) * (v * inv);
        const double norm = std::sqrt(sq);
        if (norm > hyper.grad_clip) clip_scale = inv * hyper.grad_clip / norm;
      }
      const double warmup_batches = hyper.warmup_epochs * static_cast<double>(batches_per_epoch);
      const double total_batches = static_cast<double>(batches_per_epoch * hyper.epochs);
      double lr;
      if (warmup_batches > 0.0 && static_cast<double>(batch_counter) < warmup_batches) {
        lr = hyper.lr * static_cast<double>(batch_counter + 1) / warmup_batches;
      } else {
        const double progress = total_batches > warmup_batches
            ? (static_cast<double>(batch_counter) - warmup_batches) /
                  (total_batches - warmup_batches)
            : 1.0;
        const double pi = 3.14159265358979323846;
        lr = hyper.lr_floor +
             (hyper.lr - hyper.lr_floor) * 0.5 * (1.0 + std::cos(pi * progress));
      }
      ++batch_counter;
      for (auto& [name, vel] : velocity) {
        Tensor& param = model.params.at(name);
        const Tensor& g = grad_sum.at(name);
        for (std::size_t i = 0; i < vel.numel(); ++i) {
          vel.data[i] = hyper.momentum * vel.data[i] - lr * g.data[i] * clip_scale;
          param.data[i] += vel.data[i];
        }
      }
    }
    out.epoch_losses.push_back(epoch_loss / static_cast<double>(train.size()));
  }
  out.train_acc = accuracy(model, train);
  out.eval_acc = accuracy(model, eval);
  out.model = std::move(model);
  return out;
}

// ---------------------------------------------------------------------------
// the pinned zoo: 4 surrogate-eligible vits, 3 victim vits, 2 cnn victims

struct Zoo {
  std::vector<ModelHandle> models;   // surrogates first
  std::size_t num_surrogates = 4;
  DatasetPair data;
  DatasetSpec dataset_spec;
  std::vector<double> eval_accs;
};

inline std::vector<ModelArch> zoo_roster() {
  auto vit = [](std::size_t depth, std::size_t heads, std::size_t head_dim,
                std::size_t patch, std::size_t mlp, double lr, std::size_t epochs,
                const std::string& label) {
    ModelArch a;
    a.kind = ModelKind::vit;
    a.vit.image_h = a.vit.image_w = 32;
    a.vit.channels = 3;
    a.vit.patch_size = patch;
    a.vit.num_heads = heads;
    a.vit.head_dim = head_dim;
    a.vit.embed_dim = heads * head_dim;
    a.vit.depth = depth;
    a.vit.mlp_hidden = mlp;
    a.vit.num_classes = 10;
    a.hyper.lr = lr;
    a.hyper.epochs = epochs;
    a.label = label;
    return a;
  };
  auto cnn = [](std::vector<std::size_t> channels, std::size_t kernel,
                std::vector<std::size_t> pools, double lr, std::size_t epochs,
                const std::string& label) {
    ModelArch a;
    a.kind = ModelKind::cnn;
    a.cnn.image_h = a.cnn.image_w = 32;
    a.cnn.channels = 3;
    a.cnn.conv_channels = std::move(channels);
    a.cnn.kernel_size = kernel;
    a.cnn.pool_after = std::move(pools);
    a.cnn.num_classes = 10;
    a.hyper.lr = lr;
    a.hyper.epochs = epochs;
    a.label = label;
    return a;
  };
  return {
      vit(3, 2, 8, 4, 32, 0.10, 20, "vit_s0"),
      vit(2, 2, 8, 8, 32, 0.07, 18, "vit_s1"),
      vit(3, 4, 4, 8, 48, 0.10, 18, "vit_s2"),
      vit(4, 4, 4, 4, 32, 0.12, 20, "vit_s3"),
      vit(2, 4, 5, 4, 40, 0.10, 22, "vit_v0"),
      vit(4, 2, 8, 8, 32, 0.10, 20, "vit_v1"),
      vit(3, 3, 6, 8, 36, 0.10, 18, "vit_v2"),
      cnn({8, 16}, 3, {2, 2}, 0.10, 16, "cnn_v0"),
      cnn({6, 12}, 5, {2, 2}, 0.10, 18, "cnn_v1"),
  };
}

// Trains the full pinned roster on one shared dataset. Fails loudly if any
// model misses the accuracy gate; attack evaluation downstream assumes
// every zoo member is a competent classifier.
inline Zoo model_zoo(std::uint64_t seed, double accuracy_gate = 0.85) {
  DatasetSpec spec;
  spec.seed = RngStream(seed).split(100).key();
  Zoo zoo;
  zoo.dataset_spec = spec;
  zoo.data = gen_dataset(spec);

  const std::vector<ModelArch> roster = zoo_roster();
  RngStream train_seeds = RngStream(seed).split(200);
  for (std::size_t i = 0; i < roster.size(); ++i) {
    TrainOutcome outcome = train_model(roster[i], zoo.data.train, zoo.data.eval,
                                       roster[i].hyper, train_seeds.split(i).key());
    if (outcome.eval_acc < accuracy_gate) {
      throw TrainingError("model_zoo: " + roster[i].label + " reached only " +
                          std::to_string(outcome.eval_acc) +
                          " eval accuracy, gate is " + std::to_string(accuracy_gate));
    }
    zoo.eval_accs.push_back(outcome.eval_acc);
    zoo.models.push_back(std::move(outcome.model));
  }
  return zoo;
}

// ---------------------------------------------------------------------------
// container round-trip for datasets, plus PPM dumps for eyeballing

inline void save_dataset(const Dataset& data, const DatasetSpec& spec,
                         const std::string& path) {
  if (data.size() == 0) throw ShapeError("save_dataset: empty dataset");
  Container c;
  c.kind = 2;
  c.config.emplace_back("num_classes", std::to_string(spec.num_classes));
  c.config.emplace_back("image_h", std::to_string(spec.image_h));
  c.config.emplace_back("image_w", std::to_string(spec.image_w));
  c.config.emplace_back("channels", std::to_string(spec.channels));
  c.config.emplace_back("noise_std", std::to_string(spec.noise_std));
  c.config.emplace_back("seed", std::to_string(spec.seed));
  const std::size_t n = data.size();
  Tensor images({n, spec.image_h, spec.image_w, spec.channels});
  Tensor labels({n});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(data.images[i].data.begin(), data.images[i].data.end(),
              images.data.begin() + static_cast<std::ptrdiff_t>(i * data.images[i].numel()));
    labels.data[i] = static_cast<double>(data.labels[i]);
  }
  c.tensors.emplace("images", std::move(images));
  c.tensors.emplace("labels", std::move(labels));
  write_container(path, c);
}

inline Dataset load_dataset(const std::string& path, DatasetSpec* spec_out = nullptr) {
  Container c = read_container(path);
  if (c.kind != 2) {
    throw CheckpointError(CheckpointFault::bad_structure,
                          "load_dataset: container kind " + std::to_string(c.kind) +
                          " is not a dataset");
  }
  const Tensor& images = c.tensors.at("images");
  const Tensor& labels = c.tensors.at("labels");
  if (images.ndim() != 4 || labels.ndim() != 1 || images.shape[0] != labels.shape[0]) {
    throw CheckpointError(CheckpointFault::shape_mismatch,
                          "load_dataset: images/labels disagree");
  }
  Dataset out;
  const std::size_t n = images.shape[0];
  const std::size_t per = images.numel() / n;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor img({images.shape[1], images.shape[2], images.shape[3]});
    std::copy(images.data.begin() + static_cast<std::ptrdiff_t>(i * per),
              images.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * per),
              img.data.begin());
    out.images.push_back(std::move(img));
    out.labels.push_back(static_cast<std::size_t>(labels.data[i]));
  }
  if (spec_out) {
    spec_out->num_classes = std::stoull(c.config_value("num_classes"));
    spec_out->image_h = std::stoull(c.config_value("image_h"));
    spec_out->image_w = std::stoull(c.config_value("image_w"));
    spec_out->channels = std::stoull(c.config_value("channels"));
    spec_out->noise_std = std::stod(c.config_value("noise_std"));
    spec_out->seed = std::stoull(c.config_value("seed"));
  }
  return out;
}

// Binary PPM (P6, 8-bit). Single-channel images replicate to gray.
inline void write_ppm(const Tensor& image, const std::string& path) {
  require_ndim(image, 3, "write_ppm");
  const std::size_t h = image.shape[0], w = image.shape[1], c = image.shape[2];
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError(CheckpointFault::io, "cannot open for writing: " + path);
  f << "P6\n" << w << " " << h << "\n255\n";
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t col = 0; col < w; ++col)
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double v = image.at3(r, col, c >= 3 ? ch : 0);
        const int byte = static_cast<int>(std::lround(std::min(std::max(v, 0.0), 1.0) * 255.0));
        f.put(static_cast<char>(byte));
      }
}

}  // namespace advit
