#pragma once

// Experiment driver: crafts adversarial examples on surrogate models,
// evaluates them on every other zoo member, and emits machine-readable
// reports. Rows are computed in parallel over images but every random
// choice is keyed by (experiment seed, surrogate, attack, image index), so
// report bytes are independent of the worker count.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "advit/attack.hpp"
#include "advit/checkpoint.hpp"
#include "advit/data.hpp"
#include "advit/parallel.hpp"

namespace advit {

constexpr const char* kReportVersion = "1";

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xCBF29CE484222325ULL) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::uint64_t model_digest(const ModelHandle& m) {
  std::uint64_t h = fnv1a64(m.label.data(), m.label.size());
  for (const auto& [name, t] : m.params) {
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(t.data.data(), t.data.size() * sizeof(double), h);
  }
  return h;
}

inline std::uint64_t zoo_digest(const Zoo& zoo) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& m : zoo.models) {
    const std::uint64_t d = model_digest(m);
    h = fnv1a64(&d, sizeof(d), h);
  }
  return h;
}

inline std::uint64_t dataset_digest(const Dataset& data) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (std::size_t i = 0; i < data.size(); ++i) {
    h = fnv1a64(data.images[i].data.data(), data.images[i].numel() * sizeof(double), h);
    h = fnv1a64(&data.labels[i], sizeof(data.labels[i]), h);
  }
  return h;
}

struct NamedAttack {
  std::string name;
  AttackConfig cfg;
};

inline std::uint64_t attack_digest(const NamedAttack& a) {
  std::ostringstream os;
  os << a.name << '|' << a.cfg.epsilon << '|' << a.cfg.iterations << '|'
     << a.cfg.step_size << '|' << a.cfg.patch_count << '|' << a.cfg.lambda << '|'
     << a.cfg.use_pna << a.cfg.use_patchout << a.cfg.use_l2 << a.cfg.l2_unmasked
     << a.cfg.sign_step << '|' << a.cfg.mi_momentum << '|' << a.cfg.sgm_decay;
  if (a.cfg.policy_override) {
    for (bool b : a.cfg.policy_override->attention_grad_enabled) os << (b ? 'e' : 'd');
    for (double g : a.cfg.policy_override->mlp_grad_decay) os << g << ',';
  }
  const std::string s = os.str();
  return fnv1a64(s.data(), s.size());
}

struct ReportRow {
  std::string surrogate;
  std::string victim;
  std::string attack;
  int eps255 = 16;
  int iters = 10;
  int patch_count = 0;  // effective T
  double lambda = 0.0;
  bool pna = false;
  bool sign = true;
  std::uint64_t seed = 0;
  std::size_t n_images = 0;
  std::size_t n_success = 0;
  double asr = 0.0;  // percentage
};

struct TransferReport {
  std::vector<ReportRow> rows;
  std::uint64_t seed = 0;
  std::uint64_t dataset_digest = 0;
  std::uint64_t zoo_digest = 0;
  std::string experiment;
  std::vector<NamedAttack> attacks;
  std::size_t budget = 0;
};

// ---------------------------------------------------------------------------
// ASR arithmetic

inline double compute_asr(const ModelHandle& victim, const std::vector<Tensor>& adv_images,
                          const std::vector<std::size_t>& labels) {
  if (adv_images.empty() || adv_images.size() != labels.size()) {
    throw ShapeError("compute_asr: empty or mismatched adversarial set");
  }
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < adv_images.size(); ++i) {
    flipped += (model_predict(victim, adv_images[i]) != labels[i]);
  }
  return 100.0 * static_cast<double>(flipped) / static_cast<double>(adv_images.size());
}

// Mean ASR over surrogates for one victim (and optionally one attack name).
inline double compute_masr(const TransferReport& report, const std::string& victim,
                           const std::string& attack = "") {
  double sum = 0.0;
  std::size_t n = 0;
  for (const ReportRow& r : report.rows) {
    if (r.victim != victim || r.surrogate == r.victim) continue;
    if (!attack.empty() && r.attack != attack) continue;
    sum += r.asr;
    ++n;
  }
  if (n == 0) {
    throw ShapeError("compute_masr: no rows for victim " + victim +
                     (attack.empty() ? "" : " attack " + attack));
  }
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// clean-correct image pool

struct ImagePool {
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
};

// Images every zoo member classifies correctly, in eval-set order.
inline ImagePool clean_correct_pool(const Zoo& zoo, std::size_t budget) {
  ImagePool pool;
  const Dataset& eval = zoo.data.eval;
  for (std::size_t i = 0; i < eval.size() && pool.images.size() < budget; ++i) {
    bool all_ok = true;
    for (const ModelHandle& m : zoo.models) {
      if (model_predict(m, eval.images[i]) != eval.labels[i]) {
        all_ok = false;
        break;
      }
    }
    if (all_ok) {
      pool.images.push_back(eval.images[i]);
      pool.labels.push_back(eval.labels[i]);
    }
  }
  if (pool.images.empty()) {
    throw TrainingError("clean_correct_pool: no image is classified correctly by all models");
  }
  return pool;
}

// ---------------------------------------------------------------------------
// crafting

inline std::uint64_t per_image_seed(std::uint64_t experiment_seed, std::size_t surrogate_idx,
                                    std::uint64_t attack_digest_v, std::size_t image_idx) {
  return RngStream(experiment_seed)
      .split(0x63726166)  // craft
      .split(surrogate_idx)
      .split(attack_digest_v)
      .split(image_idx)
      .key();
}

struct CraftedSet {
  std::vector<Tensor> adv_images;
  std::vector<AttackResult> results;  // trace kept for dumps and checks
};

inline CraftedSet craft_set(const ModelHandle& surrogate, const ImagePool& pool,
                            const NamedAttack& attack, std::uint64_t experiment_seed,
                            std::size_t surrogate_idx, std::size_t jobs,
                            int stacking_stages = 0) {
  const std::uint64_t adig = attack_digest(attack);
  CraftedSet out;
  out.adv_images.resize(pool.images.size());
  out.results.resize(pool.images.size());
  parallel_for(pool.images.size(), jobs, [&](std::size_t i) {
    AttackConfig cfg = attack.cfg;
    cfg.seed = per_image_seed(experiment_seed, surrogate_idx, adig, i);
    AttackResult r = stacking_stages > 0
        ? ten_patch_stacking(surrogate, pool.images[i], pool.labels[i], stacking_stages, cfg)
        : dual_attack(surrogate, pool.images[i], pool.labels[i], cfg);
    out.adv_images[i] = r.x_adv;
    out.results[i] = std::move(r);
  });
  return out;
}

inline ReportRow make_row(const Zoo& zoo, std::size_t surrogate_idx, std::size_t victim_idx,
                          const NamedAttack& attack, const CraftedSet& crafted,
                          const ImagePool& pool, std::uint64_t seed) {
  ReportRow row;
  row.surrogate = zoo.models[surrogate_idx].label;
  row.victim = zoo.models[victim_idx].label;
  row.attack = attack.name;
  row.eps255 = static_cast<int>(std::lround(attack.cfg.epsilon * 255.0));
  row.iters = attack.cfg.iterations;
  row.patch_count = attack.cfg.patch_count;
  row.lambda = attack.cfg.use_l2 ? attack.cfg.lambda : 0.0;
  row.pna = attack.cfg.use_pna;
  row.sign = attack.cfg.sign_step;
  row.seed = seed;
  row.n_images = pool.images.size();
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < pool.images.size(); ++i) {
    flipped += (model_predict(zoo.models[victim_idx], crafted.adv_images[i]) != pool.labels[i]);
  }
  row.n_success = flipped;
  row.asr = 100.0 * static_cast<double>(flipped) / static_cast<double>(row.n_images);
  return row;
}

// ---------------------------------------------------------------------------
// experiments

// Every surrogate x attack x victim (victim != surrogate).
inline TransferReport run_transfer_matrix(const Zoo& zoo, const std::vector<NamedAttack>& attacks,
                                          std::size_t budget, std::uint64_t seed,
                                          std::size_t jobs = 1) {
  TransferReport report;
  report.experiment = "transfer";
  report.seed = seed;
  report.attacks = attacks;
  report.budget = budget;
  report.dataset_digest = dataset_digest(zoo.data.eval);
  report.zoo_digest = zoo_digest(zoo);
  ImagePool pool = clean_correct_pool(zoo, budget);
  for (std::size_t s = 0; s < zoo.num_surrogates; ++s) {
    for (const NamedAttack& attack : attacks) {
      NamedAttack resolved = attack;
      if (resolved.cfg.use_patchout && resolved.cfg.patch_count == 0) {
        const std::size_t n = geometry_of(zoo.models[s]).num_patches();
        resolved.cfg.patch_count = static_cast<int>((2 * n + 2) / 3);  // ceil(2N/3)
      }
      CraftedSet crafted = craft_set(zoo.models[s], pool, resolved, seed, s, jobs);
      for (std::size_t v = 0; v < zoo.models.size(); ++v) {
        if (v == s) continue;
        report.rows.push_back(make_row(zoo, s, v, resolved, crafted, pool, seed));
      }
    }
  }
  return report;
}

// White-box potency of one attack on each surrogate (victim == surrogate).
inline TransferReport run_whitebox(const Zoo& zoo, const NamedAttack& attack,
                                   std::size_t budget, std::uint64_t seed,
                                   std::size_t jobs = 1) {
  TransferReport report;
  report.experiment = "whitebox";
  report.seed = seed;
  report.attacks = {attack};
  report.budget = budget;
  report.dataset_digest = dataset_digest(zoo.data.eval);
  report.zoo_digest = zoo_digest(zoo);
  ImagePool pool = clean_correct_pool(zoo, budget);
  for (std::size_t s = 0; s < zoo.num_surrogates; ++s) {
    CraftedSet crafted = craft_set(zoo.models[s], pool, attack, seed, s, jobs);
    report.rows.push_back(make_row(zoo, s, s, attack, crafted, pool, seed));
  }
  return report;
}

// The seven component combinations of {patchout, l2, pna}, surrogate 0.
inline std::vector<NamedAttack> ablation_attacks(const Zoo& zoo, double lambda = 0.1) {
  const std::size_t n = geometry_of(zoo.models[0]).num_patches();
  const int t = static_cast<int>((2 * n + 2) / 3);
  auto combo = [&](const std::string& name, bool p, bool l, bool pna) {
    NamedAttack a;
    a.name = name;
    a.cfg.use_patchout = p;
    a.cfg.use_l2 = l;
    a.cfg.use_pna = pna;
    a.cfg.lambda = l ? lambda : 0.0;
    a.cfg.patch_count = p ? t : 0;
    return a;
  };
  return {
      combo("bim", false, false, false),
      combo("patchout", true, false, false),
      combo("l2", false, true, false),
      combo("pna", false, false, true),
      combo("patchout+l2", true, true, false),
      combo("l2+pna", false, true, true),
      combo("dual", true, true, true),
  };
}

inline TransferReport run_ablation(const Zoo& zoo, std::size_t budget, std::uint64_t seed,
                                   std::size_t jobs = 1) {
  TransferReport report;
  report.experiment = "ablation";
  report.seed = seed;
  report.attacks = ablation_attacks(zoo);
  report.budget = budget;
  report.dataset_digest = dataset_digest(zoo.data.eval);
  report.zoo_digest = zoo_digest(zoo);
  ImagePool pool = clean_correct_pool(zoo, budget);
  const std::size_t s = 0;
  for (const NamedAttack& attack : report.attacks) {
    CraftedSet crafted = craft_set(zoo.models[s], pool, attack, seed, s, jobs);
    for (std::size_t v = 0; v < zoo.models.size(); ++v) {
      if (v == s) continue;
      report.rows.push_back(make_row(zoo, s, v, attack, crafted, pool, seed));
    }
  }
  return report;
}

// The 2^3 stop/propagate patterns over three equal chunks of blocks.
inline TransferReport run_pna_paths(const Zoo& zoo, std::size_t surrogate_idx,
                                    std::size_t budget, std::uint64_t seed,
                                    std::size_t jobs = 1) {
  const ModelHandle& sur = zoo.models[surrogate_idx];
  if (sur.kind != ModelKind::vit || sur.vit.depth % 3 != 0) {
    throw ShapeError("run_pna_paths: surrogate depth must be divisible by 3");
  }
  const std::size_t chunk = sur.vit.depth / 3;
  TransferReport report;
  report.experiment = "pna_paths";
  report.seed = seed;
  report.budget = budget;
  report.dataset_digest = dataset_digest(zoo.data.eval);
  report.zoo_digest = zoo_digest(zoo);
  ImagePool pool = clean_correct_pool(zoo, budget);
  for (int pattern = 0; pattern < 8; ++pattern) {
    GradRoutingPolicy policy = GradRoutingPolicy::full_gradient(sur.vit.depth);
    std::string name = "bim+skip";
    for (int c = 0; c < 3; ++c) {
      const bool skip = (pattern >> c) & 1;
      name += skip ? '1' : '0';
      if (skip) {
        for (std::size_t b = c * chunk; b < (c + 1) * chunk; ++b) {
          policy.attention_grad_enabled[b] = false;
        }
      }
    }
    NamedAttack attack;
    attack.name = name;
    attack.cfg.policy_override = policy;
    report.attacks.push_back(attack);
    CraftedSet crafted = craft_set(sur, pool, attack, seed, surrogate_idx, jobs);
    for (std::size_t v = 0; v < zoo.models.size(); ++v) {
      if (v == surrogate_idx) continue;
      report.rows.push_back(make_row(zoo, surrogate_idx, v, attack, crafted, pool, seed));
    }
  }
  return report;
}

// Stacked ten-patch perturbations vs whole-image updates at matched total
// iteration counts.
inline TransferReport run_patch_stacking(const Zoo& zoo, std::size_t surrogate_idx,
                                         const std::vector<int>& stages_list,
                                         std::size_t budget, std::uint64_t seed,
                                         std::size_t jobs = 1) {
  TransferReport report;
  report.experiment = "patch_stacking";
  report.seed = seed;
  report.budget = budget;
  report.dataset_digest = dataset_digest(zoo.data.eval);
  report.zoo_digest = zoo_digest(zoo);
  ImagePool pool = clean_correct_pool(zoo, budget);
  const ModelHandle& sur = zoo.models[surrogate_idx];
  for (int stages : stages_list) {
    if (stages < 1) throw ShapeError("run_patch_stacking: stages must be >= 1");
    NamedAttack ten;
    ten.name = "tenpatch_s" + std::to_string(stages);
    ten.cfg.iterations = 10;
    report.attacks.push_back(ten);
    CraftedSet crafted_ten =
        craft_set(sur, pool, ten, seed, surrogate_idx, jobs, stages);
    NamedAttack whole;
    whole.name = "wholeimage_s" + std::to_string(stages);
    whole.cfg.iterations = 10 * stages;  // matched total iterations, alpha = eps/I
    report.attacks.push_back(whole);
    CraftedSet crafted_whole = craft_set(sur, pool, whole, seed, surrogate_idx, jobs);
    for (std::size_t v = 0; v < zoo.models.size(); ++v) {
      if (v == surrogate_idx) continue;
      report.rows.push_back(make_row(zoo, surrogate_idx, v, ten, crafted_ten, pool, seed));
      report.rows.push_back(make_row(zoo, surrogate_idx, v, whole, crafted_whole, pool, seed));
    }
  }
  return report;
}

// T and lambda grids around the dual attack, surrogate 0.
inline TransferReport run_sweeps(const Zoo& zoo, const std::vector<double>& t_fractions,
                                 const std::vector<double>& lambdas, std::size_t budget,
                                 std::uint64_t seed, std::size_t jobs = 1) {
  TransferReport report;
  report.experiment = "sweeps";
  report.seed = seed;
  report.budget = budget;
  report.dataset_digest = dataset_digest(zoo.data.eval);
  report.zoo_digest = zoo_digest(zoo);
  ImagePool pool = clean_correct_pool(zoo, budget);
  const std::size_t s = 0;
  const std::size_t n = geometry_of(zoo.models[s]).num_patches();

  auto dual = [&](int t, double lambda) {
    NamedAttack a;
    a.cfg.use_pna = true;
    a.cfg.use_patchout = true;
    a.cfg.use_l2 = true;
    a.cfg.lambda = lambda;
    a.cfg.patch_count = t;
    return a;
  };

  for (double frac : t_fractions) {
    const int t = std::max(1, static_cast<int>(std::lround(frac * static_cast<double>(n))));
    NamedAttack a = dual(t, 0.1);
    a.name = "dual_T" + std::to_string(t);
    report.attacks.push_back(a);
    CraftedSet crafted = craft_set(zoo.models[s], pool, a, seed, s, jobs);
    for (std::size_t v = 0; v < zoo.models.size(); ++v) {
      if (v == s) continue;
      report.rows.push_back(make_row(zoo, s, v, a, crafted, pool, seed));
    }
  }
  const int t_fixed = static_cast<int>((2 * n + 2) / 3);
  for (double lambda : lambdas) {
    NamedAttack a = dual(t_fixed, lambda);
    std::ostringstream name;
    name << "dual_l" << lambda;
    a.name = name.str();
    report.attacks.push_back(a);
    CraftedSet crafted = craft_set(zoo.models[s], pool, a, seed, s, jobs);
    for (std::size_t v = 0; v < zoo.models.size(); ++v) {
      if (v == s) continue;
      report.rows.push_back(make_row(zoo, s, v, a, crafted, pool, seed));
    }
  }
  return report;
}

// Mean black-box ASR over vit (or cnn) victims for one attack name.
inline double mean_family_asr(const TransferReport& report, const Zoo& zoo,
                              const std::string& attack, ModelKind family) {
  std::map<std::string, ModelKind> kind_of;
  for (const auto& m : zoo.models) kind_of[m.label] = m.kind;
  double sum = 0.0;
  std::size_t n = 0;
  for (const ReportRow& r : report.rows) {
    if (r.attack != attack || r.surrogate == r.victim) continue;
    if (kind_of.at(r.victim) != family) continue;
    sum += r.asr;
    ++n;
  }
  if (n == 0) throw ShapeError("mean_family_asr: no rows for attack " + attack);
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// report files

inline std::string format_asr(double asr) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << asr;
  return os.str();
}

inline std::string report_csv(const TransferReport& report) {
  std::ostringstream os;
  os << "surrogate,victim,attack,eps255,iters,T,lambda,pna,sign,seed,n_images,n_success,asr\n";
  for (const ReportRow& r : report.rows) {
    os << r.surrogate << ',' << r.victim << ',' << r.attack << ',' << r.eps255 << ','
       << r.iters << ',' << r.patch_count << ',' << r.lambda << ',' << (r.pna ? 1 : 0)
       << ',' << (r.sign ? 1 : 0) << ',' << r.seed << ',' << r.n_images << ','
       << r.n_success << ',' << format_asr(r.asr) << '\n';
  }
  return os.str();
}

inline std::uint64_t report_config_digest(const TransferReport& report) {
  std::uint64_t h = fnv1a64(report.experiment.data(), report.experiment.size());
  h = fnv1a64(&report.budget, sizeof(report.budget), h);
  for (const NamedAttack& a : report.attacks) {
    const std::uint64_t d = attack_digest(a);
    h = fnv1a64(&d, sizeof(d), h);
  }
  return h;
}

inline nlohmann::json attack_json(const NamedAttack& a) {
  nlohmann::json j;
  j["name"] = a.name;
  j["eps255"] = static_cast<int>(std::lround(a.cfg.epsilon * 255.0));
  j["iterations"] = a.cfg.iterations;
  j["step_size"] = a.cfg.effective_step();
  j["patch_count"] = a.cfg.patch_count;
  j["lambda"] = a.cfg.lambda;
  j["pna"] = a.cfg.use_pna;
  j["patchout"] = a.cfg.use_patchout;
  j["l2"] = a.cfg.use_l2;
  j["l2_unmasked"] = a.cfg.l2_unmasked;
  j["mi_momentum"] = a.cfg.mi_momentum;
  j["sgm_decay"] = a.cfg.sgm_decay;
  j["sign_step"] = a.cfg.sign_step;
  j["digest"] = hex64(attack_digest(a));
  if (a.cfg.policy_override) {
    nlohmann::json p;
    p["attention_grad_enabled"] = a.cfg.policy_override->attention_grad_enabled;
    p["mlp_grad_decay"] = a.cfg.policy_override->mlp_grad_decay;
    j["policy_override"] = p;
  }
  return j;
}

inline nlohmann::json report_json(const TransferReport& report) {
  nlohmann::json j;
  j["version"] = kReportVersion;
  j["experiment"] = report.experiment;
  j["seed"] = report.seed;
  j["budget"] = report.budget;
  j["dataset_digest"] = hex64(report.dataset_digest);
  j["zoo_digest"] = hex64(report.zoo_digest);
  j["config_digest"] = hex64(report_config_digest(report));
  j["rows"] = report.rows.size();
  j["attacks"] = nlohmann::json::array();
  for (const NamedAttack& a : report.attacks) j["attacks"].push_back(attack_json(a));
  return j;
}

// Writes <experiment>_seed<seed>_<digest>.csv and .json; returns the stem.
inline std::string write_report(const TransferReport& report, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::string stem = report.experiment + "_seed" + std::to_string(report.seed) +
                           "_" + hex64(report_config_digest(report)).substr(0, 8);
  {
    std::ofstream f(out_dir + "/" + stem + ".csv", std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError(CheckpointFault::io, "cannot write report csv");
    f << report_csv(report);
  }
  {
    std::ofstream f(out_dir + "/" + stem + ".json", std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError(CheckpointFault::io, "cannot write report json");
    f << report_json(report).dump(2) << "\n";
  }
  return stem;
}

// ---------------------------------------------------------------------------
// perturbation dumps: same container as checkpoints, tensors delta + x_adv

inline void save_perturbation(const Tensor& delta, const Tensor& x_adv,
                              const NamedAttack& attack, std::size_t label,
                              const std::string& surrogate_label, const std::string& path) {
  Container c;
  c.kind = 3;
  c.config.emplace_back("surrogate", surrogate_label);
  c.config.emplace_back("attack", attack.name);
  c.config.emplace_back("label", std::to_string(label));
  c.config.emplace_back("eps255",
                        std::to_string(static_cast<int>(std::lround(attack.cfg.epsilon * 255.0))));
  c.config.emplace_back("iterations", std::to_string(attack.cfg.iterations));
  c.config.emplace_back("step_size", std::to_string(attack.cfg.effective_step()));
  c.config.emplace_back("patch_count", std::to_string(attack.cfg.patch_count));
  c.config.emplace_back("lambda", std::to_string(attack.cfg.lambda));
  c.config.emplace_back("pna", attack.cfg.use_pna ? "1" : "0");
  c.config.emplace_back("patchout", attack.cfg.use_patchout ? "1" : "0");
  c.config.emplace_back("l2", attack.cfg.use_l2 ? "1" : "0");
  c.config.emplace_back("mi_momentum", std::to_string(attack.cfg.mi_momentum));
  c.config.emplace_back("sgm_decay", std::to_string(attack.cfg.sgm_decay));
  c.config.emplace_back("sign_step", attack.cfg.sign_step ? "1" : "0");
  c.config.emplace_back("seed", std::to_string(attack.cfg.seed));
  c.tensors.emplace("delta", delta);
  c.tensors.emplace("x_adv", x_adv);
  write_container(path, c);
}

// ---------------------------------------------------------------------------
// zoo directory layout: m0.bin..m8.bin + zoo.json manifest

inline void save_zoo(const Zoo& zoo, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < zoo.models.size(); ++i) {
    save_checkpoint(zoo.models[i], dir + "/m" + std::to_string(i) + ".bin");
  }
  nlohmann::json j;
  j["version"] = kReportVersion;
  j["num_models"] = zoo.models.size();
  j["num_surrogates"] = zoo.num_surrogates;
  j["dataset"] = {{"num_classes", zoo.dataset_spec.num_classes},
                  {"image_h", zoo.dataset_spec.image_h},
                  {"image_w", zoo.dataset_spec.image_w},
                  {"channels", zoo.dataset_spec.channels},
                  {"train_per_class", zoo.dataset_spec.train_per_class},
                  {"eval_per_class", zoo.dataset_spec.eval_per_class},
                  {"noise_std", zoo.dataset_spec.noise_std},
                  {"seed", zoo.dataset_spec.seed}};
  j["zoo_digest"] = hex64(zoo_digest(zoo));
  j["labels"] = nlohmann::json::array();
  j["eval_accs"] = zoo.eval_accs;
  for (const auto& m : zoo.models) j["labels"].push_back(m.label);
  std::ofstream f(dir + "/zoo.json", std::ios::binary | std::ios::trunc);
  f << j.dump(2) << "\n";
}

inline Zoo load_zoo(const std::string& dir) {
  std::ifstream f(dir + "/zoo.json");
  if (!f) {
    throw CheckpointError(CheckpointFault::io, "load_zoo: missing manifest in " + dir);
  }
  nlohmann::json j = nlohmann::json::parse(f);
  Zoo zoo;
  zoo.num_surrogates = j["num_surrogates"].get<std::size_t>();
  const std::size_t n = j["num_models"].get<std::size_t>();
  for (std::size_t i = 0; i < n; ++i) {
    zoo.models.push_back(load_checkpoint(dir + "/m" + std::to_string(i) + ".bin"));
  }
  if (j.contains("eval_accs")) zoo.eval_accs = j["eval_accs"].get<std::vector<double>>();
  const nlohmann::json& d = j["dataset"];
  zoo.dataset_spec.num_classes = d["num_classes"].get<std::size_t>();
  zoo.dataset_spec.image_h = d["image_h"].get<std::size_t>();
  zoo.dataset_spec.image_w = d["image_w"].get<std::size_t>();
  zoo.dataset_spec.channels = d["channels"].get<std::size_t>();
  zoo.dataset_spec.train_per_class = d["train_per_class"].get<std::size_t>();
  zoo.dataset_spec.eval_per_class = d["eval_per_class"].get<std::size_t>();
  zoo.dataset_spec.noise_std = d["noise_std"].get<double>();
  zoo.dataset_spec.seed = d["seed"].get<std::uint64_t>();
  zoo.data = gen_dataset(zoo.dataset_spec);
  return zoo;
}

}  // namespace advit
