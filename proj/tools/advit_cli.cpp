// advit: desk-scale transfer attacks on miniature vision transformers.
//
// Every artifact a subcommand writes is fully determined by the command line
// plus input digests; rerunning overwrites with identical bytes regardless
// of --jobs.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "advit/attack.hpp"
#include "advit/checkpoint.hpp"
#include "advit/data.hpp"
#include "advit/gradcheck.hpp"
#include "advit/harness.hpp"

using namespace advit;

namespace {

struct AttackFlags {
  int eps255 = 16;
  int iters = 10;
  double step255 = 0.0;  // 0: default eps/iters
  int patches = 0;       // 0: resolved to ceil(2N/3) when patchout is on
  double lambda = 0.1;
  bool pna = false;
  bool patchout = false;
  bool l2 = false;
  bool l2_unmasked = false;
  double mi = 0.0;
  double sgm_decay = 1.0;
  bool no_sign = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--eps255", eps255, "L-inf budget in /255 units")
        ->check(CLI::Range(1, 255));
    cmd->add_option("--iters", iters, "iteration count I")->check(CLI::PositiveNumber);
    cmd->add_option("--step", step255, "step size in /255 units (default eps/iters)");
    cmd->add_option("--patches", patches, "patches updated per iteration T");
    cmd->add_option("--lambda", lambda, "weight of the L2-growth term");
    cmd->add_flag("--pna,!--no-pna", pna, "stop attention gradients");
    cmd->add_flag("--patchout,!--no-patchout", patchout, "resample a T-patch mask per iteration");
    cmd->add_flag("--l2,!--no-l2", l2, "enable the lambda*||delta||_2 term");
    cmd->add_flag("--l2-unmasked", l2_unmasked, "let the L2 term update unselected patches");
    cmd->add_option("--mi", mi, "momentum factor mu (0 disables)");
    cmd->add_option("--sgm-decay", sgm_decay, "mlp residual-branch gradient decay");
    cmd->add_flag("--no-sign", no_sign, "step along the raw gradient instead of its sign");
  }

  AttackConfig to_config() const {
    AttackConfig cfg;
    cfg.epsilon = static_cast<double>(eps255) / 255.0;
    cfg.iterations = iters;
    cfg.step_size = step255 > 0.0 ? step255 / 255.0 : 0.0;
    cfg.patch_count = patches;
    cfg.lambda = lambda;
    cfg.use_pna = pna;
    cfg.use_patchout = patchout;
    cfg.use_l2 = l2;
    cfg.l2_unmasked = l2_unmasked;
    cfg.mi_momentum = mi;
    cfg.sgm_decay = sgm_decay;
    cfg.sign_step = !no_sign;
    cfg.validate();
    return cfg;
  }
};

NamedAttack named_attack_from_registry(const std::string& name, const ModelHandle& surrogate) {
  const std::size_t n = geometry_of(surrogate).num_patches();
  const int t23 = static_cast<int>((2 * n + 2) / 3);
  NamedAttack a;
  a.name = name;
  if (name == "bim") {
  } else if (name == "fgsm") {
    a.cfg.iterations = 1;
    a.cfg.step_size = a.cfg.epsilon;
  } else if (name == "mi") {
    a.cfg.mi_momentum = 1.0;
  } else if (name == "sgm") {
    a.cfg.sgm_decay = 0.5;
  } else if (name == "pna") {
    a.cfg.use_pna = true;
  } else if (name == "dual") {
    a.cfg.use_pna = true;
    a.cfg.use_patchout = true;
    a.cfg.use_l2 = true;
    a.cfg.lambda = 0.1;
    a.cfg.patch_count = t23;
  } else if (name == "mi+ours") {
    a.cfg.use_pna = true;
    a.cfg.use_patchout = true;
    a.cfg.use_l2 = true;
    a.cfg.lambda = 0.1;
    a.cfg.patch_count = t23;
    a.cfg.mi_momentum = 1.0;
  } else if (name == "sgm+ours") {
    a.cfg.use_pna = true;
    a.cfg.use_patchout = true;
    a.cfg.use_l2 = true;
    a.cfg.lambda = 0.1;
    a.cfg.patch_count = t23;
    a.cfg.sgm_decay = 0.5;
  } else {
    throw CLI::ValidationError("--attacks", "unknown attack name '" + name + "'");
  }
  return a;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  for (const std::string& t : split_csv(s)) out.push_back(std::stoi(t));
  return out;
}

std::vector<double> split_doubles(const std::string& s) {
  std::vector<double> out;
  for (const std::string& t : split_csv(s)) out.push_back(std::stod(t));
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"desk-scale transfer attacks on miniature vision transformers"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  std::string out_dir = ".";
  std::size_t jobs = 1;
  app.add_option("--seed", seed, "master seed")->capture_default_str();
  app.add_option("--out-dir", out_dir, "artifact directory")->capture_default_str();
  app.add_option("--jobs", jobs, "worker threads (outputs are independent of this)")
      ->capture_default_str();

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  DatasetSpec gspec;
  gen->add_option("--classes", gspec.num_classes);
  gen->add_option("--height", gspec.image_h);
  gen->add_option("--width", gspec.image_w);
  gen->add_option("--channels", gspec.channels);
  gen->add_option("--train-per-class", gspec.train_per_class);
  gen->add_option("--eval-per-class", gspec.eval_per_class);
  gen->add_option("--noise", gspec.noise_std);

  // train
  auto* train = app.add_subcommand("train", "train one model on a dataset");
  std::string train_data, train_eval, train_out = "model.bin", arch_kind = "vit";
  std::size_t tr_depth = 2, tr_heads = 2, tr_head_dim = 8, tr_patch = 8, tr_mlp = 32;
  std::string tr_convs = "8,16", tr_pools = "2,2";
  std::size_t tr_kernel = 3;
  double tr_lr = 0.07;
  std::size_t tr_epochs = 16;
  std::string tr_label = "model";
  train->add_option("--data", train_data, "training split container")->required();
  train->add_option("--eval", train_eval, "eval split container")->required();
  train->add_option("--out", train_out);
  train->add_option("--arch", arch_kind)->check(CLI::IsMember({"vit", "cnn"}));
  train->add_option("--depth", tr_depth);
  train->add_option("--heads", tr_heads);
  train->add_option("--head-dim", tr_head_dim);
  train->add_option("--patch", tr_patch);
  train->add_option("--mlp", tr_mlp);
  train->add_option("--conv-channels", tr_convs);
  train->add_option("--kernel", tr_kernel);
  train->add_option("--pools", tr_pools);
  train->add_option("--lr", tr_lr);
  train->add_option("--epochs", tr_epochs);
  train->add_option("--label", tr_label);

  // zoo
  auto* zoo_cmd = app.add_subcommand("zoo", "train the pinned 9-model roster");

  // attack
  auto* attack_cmd = app.add_subcommand("attack", "craft adversarial examples on one surrogate");
  std::string atk_model, atk_data;
  std::size_t atk_budget = 256;
  AttackFlags atk_flags;
  attack_cmd->add_option("--model", atk_model, "surrogate checkpoint")->required();
  attack_cmd->add_option("--data", atk_data, "dataset container of clean images")->required();
  attack_cmd->add_option("--budget", atk_budget, "max images to attack");
  atk_flags.add_to(attack_cmd);

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "victim ASR over a directory of dumps");
  std::string ev_model, ev_adv_dir;
  eval_cmd->add_option("--model", ev_model, "victim checkpoint")->required();
  eval_cmd->add_option("--adv-dir", ev_adv_dir, "directory of perturbation dumps")->required();

  // transfer-matrix
  auto* tm = app.add_subcommand("transfer-matrix", "surrogates x attacks x victims ASR table");
  std::string tm_zoo, tm_attacks = "bim,dual";
  std::size_t tm_budget = 256;
  tm->add_option("--zoo-dir", tm_zoo)->required();
  tm->add_option("--attacks", tm_attacks, "comma list: bim,fgsm,mi,sgm,pna,dual,mi+ours,sgm+ours");
  tm->add_option("--budget", tm_budget);

  // ablate
  auto* ab = app.add_subcommand("ablate", "the seven component combinations");
  std::string ab_zoo;
  std::size_t ab_budget = 256;
  ab->add_option("--zoo-dir", ab_zoo)->required();
  ab->add_option("--budget", ab_budget);

  // sweep
  auto* sw = app.add_subcommand("sweep", "patch-count and lambda grids");
  std::string sw_zoo, sw_tfracs = "0.0625,0.25,0.5,0.6667,0.8333,1.0",
                      sw_lambdas = "0.001,0.01,0.1,1,10";
  std::size_t sw_budget = 256;
  sw->add_option("--zoo-dir", sw_zoo)->required();
  sw->add_option("--t-fracs", sw_tfracs, "patch-count grid as fractions of N");
  sw->add_option("--lambdas", sw_lambdas);
  sw->add_option("--budget", sw_budget);

  // pna-paths
  auto* pp = app.add_subcommand("pna-paths", "the 8 per-chunk gradient-routing patterns");
  std::string pp_zoo;
  int pp_surrogate = -1;
  std::size_t pp_budget = 256;
  pp->add_option("--zoo-dir", pp_zoo)->required();
  pp->add_option("--surrogate", pp_surrogate, "surrogate index (default: first depth%3==0)");
  pp->add_option("--budget", pp_budget);

  // patch-stacking
  auto* ps = app.add_subcommand("patch-stacking", "stacked ten-patch vs whole-image updates");
  std::string ps_zoo, ps_stages = "1,2,4,8";
  int ps_surrogate = 0;
  std::size_t ps_budget = 256;
  ps->add_option("--zoo-dir", ps_zoo)->required();
  ps->add_option("--stages", ps_stages);
  ps->add_option("--surrogate", ps_surrogate);
  ps->add_option("--budget", ps_budget);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "oracle suite for every gradient path");

  // dump-images
  auto* di = app.add_subcommand("dump-images", "export images as binary PPM");
  std::string di_data, di_adv_dir;
  std::size_t di_count = 16;
  di->add_option("--data", di_data, "dataset container");
  di->add_option("--adv-dir", di_adv_dir, "directory of perturbation dumps");
  di->add_option("--count", di_count);

  // allow the global --seed/--out-dir/--jobs after a subcommand name
  for (CLI::App* sc : app.get_subcommands([](CLI::App*) { return true; })) {
    sc->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << app.help();
    return 1;
  }

  if (*gen) {
    gspec.seed = seed;
    DatasetPair data = gen_dataset(gspec);
    std::filesystem::create_directories(out_dir);
    save_dataset(data.train, gspec, out_dir + "/train.bin");
    save_dataset(data.eval, gspec, out_dir + "/eval.bin");
    std::printf("wrote %s/train.bin (%zu images) and %s/eval.bin (%zu images)\n",
                out_dir.c_str(), data.train.size(), out_dir.c_str(), data.eval.size());
    return 0;
  }

  if (*train) {
    DatasetSpec spec;
    Dataset tr = load_dataset(train_data, &spec);
    Dataset ev = load_dataset(train_eval);
    ModelArch arch;
    arch.label = tr_label;
    if (arch_kind == "vit") {
      arch.kind = ModelKind::vit;
      arch.vit.image_h = spec.image_h;
      arch.vit.image_w = spec.image_w;
      arch.vit.channels = spec.channels;
      arch.vit.num_classes = spec.num_classes;
      arch.vit.depth = tr_depth;
      arch.vit.num_heads = tr_heads;
      arch.vit.head_dim = tr_head_dim;
      arch.vit.embed_dim = tr_heads * tr_head_dim;
      arch.vit.patch_size = tr_patch;
      arch.vit.mlp_hidden = tr_mlp;
    } else {
      arch.kind = ModelKind::cnn;
      arch.cnn.image_h = spec.image_h;
      arch.cnn.image_w = spec.image_w;
      arch.cnn.channels = spec.channels;
      arch.cnn.num_classes = spec.num_classes;
      arch.cnn.conv_channels.clear();
      for (int v : split_ints(tr_convs)) arch.cnn.conv_channels.push_back(v);
      arch.cnn.kernel_size = tr_kernel;
      arch.cnn.pool_after.clear();
      for (int v : split_ints(tr_pools)) arch.cnn.pool_after.push_back(v);
    }
    arch.hyper.lr = tr_lr;
    arch.hyper.epochs = tr_epochs;
    TrainOutcome out = train_model(arch, tr, ev, arch.hyper, seed);
    save_checkpoint(out.model, train_out);
    std::printf("trained %s: train acc %.4f, eval acc %.4f -> %s\n", tr_label.c_str(),
                out.train_acc, out.eval_acc, train_out.c_str());
    return 0;
  }

  if (*zoo_cmd) {
    Zoo zoo = model_zoo(seed);
    save_zoo(zoo, out_dir);
    std::printf("zoo seed %llu -> %s\n", static_cast<unsigned long long>(seed),
                out_dir.c_str());
    for (std::size_t i = 0; i < zoo.models.size(); ++i) {
      std::printf("  %-8s eval acc %.4f\n", zoo.models[i].label.c_str(), zoo.eval_accs[i]);
    }
    return 0;
  }

  if (*attack_cmd) {
    ModelHandle surrogate = load_checkpoint(atk_model);
    Dataset data = load_dataset(atk_data);
    NamedAttack attack{"cli", atk_flags.to_config()};
    if (attack.cfg.use_patchout && attack.cfg.patch_count == 0) {
      const std::size_t n = geometry_of(surrogate).num_patches();
      attack.cfg.patch_count = static_cast<int>((2 * n + 2) / 3);
    }
    std::filesystem::create_directories(out_dir);
    // images the surrogate classifies correctly, attacked in dataset order
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < data.size() && keep.size() < atk_budget; ++i) {
      if (model_predict(surrogate, data.images[i]) == data.labels[i]) keep.push_back(i);
    }
    std::vector<AttackResult> results(keep.size());
    parallel_for(keep.size(), jobs, [&](std::size_t i) {
      AttackConfig cfg = attack.cfg;
      cfg.seed = RngStream(seed).split(0x636c69).split(i).key();
      results[i] = dual_attack(surrogate, data.images[keep[i]], data.labels[keep[i]], cfg);
    });
    std::size_t flipped = 0;
    for (std::size_t i = 0; i < keep.size(); ++i) {
      flipped += (model_predict(surrogate, results[i].x_adv) != data.labels[keep[i]]);
      NamedAttack echo = attack;
      echo.cfg.seed = RngStream(seed).split(0x636c69).split(i).key();
      save_perturbation(results[i].delta, results[i].x_adv, echo, data.labels[keep[i]],
                        surrogate.label,
                        out_dir + "/adv_" + std::to_string(keep[i]) + ".bin");
    }
    std::printf("attacked %zu images, white-box ASR %.2f%% -> %s\n", keep.size(),
                keep.empty() ? 0.0 : 100.0 * flipped / keep.size(), out_dir.c_str());
    return 0;
  }

  if (*eval_cmd) {
    ModelHandle victim = load_checkpoint(ev_model);
    std::vector<std::string> files;
    for (const auto& entry : std::filesystem::directory_iterator(ev_adv_dir)) {
      if (entry.path().extension() == ".bin") files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    std::size_t n = 0, flipped = 0, skipped = 0;
    for (const std::string& f : files) {
      Container c = read_container(f);
      if (c.kind != 3) continue;
      const std::size_t label = std::stoull(c.config_value("label"));
      const Tensor& x_adv = c.tensors.at("x_adv");
      Tensor clean = sub(x_adv, c.tensors.at("delta"));
      if (model_predict(victim, clean) != label) {
        ++skipped;  // victim must be clean-correct for ASR to be meaningful
        continue;
      }
      ++n;
      flipped += (model_predict(victim, x_adv) != label);
    }
    if (n == 0) {
      std::fprintf(stderr, "evaluate: no clean-correct dumps under %s\n", ev_adv_dir.c_str());
      return 2;
    }
    std::printf("victim %s: ASR %.2f%% over %zu images (%zu skipped as clean-incorrect)\n",
                victim.label.c_str(), 100.0 * flipped / n, n, skipped);
    return 0;
  }

  if (*tm) {
    Zoo zoo = load_zoo(tm_zoo);
    std::vector<NamedAttack> attacks;
    for (const std::string& name : split_csv(tm_attacks)) {
      attacks.push_back(named_attack_from_registry(name, zoo.models[0]));
      attacks.back().cfg.patch_count = 0;  // resolved per surrogate
    }
    TransferReport report = run_transfer_matrix(zoo, attacks, tm_budget, seed, jobs);
    const std::string stem = write_report(report, out_dir);
    std::printf("transfer matrix: %zu rows -> %s/%s.csv\n", report.rows.size(),
                out_dir.c_str(), stem.c_str());
    return 0;
  }

  if (*ab) {
    Zoo zoo = load_zoo(ab_zoo);
    TransferReport report = run_ablation(zoo, ab_budget, seed, jobs);
    const std::string stem = write_report(report, out_dir);
    // the seven-row family summary alongside the raw rows
    std::ostringstream summary;
    summary << "attack,patchout,l2,pna,vit_masr,cnn_masr\n";
    for (const NamedAttack& a : report.attacks) {
      summary << a.name << ',' << (a.cfg.use_patchout ? 1 : 0) << ',' << (a.cfg.use_l2 ? 1 : 0)
              << ',' << (a.cfg.use_pna ? 1 : 0) << ','
              << format_asr(mean_family_asr(report, zoo, a.name, ModelKind::vit)) << ','
              << format_asr(mean_family_asr(report, zoo, a.name, ModelKind::cnn)) << '\n';
    }
    std::ofstream f(out_dir + "/" + stem + "_summary.csv", std::ios::binary | std::ios::trunc);
    f << summary.str();
    std::printf("ablation: %zu rows -> %s/%s.csv (+_summary.csv)\n", report.rows.size(),
                out_dir.c_str(), stem.c_str());
    return 0;
  }

  if (*sw) {
    Zoo zoo = load_zoo(sw_zoo);
    TransferReport report = run_sweeps(zoo, split_doubles(sw_tfracs), split_doubles(sw_lambdas),
                                       sw_budget, seed, jobs);
    const std::string stem = write_report(report, out_dir);
    std::printf("sweeps: %zu rows -> %s/%s.csv\n", report.rows.size(), out_dir.c_str(),
                stem.c_str());
    return 0;
  }

  if (*pp) {
    Zoo zoo = load_zoo(pp_zoo);
    std::size_t sur = 0;
    if (pp_surrogate >= 0) {
      sur = static_cast<std::size_t>(pp_surrogate);
    } else {
      bool found = false;
      for (std::size_t i = 0; i < zoo.num_surrogates; ++i) {
        if (zoo.models[i].kind == ModelKind::vit && zoo.models[i].vit.depth % 3 == 0) {
          sur = i;
          found = true;
          break;
        }
      }
      if (!found) throw ShapeError("pna-paths: no surrogate with depth divisible by 3");
    }
    TransferReport report = run_pna_paths(zoo, sur, pp_budget, seed, jobs);
    const std::string stem = write_report(report, out_dir);
    std::printf("pna paths: %zu rows -> %s/%s.csv\n", report.rows.size(), out_dir.c_str(),
                stem.c_str());
    return 0;
  }

  if (*ps) {
    Zoo zoo = load_zoo(ps_zoo);
    TransferReport report = run_patch_stacking(zoo, static_cast<std::size_t>(ps_surrogate),
                                               split_ints(ps_stages), ps_budget, seed, jobs);
    const std::string stem = write_report(report, out_dir);
    std::printf("patch stacking: %zu rows -> %s/%s.csv\n", report.rows.size(), out_dir.c_str(),
                stem.c_str());
    return 0;
  }

  if (*gc) {
    const bool ok = print_gradcheck(run_gradcheck(seed));
    return ok ? 0 : 2;
  }

  if (*di) {
    std::filesystem::create_directories(out_dir);
    std::size_t written = 0;
    if (!di_data.empty()) {
      Dataset data = load_dataset(di_data);
      for (std::size_t i = 0; i < data.size() && written < di_count; ++i, ++written) {
        write_ppm(data.images[i], out_dir + "/img" + std::to_string(i) + "_class" +
                                      std::to_string(data.labels[i]) + ".ppm");
      }
    } else if (!di_adv_dir.empty()) {
      std::vector<std::string> files;
      for (const auto& entry : std::filesystem::directory_iterator(di_adv_dir)) {
        if (entry.path().extension() == ".bin") files.push_back(entry.path().string());
      }
      std::sort(files.begin(), files.end());
      for (const std::string& f : files) {
        if (written >= di_count) break;
        Container c = read_container(f);
        if (c.kind != 3) continue;
        write_ppm(c.tensors.at("x_adv"),
                  out_dir + "/" + std::filesystem::path(f).stem().string() + ".ppm");
        ++written;
      }
    } else {
      throw CLI::ValidationError("dump-images", "needs --data or --adv-dir");
    }
    std::printf("wrote %zu ppm files to %s\n", written, out_dir.c_str());
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
