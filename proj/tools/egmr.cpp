// egmr command-line front end: simulate, train, interpolate, evaluate, ablate.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "egmr/ablate.hpp"
#include "egmr/image_io.hpp"

namespace {

using namespace egmr;

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  bool seed_given() const { return seed_opt->count() > 0; }
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "key = value configuration file")->check(CLI::ExistingFile);
  c.seed_opt = sub->add_option("--seed", c.seed, "random seed (training, scene sampling, initialization)");
}

TrainConfig base_config(const Common& c, const std::string& fallback_cfg = {}) {
  TrainConfig cfg;
  if (!c.config.empty()) cfg = load_train_config(c.config);
  else if (!fallback_cfg.empty() && std::filesystem::exists(fallback_cfg)) cfg = load_train_config(fallback_cfg);
  return cfg;
}

/// A model built from cfg, loaded from ckpt when given, else freshly initialized.
std::unique_ptr<EgmrModel<float>> make_model(const TrainConfig& cfg, const std::string& ckpt) {
  auto model = std::make_unique<EgmrModel<float>>(cfg.model);
  if (!ckpt.empty()) model->load(ckpt);
  return model;
}

std::string sibling_config(const std::string& ckpt) {
  if (ckpt.empty()) return {};
  return (std::filesystem::path(ckpt).parent_path() / "train.cfg").string();
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Event-guided video frame interpolation", "egmr"};
  app.require_subcommand(1);

  // simulate
  Common sim_c;
  std::string sim_out;
  int sim_count = -1, sim_size = 0;
  bool sim_occluding = false;
  auto* sim = app.add_subcommand("simulate", "render a synthetic dataset with simulated events");
  add_common(sim, sim_c);
  sim->add_option("--out", sim_out, "dataset directory")->required();
  sim->add_option("--count", sim_count, "number of samples");
  sim->add_option("--size", sim_size, "frame side in pixels");
  sim->add_flag("--occluding", sim_occluding, "shapes cross each other mid-clip");

  // train
  Common tr_c;
  std::string tr_dataset, tr_out;
  long tr_steps = -1;
  auto* tr = app.add_subcommand("train", "train a model");
  add_common(tr, tr_c);
  tr->add_option("--dataset", tr_dataset, "dataset directory");
  tr->add_option("--out", tr_out, "run directory (checkpoint, log, config)");
  tr->add_option("--steps", tr_steps, "optimizer steps");

  // interpolate
  Common in_c;
  std::string in_ckpt, in_i0, in_i1, in_events, in_out;
  std::vector<double> in_taus;
  auto* in = app.add_subcommand("interpolate", "synthesize frames between two keyframes");
  add_common(in, in_c);
  in->add_option("--ckpt", in_ckpt, "checkpoint (train.cfg next to it supplies the model config)");
  in->add_option("--i0", in_i0, "first keyframe (PNG)")->required()->check(CLI::ExistingFile);
  in->add_option("--i1", in_i1, "second keyframe (PNG)")->required()->check(CLI::ExistingFile);
  in->add_option("--events", in_events, "event file")->required()->check(CLI::ExistingFile);
  in->add_option("--tau", in_taus, "normalized timestamps in (0, 1), increasing")->required();
  in->add_option("--out", in_out, "output directory")->required();

  // evaluate
  Common ev_c;
  std::string ev_ckpt, ev_dataset, ev_report;
  auto* ev = app.add_subcommand("evaluate", "PSNR / SSIM of a model on a dataset");
  add_common(ev, ev_c);
  ev->add_option("--ckpt", ev_ckpt, "checkpoint (train.cfg next to it supplies the model config)");
  ev->add_option("--dataset", ev_dataset, "dataset directory")->required();
  ev->add_option("--report", ev_report, "report file (default: stdout)");

  // ablate
  Common ab_c;
  std::string ab_dataset, ab_eval, ab_out, ab_report, ab_rows = "ABCD";
  long ab_steps = -1;
  std::vector<std::uint64_t> ab_seeds;
  std::vector<int> ab_masks;
  bool ab_no_variants = false, ab_no_masks = false;
  auto* ab = app.add_subcommand("ablate", "variant grid A-D and mask-size sweep");
  add_common(ab, ab_c);
  ab->add_option("--dataset", ab_dataset, "training dataset");
  ab->add_option("--eval", ab_eval, "evaluation dataset (default: the training dataset)");
  ab->add_option("--out", ab_out, "directory for per-run logs and checkpoints");
  ab->add_option("--steps", ab_steps, "optimizer steps per run");
  ab->add_option("--seeds", ab_seeds, "seeds per row (default: seed, seed+1, seed+2)")->delimiter(',');
  ab->add_option("--masks", ab_masks, "mask sizes for the sweep")->delimiter(',');
  ab->add_option("--variants", ab_rows, "variant rows to run, e.g. AD (default: ABCD)");
  ab->add_flag("--no-variants", ab_no_variants, "skip the A-D grid");
  ab->add_flag("--no-mask-sweep", ab_no_masks, "skip the mask sweep");
  ab->add_option("--report", ab_report, "table file (default: stdout)");

  if (argc < 2) {
    std::cerr << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*sim) {
      TrainConfig cfg = base_config(sim_c);
      if (sim_count >= 0) cfg.scene_count = sim_count;
      if (sim_size > 0) cfg.scene.h = cfg.scene.w = sim_size;
      if (sim_occluding) cfg.scene.occluding = true;
      const std::uint64_t seed = sim_c.seed_given() ? sim_c.seed : cfg.seed;
      std::vector<std::string> warnings;
      const auto names = make_dataset(cfg.scene_count, cfg.scene, seed, sim_out, &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
      std::cout << "wrote " << names.size() << " samples to " << sim_out << "\n";
    } else if (*tr) {
      TrainConfig cfg = base_config(tr_c);
      if (!tr_dataset.empty()) cfg.dataset = tr_dataset;
      if (!tr_out.empty()) cfg.out_dir = tr_out;
      if (tr_steps >= 0) cfg.steps = tr_steps;
      if (tr_c.seed_given()) cfg.seed = cfg.model.init_seed = tr_c.seed;
      if (cfg.dataset.empty()) throw ParameterError("train: no dataset (use --dataset or the dataset key)");
      const auto data = load_dataset(cfg.dataset);
      EgmrModel<float> model(cfg.model);
      const auto res = train(model, data, cfg, [&cfg](const StepLog& s) {
        if (s.step % 50 == 0 || s.step + 1 == cfg.steps) {
          std::fprintf(stderr, "step %ld lr %.3e loss %.4f\n", s.step, s.lr, s.total);
        }
      });
      std::cout << "checkpoint " << res.checkpoint << "\nlog " << res.log_path << "\n";
    } else if (*in) {
      TrainConfig cfg = base_config(in_c, sibling_config(in_ckpt));
      if (in_c.seed_given()) cfg.model.init_seed = in_c.seed;
      const auto model = make_model(cfg, in_ckpt);
      const auto i0 = read_png(in_i0), i1 = read_png(in_i1);
      const auto events = read_events(in_events);
      const auto frames = interpolate_n(*model, i0, i1, events, in_taus);
      std::error_code ec;
      std::filesystem::create_directories(in_out, ec);
      if (ec) throw IoError("cannot create " + in_out + ": " + ec.message());
      for (std::size_t i = 0; i < frames.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04zu.png", i);
        write_png(in_out + "/" + name, frames[i]);
      }
      std::cout << "wrote " << frames.size() << " frames to " << in_out << "\n";
    } else if (*ev) {
      TrainConfig cfg = base_config(ev_c, sibling_config(ev_ckpt));
      if (ev_c.seed_given()) cfg.model.init_seed = ev_c.seed;
      const auto model = make_model(cfg, ev_ckpt);
      const auto data = load_dataset(ev_dataset);
      const auto rep = evaluate(model_predictor(*model), data);
      for (const auto& s : rep.skipped) std::cerr << "warning: " << s << " has no ground truth, skipped\n";
      if (ev_report.empty()) {
        write_report(rep, std::cout);
      } else {
        std::ofstream os(ev_report);
        if (!os) throw IoError("cannot write " + ev_report);
        write_report(rep, os);
      }
    } else if (*ab) {
      TrainConfig cfg = base_config(ab_c);
      if (!ab_dataset.empty()) cfg.dataset = ab_dataset;
      if (!ab_out.empty()) cfg.out_dir = ab_out;
      if (ab_steps >= 0) cfg.steps = ab_steps;
      if (cfg.dataset.empty()) throw ParameterError("ablate: no dataset (use --dataset or the dataset key)");
      AblationOptions opt;
      if (!ab_seeds.empty()) {
        opt.seeds = ab_seeds;
      } else {
        const std::uint64_t s0 = ab_c.seed_given() ? ab_c.seed : cfg.seed;
        opt.seeds = {s0, s0 + 1, s0 + 2};
      }
      if (!ab_masks.empty()) opt.mask_sizes = ab_masks;
      opt.variant_rows = ab_rows;
      opt.variants = !ab_no_variants;
      opt.mask_sweep = !ab_no_masks;
      const auto train_set = load_dataset(cfg.dataset);
      const auto eval_set = ab_eval.empty() ? train_set : load_dataset(ab_eval);
      const auto res = run_ablation(cfg, train_set, eval_set, opt, [](const std::string& line) {
        std::cerr << line << "\n";
      });
      if (ab_report.empty()) {
        write_ablation(res, opt, std::cout);
      } else {
        std::ofstream os(ab_report);
        if (!os) throw IoError("cannot write " + ab_report);
        write_ablation(res, opt, os);
      }
    }
  } catch (const egmr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
