#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "egmr/augment.hpp"
#include "egmr/metrics.hpp"
#include "egmr/optim.hpp"
#include "egmr/pipeline.hpp"
#include "egmr/synth_scene.hpp"

namespace egmr {

/// Keeps freed tensor memory in the heap instead of returning it to the OS,
/// which avoids refaulting the same pages every step.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

struct TrainConfig {
  std::string dataset;
  std::string out_dir = "run";
  int crop = 64;
  int batch = 4;
  long steps = 2000;
  double lr = 1e-4;
  double lr_min = 1e-5;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
  bool flip = true;
  bool rot90 = true;
  bool fixed_batch = false;  // reuse the first `batch` samples, unaugmented, every step
  long checkpoint_every = 500;
  LossWeights weights;
  ModelConfig model;
  int scene_count = 8;          // samples written by `simulate`
  SceneDistribution scene;

  void validate() const {
    if (crop <= 0 || crop % 16) throw ParameterError("crop must be a positive multiple of 16");
    if (batch <= 0) throw ParameterError("batch must be positive");
    if (steps < 0) throw ParameterError("steps must be non-negative");
    if (!(lr > 0) || !(lr_min > 0) || !(weight_decay >= 0)) throw ParameterError("learning rates must be positive");
    if (checkpoint_every < 0) throw ParameterError("checkpoint_every must be non-negative");
    if (scene_count < 0 || scene.h < 16 || scene.h != scene.w) throw ParameterError("bad scene settings");
    model.validate();
  }
};

// ---------------------------------------------------------------------------
// Flat "key = value" configuration files. '#' starts a comment.

inline std::map<std::string, std::string> parse_kv(std::istream& is, const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParameterError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ParameterError("config key " + key + ": expected a boolean, got '" + v + "'");
}

template <class N>
N parse_num(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  N n{};
  is >> n;
  if (is.fail() || !is.eof()) throw ParameterError("config key " + key + ": bad number '" + v + "'");
  return n;
}

inline std::array<int, 3> parse_triple(const std::string& key, const std::string& v) {
  std::array<int, 3> out{};
  std::string s = v;
  std::replace(s.begin(), s.end(), ',', ' ');
  std::istringstream is(s);
  for (auto& x : out) {
    if (!(is >> x)) throw ParameterError("config key " + key + ": expected three integers");
  }
  std::string rest;
  if (is >> rest) throw ParameterError("config key " + key + ": expected three integers");
  return out;
}

}  // namespace detail

/// Applies recognised keys onto cfg. Unknown keys are rejected.
inline void apply_config(TrainConfig& cfg, const std::map<std::string, std::string>& kv) {
  using detail::parse_bool;
  using detail::parse_num;
  for (const auto& [k, v] : kv) {
    auto& m = cfg.model;
    if (k == "dataset") cfg.dataset = v;
    else if (k == "out_dir") cfg.out_dir = v;
    else if (k == "crop") cfg.crop = parse_num<int>(k, v);
    else if (k == "batch") cfg.batch = parse_num<int>(k, v);
    else if (k == "steps") cfg.steps = parse_num<long>(k, v);
    else if (k == "lr") cfg.lr = parse_num<double>(k, v);
    else if (k == "lr_min") cfg.lr_min = parse_num<double>(k, v);
    else if (k == "weight_decay") cfg.weight_decay = parse_num<double>(k, v);
    else if (k == "seed") cfg.seed = parse_num<std::uint64_t>(k, v);
    else if (k == "flip") cfg.flip = parse_bool(k, v);
    else if (k == "rot90") cfg.rot90 = parse_bool(k, v);
    else if (k == "fixed_batch") cfg.fixed_batch = parse_bool(k, v);
    else if (k == "checkpoint_every") cfg.checkpoint_every = parse_num<long>(k, v);
    else if (k == "lambda_event_recon") cfg.weights.event_recon = parse_num<double>(k, v);
    else if (k == "lambda_recon") cfg.weights.recon = parse_num<double>(k, v);
    else if (k == "lambda_perceptual") cfg.weights.perceptual = parse_num<double>(k, v);
    else if (k == "model.bins") m.bins = parse_num<int>(k, v);
    else if (k == "model.event_base") m.event_base = parse_num<int>(k, v);
    else if (k == "model.if_width") m.if_width = detail::parse_triple(k, v);
    else if (k == "model.if_factor") m.if_factor = detail::parse_triple(k, v);
    else if (k == "model.if_res_convs") m.if_res_convs = parse_num<int>(k, v);
    else if (k == "model.patch") m.patch = parse_num<int>(k, v);
    else if (k == "model.embed_dim") m.embed_dim = parse_num<int>(k, v);
    else if (k == "model.mask_size") m.mask_size = parse_num<int>(k, v);
    else if (k == "model.coa_width") m.coa_width = parse_num<int>(k, v);
    else if (k == "model.c2sa_width") m.c2sa_width = parse_num<int>(k, v);
    else if (k == "model.refine_base") m.refine_base = parse_num<int>(k, v);
    else if (k == "model.use_ega") m.use_ega = parse_bool(k, v);
    else if (k == "model.use_c2sa") m.use_c2sa = parse_bool(k, v);
    else if (k == "model.init_seed") m.init_seed = parse_num<std::uint64_t>(k, v);
    else if (k == "scene.count") cfg.scene_count = parse_num<int>(k, v);
    else if (k == "scene.size") cfg.scene.h = cfg.scene.w = parse_num<int>(k, v);
    else if (k == "scene.min_shapes") cfg.scene.min_shapes = parse_num<int>(k, v);
    else if (k == "scene.max_shapes") cfg.scene.max_shapes = parse_num<int>(k, v);
    else if (k == "scene.max_displacement") cfg.scene.max_displacement = parse_num<double>(k, v);
    else if (k == "scene.occluding") cfg.scene.occluding = parse_bool(k, v);
    else if (k == "scene.tau") cfg.scene.tau = parse_num<double>(k, v);
    else if (k == "scene.n_sub") cfg.scene.n_sub = parse_num<int>(k, v);
    else if (k == "scene.contrast_threshold") cfg.scene.sim.contrast_threshold = parse_num<double>(k, v);
    else if (k == "scene.threshold_sigma") cfg.scene.sim.threshold_sigma = parse_num<double>(k, v);
    else throw ParameterError("unknown config key: " + k);
  }
}

/// Writes every key understood by apply_config, so the file round-trips.
inline void write_config(const TrainConfig& c, std::ostream& os) {
  auto b = [](bool v) { return v ? "true" : "false"; };
  auto triple = [](const std::array<int, 3>& t) {
    return std::to_string(t[0]) + "," + std::to_string(t[1]) + "," + std::to_string(t[2]);
  };
  const auto& m = c.model;
  char lr[256];
  std::snprintf(lr, sizeof(lr), "lr = %.17g\nlr_min = %.17g\nweight_decay = %.17g\n", c.lr, c.lr_min, c.weight_decay);
  os << "# egmr config\n";
  if (!c.dataset.empty()) os << "dataset = " << c.dataset << "\n";
  os << "out_dir = " << c.out_dir << "\ncrop = " << c.crop << "\nbatch = " << c.batch << "\nsteps = " << c.steps
     << "\n" << lr << "seed = " << c.seed << "\nflip = " << b(c.flip) << "\nrot90 = " << b(c.rot90)
     << "\nfixed_batch = " << b(c.fixed_batch) << "\ncheckpoint_every = " << c.checkpoint_every << "\n";
  char lw[256];
  std::snprintf(lw, sizeof(lw), "lambda_event_recon = %.17g\nlambda_recon = %.17g\nlambda_perceptual = %.17g\n",
                c.weights.event_recon, c.weights.recon, c.weights.perceptual);
  os << lw;
  os << "model.bins = " << m.bins << "\nmodel.event_base = " << m.event_base << "\nmodel.if_width = "
     << triple(m.if_width) << "\nmodel.if_factor = " << triple(m.if_factor) << "\nmodel.if_res_convs = "
     << m.if_res_convs << "\nmodel.patch = " << m.patch << "\nmodel.embed_dim = " << m.embed_dim
     << "\nmodel.mask_size = " << m.mask_size << "\nmodel.coa_width = " << m.coa_width
     << "\nmodel.c2sa_width = " << m.c2sa_width << "\nmodel.refine_base = " << m.refine_base
     << "\nmodel.use_ega = " << b(m.use_ega) << "\nmodel.use_c2sa = " << b(m.use_c2sa)
     << "\nmodel.init_seed = " << m.init_seed << "\n";
  const auto& sc = c.scene;
  os << "scene.count = " << c.scene_count << "\nscene.size = " << sc.h << "\nscene.min_shapes = " << sc.min_shapes
     << "\nscene.max_shapes = " << sc.max_shapes << "\nscene.max_displacement = " << sc.max_displacement
     << "\nscene.occluding = " << b(sc.occluding) << "\nscene.tau = " << sc.tau << "\nscene.n_sub = " << sc.n_sub
     << "\nscene.contrast_threshold = " << sc.sim.contrast_threshold
     << "\nscene.threshold_sigma = " << sc.sim.threshold_sigma << "\n";
}

inline TrainConfig load_train_config(const std::string& path, TrainConfig base = {}) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config file " + path);
  apply_config(base, parse_kv(is, path));
  return base;
}

// ---------------------------------------------------------------------------
// Datasets

struct Dataset {
  std::vector<std::string> names;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
};

inline Dataset load_dataset(const std::string& dir) {
  Dataset d;
  for (const auto& name : read_manifest(dir)) {
    d.names.push_back(name);
    d.samples.push_back(read_sample_dir(dir + "/" + name));
  }
  return d;
}

/// Random crop plus the enabled flips / quarter turns.
inline Sample augment_sample(const Sample& s, int crop, bool flip, bool rot, std::mt19937_64& rng) {
  const int h = s.i0.dim(1), w = s.i0.dim(2);
  if (crop > h || crop > w) throw ParameterError("crop larger than sample " + shape_str(s.i0.shape()));
  auto pick = [&rng](int n) { return static_cast<int>(rng() % static_cast<std::uint64_t>(n)); };
  const int y0 = pick(h - crop + 1), x0 = pick(w - crop + 1);
  Sample o = (crop == h && crop == w) ? s : crop_sample(s, y0, x0, crop, crop);
  if (flip && (rng() & 1)) o = flip_horizontal(o);
  if (flip && (rng() & 1)) o = flip_vertical(o);
  if (rot) {
    const int turns = pick(4);
    for (int i = 0; i < turns; ++i) o = rotate90(o);
  }
  return o;
}

// ---------------------------------------------------------------------------
// Training

struct StepLog {
  long step = 0;
  double lr = 0;
  double total = 0, event_recon = 0, recon = 0, perceptual = 0;
};

inline std::string format_step(const StepLog& s) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%ld %.9e %.9e %.9e %.9e %.9e", s.step, s.lr, s.total, s.event_recon, s.recon,
                s.perceptual);
  return buf;
}

inline constexpr const char* kTrainLogHeader = "# egmr-train-log v1";

struct TrainResult {
  std::vector<StepLog> log;
  std::string checkpoint;
  std::string log_path;
};

inline void write_log_header(std::ostream& os, const TrainConfig& cfg, const std::string& fingerprint) {
  os << kTrainLogHeader << "\n";
  os << "# mode: single-thread deterministic\n";
  os << "# model: " << fingerprint << "\n";
  os << "# train: crop=" << cfg.crop << " batch=" << cfg.batch << " steps=" << cfg.steps << " lr=" << cfg.lr
     << " lr_min=" << cfg.lr_min << " weight_decay=" << cfg.weight_decay << " seed=" << cfg.seed
     << " flip=" << cfg.flip << " rot90=" << cfg.rot90 << " fixed_batch=" << cfg.fixed_batch
     << " lambda=" << cfg.weights.event_recon << "/" << cfg.weights.recon << "/" << cfg.weights.perceptual << "\n";
  os << "# columns: step lr total event_recon recon perceptual\n";
}

/// Optimizes `model` on `data`. Writes the step log and checkpoints under
/// cfg.out_dir. A non-finite loss or gradient stops training: the parameters
/// from before the failing step are saved and NumericError is thrown.
inline TrainResult train(EgmrModel<float>& model, const Dataset& data, const TrainConfig& cfg,
                         const std::function<void(const StepLog&)>& on_step = {}) {
  cfg.validate();
  if (data.size() == 0 && cfg.steps > 0) throw InputError("training dataset is empty");
  if (cfg.fixed_batch && static_cast<int>(data.size()) < cfg.batch) {
    throw ParameterError("fixed_batch needs at least `batch` samples");
  }
  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + cfg.out_dir + ": " + ec.message());

  {
    std::ofstream cf(cfg.out_dir + "/train.cfg");
    if (!cf) throw IoError("cannot write " + cfg.out_dir + "/train.cfg");
    write_config(cfg, cf);
  }
  TrainResult res;
  res.checkpoint = cfg.out_dir + "/model.egck";
  res.log_path = cfg.out_dir + "/train.log";
  std::ofstream log(res.log_path);
  if (!log) throw IoError("cannot write " + res.log_path);
  write_log_header(log, cfg, model.fingerprint());

  auto& params = model.params();
  AdamW<float> opt(params, {0.9, 0.999, 1e-8, cfg.weight_decay});
  PerceptualExtractor<float> phi;
  std::mt19937_64 rng(cfg.seed);

  for (long step = 0; step < cfg.steps; ++step) {
    const double lr = cosine_lr(step, cfg.steps, cfg.lr, cfg.lr_min);
    params.zero_grad();
    StepLog sl;
    sl.step = step;
    sl.lr = lr;
    try {
      for (int b = 0; b < cfg.batch; ++b) {
        Sample s;
        if (cfg.fixed_batch) {
          s = data.samples[static_cast<std::size_t>(b)];
        } else {
          const auto idx = static_cast<std::size_t>(rng() % data.size());
          s = augment_sample(data.samples[idx], cfg.crop, cfg.flip, cfg.rot90, rng);
        }
        ad::Tape<float> tape;
        auto i0 = tape.constant(s.i0), i1 = tape.constant(s.i1), igt = tape.constant(s.igt);
        auto tr = model.forward(i0, i1, s.events, s.tau);
        auto comps = trace_losses(tr, igt, i0, i1, phi);
        auto total = total_loss(comps, cfg.weights);
        tape.backward(total);
        sl.total += total.value()[0];
        sl.event_recon += comps.event_recon.value()[0];
        sl.recon += comps.recon.value()[0];
        sl.perceptual += comps.perceptual.value()[0];
      }
      const float inv = 1.0f / static_cast<float>(cfg.batch);
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k];
        for (auto& g : p.grad.values()) {
          g *= inv;
          if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + p.name);
        }
      }
    } catch (const NumericError& e) {
      model.save(res.checkpoint);
      log << "# aborted at step " << step << ": " << e.what() << "\n";
      throw NumericError(std::string("training aborted at step ") + std::to_string(step) + ": " + e.what() +
                         "; last good checkpoint kept at " + res.checkpoint);
    }
    sl.total /= cfg.batch;
    sl.event_recon /= cfg.batch;
    sl.recon /= cfg.batch;
    sl.perceptual /= cfg.batch;
    opt.step(lr);
    res.log.push_back(sl);
    log << format_step(sl) << "\n";
    if (on_step) on_step(sl);
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) model.save(res.checkpoint);
  }
  log.flush();
  model.save(res.checkpoint);
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation

struct MetricEntry {
  std::string name;
  double psnr = 0;
  double ssim = 0;
};

struct MetricReport {
  std::vector<MetricEntry> entries;
  std::vector<std::string> skipped;
  double mean_psnr = 0;
  double mean_ssim = 0;
};

using Predictor = std::function<Tensor<float>(const Sample&)>;

inline Predictor model_predictor(const EgmrModel<float>& model) {
  return [&model](const Sample& s) { return model.predict(s.i0, s.i1, s.events, s.tau); };
}

/// Per-sample and mean PSNR / SSIM. Samples without a ground-truth frame are
/// skipped and listed.
inline MetricReport evaluate(const Predictor& predict, const Dataset& data) {
  MetricReport r;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data.samples[i];
    const std::string name = i < data.names.size() ? data.names[i] : std::to_string(i);
    if (s.igt.rank() != 3) {
      r.skipped.push_back(name);
      continue;
    }
    const auto out = predict(s);
    r.entries.push_back({name, psnr(s.igt, out), ssim(s.igt, out)});
  }
  for (const auto& e : r.entries) {
    r.mean_psnr += e.psnr;
    r.mean_ssim += e.ssim;
  }
  if (!r.entries.empty()) {
    r.mean_psnr /= static_cast<double>(r.entries.size());
    r.mean_ssim /= static_cast<double>(r.entries.size());
  }
  return r;
}

inline void write_report(const MetricReport& r, std::ostream& os) {
  os << "# egmr-eval-report v1\n";
  os << "# columns: sample psnr_db ssim\n";
  char buf[256];
  for (const auto& e : r.entries) {
    std::snprintf(buf, sizeof(buf), "%s %.6f %.6f", e.name.c_str(), e.psnr, e.ssim);
    os << buf << "\n";
  }
  for (const auto& s : r.skipped) os << "skipped " << s << " missing ground truth\n";
  std::snprintf(buf, sizeof(buf), "mean %.6f %.6f", r.mean_psnr, r.mean_ssim);
  os << buf << "\n";
  os << "count " << r.entries.size() << " skipped " << r.skipped.size() << "\n";
}

}  // namespace egmr
