// End-to-end acceptance run. Prints one "criterion N PASS|FAIL ..." line per
// criterion and exits non-zero if any failed. Progress goes to stderr.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "egmr/ablate.hpp"
#include "egmr/ega.hpp"
#include "egmr/event_core.hpp"
#include "egmr/losses.hpp"
#include "egmr/metrics.hpp"
#include "egmr/pipeline.hpp"
#include "egmr/synth_scene.hpp"
#include "egmr/train.hpp"
#include "egmr/warp_refine.hpp"
#include "test_util.hpp"

using namespace egmr;
using egmr::test::random_tensor;
using egmr::test::smooth_field;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

void progress(const std::string& s) { std::cerr << "  .. " << s << std::endl; }

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

TrainConfig desk_config() { return load_train_config(std::string(EGMR_SOURCE_DIR) + "/configs/desk.cfg"); }

ModelConfig tiny_model() {
  ModelConfig c;
  c.event_base = 4;
  c.if_width = {8, 8, 8};
  c.if_res_convs = 1;
  c.embed_dim = 8;
  c.coa_width = 4;
  c.c2sa_width = 4;
  c.refine_base = 4;
  return c;
}

Sample render_sample(int size, std::uint64_t seed, bool occluding) {
  SceneDistribution d;
  d.h = d.w = size;
  d.occluding = occluding;
  double tau = 0.5;
  const auto spec = sample_scene(d, seed, &tau);
  EventSimConfig sim;
  sim.seed = seed;
  return render_sequence(spec, d.n_sub, tau, sim).sample;
}

// ---------------------------------------------------------------------------

Outcome voxel_oracle() {
  std::mt19937_64 rng(11);
  const int bins = 5, h = 64, w = 64;
  auto stream = egmr::test::random_events(10000, h, w, 1000000, rng);
  stream.events.front().t = 0;
  stream.events.back().t = 1000000;
  const auto t0 = Clock::now();
  const auto grid = voxelize(stream, bins, h, w);
  const double secs = seconds_since(t0);

  // Each event on its own: triangular kernel against every bin centre.
  std::vector<double> ref(grid.size(), 0.0);
  const double span = stream.t_end - stream.t_start;
  for (const auto& e : stream.events) {
    const double pos = (static_cast<double>(e.t) - stream.t_start) / span * (bins - 1);
    for (int b = 0; b < bins; ++b) {
      const double k = std::max(0.0, 1.0 - std::abs(pos - b));
      ref[(static_cast<std::size_t>(b) * h + e.y) * w + e.x] += e.p * k;
    }
  }
  double worst = 0, mass = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    worst = std::max(worst, std::abs(ref[i] - grid[i]));
    mass += grid[i];
  }
  const double mass_err = std::abs(mass - static_cast<double>(stream.signed_mass()));
  return {worst <= 1e-6 && mass_err <= 1e-4 && secs < 1.0,
          fmt("voxel grid: max cell diff %.3g, signed-mass diff %.3g, %.4f s", worst, mass_err, secs)};
}

Tensor<double> patch_tokens(const Tensor<double>& f, int p) {
  const int c = f.dim(0), gh = f.dim(1) / p, gw = f.dim(2) / p;
  Tensor<double> t({gh * gw, c * p * p});
  for (int ty = 0; ty < gh; ++ty)
    for (int tx = 0; tx < gw; ++tx)
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x)
            t[static_cast<std::size_t>(ty * gw + tx) * c * p * p + (ch * p + y) * p + x] = f.at(ch, ty * p + y, tx * p + x);
  return t;
}

Tensor<double> affine(const Tensor<double>& x, const Param<double>& w, const Param<double>& b) {
  const int n = x.dim(0), in = x.dim(1), out = w.value.dim(1);
  Tensor<double> y({n, out});
  for (int r = 0; r < n; ++r)
    for (int o = 0; o < out; ++o) {
      double s = b.value[o];
      for (int i = 0; i < in; ++i) s += x[static_cast<std::size_t>(r) * in + i] * w.value[static_cast<std::size_t>(i) * out + o];
      y[static_cast<std::size_t>(r) * out + o] = s;
    }
  return y;
}

Outcome masked_attention() {
  std::mt19937_64 rng(21);
  ParamStore<double> ps;
  ModelConfig cfg;
  cfg.mask_size = 3;
  CrossModalLocalAttention<double> cla(ps, rng, cfg, "cla");
  egmr::test::perturb_params(ps, rng, 0.02);
  const int side = 5 * cfg.patch;
  const auto fe = random_tensor<double>({4, side, side}, rng, -3, 3);
  const auto fs = random_tensor<double>({4, side, side}, rng, -3, 3);
  ad::Tape<double> tape(false);
  const auto o = cla(tape.constant(fe), tape.constant(fs));
  if (o.grid_h != 5 || o.grid_w != 5) return {false, fmt("patch grid is %dx%d, expected 5x5", o.grid_h, o.grid_w)};

  const auto q = affine(patch_tokens(fe, cfg.patch), ps.at("cla.q_e.weight"), ps.at("cla.q_e.bias"));
  const auto k = affine(patch_tokens(fs, cfg.patch), ps.at("cla.k_f.weight"), ps.at("cla.k_f.bias"));
  const auto v = affine(patch_tokens(fs, cfg.patch), ps.at("cla.v_f.weight"), ps.at("cla.v_f.bias"));
  const int n = 25, d = cfg.embed_dim;
  double worst = 0;
  for (int qi = 0; qi < n; ++qi) {
    // Softmax over the 3x3 neighbourhood only, then the weighted frame values.
    std::vector<int> nbrs;
    for (int ki = 0; ki < n; ++ki) {
      if (std::max(std::abs(qi / 5 - ki / 5), std::abs(qi % 5 - ki % 5)) <= 1) nbrs.push_back(ki);
    }
    std::vector<double> e;
    for (int ki : nbrs) {
      double s = 0;
      for (int j = 0; j < d; ++j) s += q[qi * d + j] * k[ki * d + j];
      e.push_back(s / std::sqrt(static_cast<double>(d)));
    }
    const double mx = *std::max_element(e.begin(), e.end());
    double z = 0;
    for (auto& x : e) z += (x = std::exp(x - mx));
    for (int j = 0; j < d; ++j) {
      double s = 0;
      for (std::size_t i = 0; i < nbrs.size(); ++i) s += e[i] / z * v[nbrs[i] * d + j];
      worst = std::max(worst, std::abs(s - o.v_rect.value()[qi * d + j]));
    }
  }
  return {worst <= 1e-5, fmt("local attention output vs restricted softmax: max abs diff %.3g", worst)};
}

double bilinear_zero_pad(const Tensor<double>& img, int c, double sy, double sx) {
  const int h = img.dim(1), w = img.dim(2);
  auto px = [&](int y, int x) { return (y < 0 || y >= h || x < 0 || x >= w) ? 0.0 : img.at(c, y, x); };
  const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
  const double ax = sx - x0, ay = sy - y0;
  return (1 - ay) * ((1 - ax) * px(y0, x0) + ax * px(y0, x0 + 1)) + ay * ((1 - ax) * px(y0 + 1, x0) + ax * px(y0 + 1, x0 + 1));
}

Outcome warp_oracles() {
  std::mt19937_64 rng(31);
  ad::Tape<float> tf(false);
  const auto img = random_tensor({3, 24, 32}, rng);
  const bool identity =
      warp_frame(tf.constant(img), tf.constant(Tensor<float>({2, 24, 32}))).image.value().values() == img.values();

  const int dx = 3, dy = -2;
  Tensor<float> shift({2, 24, 32});
  std::fill(shift.data(), shift.data() + 24 * 32, static_cast<float>(dx));
  std::fill(shift.data() + 24 * 32, shift.data() + 2 * 24 * 32, static_cast<float>(dy));
  const auto shifted = warp_frame(tf.constant(img), tf.constant(shift)).image.value();
  int shift_bad = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 32; ++x) {
        const int sy = y + dy, sx = x + dx;
        const float want = (sy >= 0 && sy < 24 && sx >= 0 && sx < 32) ? img.at(c, sy, sx) : 0.0f;
        shift_bad += shifted.at(c, y, x) != want;
      }

  const auto dimg = random_tensor<double>({3, 40, 48}, rng);
  const auto flow = smooth_field<double>(2, 40, 48, 7.0, rng);
  ad::Tape<double> td(false);
  const auto out = warp_frame(td.constant(dimg), td.constant(flow)).image.value();
  double worst = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 40; ++y)
      for (int x = 0; x < 48; ++x)
        worst = std::max(worst, std::abs(bilinear_zero_pad(dimg, c, y + flow.at(1, y, x), x + flow.at(0, y, x)) -
                                         out.at(c, y, x)));
  return {identity && shift_bad == 0 && worst <= 1e-6,
          fmt("zero flow bit-exact %s, integer shift mismatches %d, random flow max diff %.3g",
              identity ? "yes" : "no", shift_bad, worst)};
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(41);
  const int h = 32, w = 32;
  struct Row {
    std::string name;
    egmr::test::GradCheckResult r;
  };
  std::vector<Row> rows;
  const auto gt = random_tensor<double>({3, h, w}, rng);
  {
    const auto pred = random_tensor<double>({3, h, w}, rng);
    rows.push_back({"recon", egmr::test::check_input_grads(
                                 {pred},
                                 [&](ad::Tape<double>& t, const std::vector<ad::Var<double>>& v) {
                                   return recon_loss(t.constant(gt), v[0]);
                                 },
                                 80, rng, 1e-4 / 255.0)});
  }
  {
    const auto i0 = random_tensor<double>({3, h, w}, rng), i1 = random_tensor<double>({3, h, w}, rng);
    const auto flow = smooth_field<double>(4, h, w, 3.0, rng);
    const auto logits = random_tensor<double>({2, h, w}, rng, -1, 1);
    rows.push_back({"event_recon", egmr::test::check_input_grads(
                                       {i0, i1, flow, logits},
                                       [&](ad::Tape<double>& t, const std::vector<ad::Var<double>>& v) {
                                         return event_recon_loss(t.constant(gt), v[0], v[1], v[2], ad::softmax_pair(v[3]));
                                       },
                                       40, rng, 1e-4 / 255.0)});
  }
  {
    const PerceptualExtractor<double> phi;
    const auto pred = random_tensor<double>({3, h, w}, rng);
    rows.push_back({"perceptual", egmr::test::check_input_grads(
                                      {pred},
                                      [&](ad::Tape<double>& t, const std::vector<ad::Var<double>>& v) {
                                        return perceptual_loss(t.constant(gt), v[0], phi);
                                      },
                                      80, rng, 1e-4 / 255.0)});
  }
  {
    const auto s = render_sample(h, 2, true);
    const auto i0 = s.i0.cast<double>(), i1 = s.i1.cast<double>(), igt = s.igt.cast<double>();
    EgmrModel<double> model(tiny_model());
    egmr::test::perturb_params(model.params(), rng, 0.05);
    const PerceptualExtractor<double> phi;
    rows.push_back({"full model", egmr::test::check_param_grads(
                                      model.params(),
                                      [&](ad::Tape<double>& t) {
                                        auto a = t.constant(i0), b = t.constant(i1);
                                        const auto tr = model.forward(a, b, s.events, s.tau);
                                        return total_loss(trace_losses(tr, t.constant(igt), a, b, phi), LossWeights{});
                                      },
                                      0.01, rng)});
  }
  const double secs = seconds_since(t0);
  bool ok = secs < 300.0;
  std::string detail;
  for (const auto& row : rows) {
    ok = ok && row.r.worst_rel < 1e-3 && row.r.checked > 0;
    detail += fmt("%s %.2g (%d probes, %d at h/10), ", row.name.c_str(), row.r.worst_rel, row.r.checked, row.r.reprobed);
    if (row.r.worst_rel >= 1e-3) detail += "worst at " + row.r.where + ", ";
  }
  return {ok, "finite-difference max rel error: " + detail + fmt("%.1f s", secs)};
}

Outcome normalization() {
  std::mt19937_64 rng(51);
  double worst = 0;
  int passes = 0;
  for (int m = 0; m < 4; ++m) {
    ModelConfig cfg;
    cfg.init_seed = 100 + m;
    EgmrModel<float> model(cfg);
    egmr::test::perturb_params(model.params(), rng, 0.2);
    for (int k = 0; k < 25; ++k, ++passes) {
      std::uniform_real_distribution<double> ut(0.05, 0.95);
      Sample s;
      if (k % 2) {
        s = render_sample(64, 1000 + passes, k % 4 == 1);
        s.tau = ut(rng);
      } else {
        s.i0 = random_tensor({3, 64, 64}, rng);
        s.i1 = random_tensor({3, 64, 64}, rng);
        s.events = egmr::test::random_events(2000, 64, 64, 100000, rng);
        s.tau = ut(rng);
      }
      ad::Tape<float> tape(false);
      const auto tr = model.forward(tape, s.i0, s.i1, s.events, s.tau);
      for (const auto* pair : {&tr.event_visibility.value(), &tr.weights.value()}) {
        const std::size_t hw = 64 * 64;
        for (std::size_t i = 0; i < hw; ++i)
          worst = std::max(worst, std::abs(static_cast<double>((*pair)[i]) + (*pair)[hw + i] - 1.0));
      }
    }
  }
  return {worst <= 1e-6, fmt("event visibility and fusion weights over %d passes: max |sum - 1| %.3g", passes, worst)};
}

/// Two identical desk-preset runs on the 8-sample overfit set.
struct OverfitRuns {
  double secs[2] = {0, 0};
  std::string log[2], ckpt[2];
  MetricReport report;
};

OverfitRuns run_overfit(const std::string& work) {
  OverfitRuns r;
  TrainConfig base = desk_config();
  const std::string data_dir = work + "/overfit/data";
  fs::remove_all(work + "/overfit");
  make_dataset(base.scene_count, base.scene, base.seed, data_dir);
  const auto data = load_dataset(data_dir);
  for (int i = 0; i < 2; ++i) {
    TrainConfig cfg = base;
    cfg.out_dir = work + "/overfit/run" + std::to_string(i);
    EgmrModel<float> model(cfg.model);
    progress(fmt("overfit run %d: %ld steps on %zu samples", i + 1, cfg.steps, data.size()));
    const auto t0 = Clock::now();
    const auto res = train(model, data, cfg, [&](const StepLog& s) {
      if ((s.step + 1) % 250 == 0) progress(fmt("step %ld loss %.4f", s.step + 1, s.total));
    });
    r.secs[i] = seconds_since(t0);
    r.log[i] = slurp(res.log_path);
    r.ckpt[i] = slurp(res.checkpoint);
    if (i == 0) r.report = evaluate(model_predictor(model), data);
  }
  return r;
}

/// Logs and checkpoints of two finished overfit runs left in `work` by an
/// earlier invocation, if both completed every step.
std::optional<OverfitRuns> finished_overfit(const std::string& work) {
  const long steps = desk_config().steps;
  OverfitRuns r;
  for (int i = 0; i < 2; ++i) {
    const std::string dir = work + "/overfit/run" + std::to_string(i);
    r.log[i] = slurp(dir + "/train.log");
    r.ckpt[i] = slurp(dir + "/model.egck");
    const auto last = r.log[i].rfind('\n', r.log[i].size() >= 2 ? r.log[i].size() - 2 : 0);
    const std::string tail = last == std::string::npos ? "" : r.log[i].substr(last + 1);
    if (r.ckpt[i].empty() || tail.rfind(std::to_string(steps - 1) + " ", 0) != 0) return std::nullopt;
  }
  return r;
}

Outcome overfit(const OverfitRuns& r) {
  const double worst_secs = std::max(r.secs[0], r.secs[1]);
  return {r.report.entries.size() == 8 && r.report.mean_psnr >= 30.0 && r.report.mean_ssim >= 0.90 &&
              worst_secs <= 1800.0,
          fmt("train-set mean PSNR %.2f dB, SSIM %.4f over %zu samples, slowest run %.0f s", r.report.mean_psnr,
              r.report.mean_ssim, r.report.entries.size(), worst_secs)};
}

Outcome determinism(const OverfitRuns& r) {
  const bool logs = !r.log[0].empty() && r.log[0] == r.log[1];
  const bool ckpts = !r.ckpt[0].empty() && r.ckpt[0] == r.ckpt[1];
  return {logs && ckpts, fmt("loss logs identical %s (%zu bytes), checkpoints identical %s (%zu bytes)",
                             logs ? "yes" : "no", r.log[0].size(), ckpts ? "yes" : "no", r.ckpt[0].size())};
}

// Occluding-scene sets shared by the variant comparison and the mask sweep.
constexpr long kAblationSteps = 500;
constexpr long kSweepSteps = 100;

void make_occluding_sets(const std::string& dir) {
  if (fs::exists(dir + "/train/manifest.json") && fs::exists(dir + "/eval/manifest.json")) return;
  TrainConfig cfg = desk_config();
  cfg.scene.occluding = true;
  make_dataset(32, cfg.scene, 7001, dir + "/train");
  make_dataset(16, cfg.scene, 7002, dir + "/eval");
}

Outcome ablation_direction(const std::string& work) {
  const std::string dir = work + "/occluding";
  make_occluding_sets(dir);
  TrainConfig cfg = desk_config();
  cfg.steps = kAblationSteps;
  cfg.out_dir = work + "/ablation_runs";
  AblationOptions opt;
  opt.seeds = {1, 2, 3};
  opt.variant_rows = "AD";
  opt.mask_sweep = false;
  const auto res = run_ablation(cfg, load_dataset(dir + "/train"), load_dataset(dir + "/eval"), opt, progress);
  const auto& a = res.variants.at(0);
  const auto& d = res.variants.at(1);
  return {d.median_psnr >= a.median_psnr,
          fmt("median PSNR over seeds 1-3, %ld steps: full %.3f dB (SSIM %.4f) vs baseline %.3f dB (SSIM %.4f)",
              kAblationSteps, d.median_psnr, d.median_ssim, a.median_psnr, a.median_ssim)};
}

Outcome mask_sweep(const std::string& work) {
  const std::string dir = work + "/occluding";
  make_occluding_sets(dir);
  const std::string table = work + "/mask_sweep.txt";
  fs::remove(table);
  const std::string cmd = std::string("\"") + EGMR_CLI_PATH + "\" ablate --config \"" + EGMR_SOURCE_DIR +
                          "/configs/desk.cfg\" --dataset \"" + dir + "/train\" --eval \"" + dir + "/eval\" --out \"" +
                          work + "/mask_runs\" --steps " + std::to_string(kSweepSteps) +
                          " --seeds 1 --no-variants --masks 1,3,5 --report \"" + table + "\" 2> \"" + work +
                          "/mask_sweep.err\"";
  progress("egmr ablate mask sweep");
  const int rc = std::system(cmd.c_str());
  if (rc != 0) return {false, fmt("ablate exited with status %d", rc)};
  std::ifstream is(table);
  std::string line;
  std::vector<std::string> labels;
  std::string detail;
  bool finite = true;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("table", 0) == 0) continue;
    std::istringstream ls(line);
    std::string label, c2sa, ega;
    double p = NAN, s = NAN;
    ls >> label >> c2sa >> ega >> p >> s;
    finite = finite && std::isfinite(p) && std::isfinite(s);
    labels.push_back(label);
    detail += fmt("%s %.2f/%.4f ", label.c_str(), p, s);
  }
  const bool ok = labels == std::vector<std::string>{"1x1", "3x3", "5x5"} && finite;
  return {ok, "mask sweep table: " + (detail.empty() ? std::string("no rows") : detail)};
}

double psnr_loop(const Tensor<double>& a, const Tensor<double>& b) {
  double se = 0;
  for (int c = 0; c < a.dim(0); ++c)
    for (int y = 0; y < a.dim(1); ++y)
      for (int x = 0; x < a.dim(2); ++x) {
        const double d = 255.0 * a.at(c, y, x) - 255.0 * b.at(c, y, x);
        se += d * d;
      }
  const double mse = se / static_cast<double>(a.size());
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double ssim_loop(const Tensor<double>& a, const Tensor<double>& b) {
  const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
  double g[11], gs = 0;
  for (int i = 0; i < 11; ++i) gs += (g[i] = std::exp(-(i - 5.0) * (i - 5.0) / 4.5));
  const double c1 = 2.55 * 2.55, c2 = 7.65 * 7.65;
  double total = 0;
  for (int ch = 0; ch < c; ++ch) {
    double acc = 0;
    int count = 0;
    for (int y = 0; y + 11 <= h; ++y)
      for (int x = 0; x + 11 <= w; ++x) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double wt = g[i] * g[j] / (gs * gs);
            const double p = 255 * a.at(ch, y + i, x + j), q = 255 * b.at(ch, y + i, x + j);
            mx += wt * p;
            my += wt * q;
            sxx += wt * p * p;
            syy += wt * q * q;
            sxy += wt * p * q;
          }
        const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
        acc += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    total += acc / count;
  }
  return total / c;
}

Outcome metric_oracles() {
  std::mt19937_64 rng(91);
  std::uniform_int_distribution<int> side(11, 40);
  std::uniform_real_distribution<double> level(0.005, 0.3);
  double worst_p = 0, worst_s = 0;
  for (int k = 0; k < 50; ++k) {
    const int h = side(rng), w = side(rng);
    const auto a = random_tensor<double>({3, h, w}, rng);
    std::normal_distribution<double> noise(0.0, level(rng));
    Tensor<double> b = a;
    for (auto& v : b.values()) v = std::clamp(v + noise(rng), 0.0, 1.0);
    worst_p = std::max(worst_p, std::abs(psnr(a, b) - psnr_loop(a, b)));
    worst_s = std::max(worst_s, std::abs(ssim(a, b) - ssim_loop(a, b)));
  }
  return {worst_p <= 1e-6 && worst_s <= 1e-5,
          fmt("50 random pairs: max PSNR diff %.3g dB, max SSIM diff %.3g", worst_p, worst_s)};
}

}  // namespace

int main(int argc, char** argv) {
  std::string work = "acceptance_work";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::istringstream is(argv[++i]);
      std::string tok;
      while (std::getline(is, tok, ',')) only.insert(std::stoi(tok));
    } else {
      std::cerr << "usage: acceptance [--work DIR] [--only N,M,...]\n";
      return 2;
    }
  }
  tune_allocator();
  fs::create_directories(work);
  work = fs::absolute(work).string();

  // Criterion 10 compares the two runs made for criterion 6. Run on its own,
  // it reuses finished runs from the work directory.
  std::optional<OverfitRuns> runs;
  auto overfit_runs = [&](bool reuse) -> const OverfitRuns& {
    if (!runs && reuse) runs = finished_overfit(work);
    if (!runs) runs = run_overfit(work);
    return *runs;
  };
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, voxel_oracle},
      {2, masked_attention},
      {3, warp_oracles},
      {4, gradient_suite},
      {5, normalization},
      {6, [&] { return overfit(overfit_runs(false)); }},
      {7, [&] { return ablation_direction(work); }},
      {8, [&] { return mask_sweep(work); }},
      {9, metric_oracles},
      {10, [&] { return determinism(overfit_runs(true)); }},
  };
  int failed = 0;
  for (const auto& [id, run] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    std::cerr << "criterion " << id << " ..." << std::endl;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
  }
  return failed ? 1 : 0;
}
