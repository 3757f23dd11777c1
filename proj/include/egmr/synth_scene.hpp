#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "egmr/event_core.hpp"
#include "egmr/image_io.hpp"

namespace egmr {

enum class ShapeKind { Rectangle, Disk };

/// Per-axis quadratic position c0 + c1 t + c2 t^2 over normalized time t in [0, 1].
struct Trajectory {
  std::array<double, 3> x{0, 0, 0};
  std::array<double, 3> y{0, 0, 0};

  std::array<double, 2> at(double t) const {
    return {x[0] + x[1] * t + x[2] * t * t, y[0] + y[1] * t + y[2] * t * t};
  }
};

/// `half_w`/`half_h` are half extents; a disk uses half_w as its radius.
/// Smaller depth is nearer to the camera.
struct ShapeSpec {
  ShapeKind kind = ShapeKind::Rectangle;
  double half_w = 4;
  double half_h = 4;
  double intensity = 1;
  Trajectory traj;
  int depth = 0;

  bool contains(double px, double py, double t) const {
    const auto c = traj.at(t);
    const double dx = px - c[0], dy = py - c[1];
    if (kind == ShapeKind::Disk) return dx * dx + dy * dy <= half_w * half_w;
    return std::abs(dx) <= half_w && std::abs(dy) <= half_h;
  }
};

struct SceneSpec {
  int h = 64;
  int w = 64;
  double background = 0.2;
  std::vector<ShapeSpec> shapes;
  std::uint64_t seed = 0;
};

struct EventSimConfig {
  double contrast_threshold = 0.2;
  double threshold_sigma = 0.0;  // Gaussian jitter of the threshold, 0 = ideal sensor
  std::int64_t t_end_us = 100000;
  std::uint64_t seed = 0;
};

/// Keyframes, ground truth at tau, simulated events and analytic flow.
struct Sample {
  Tensor<float> i0, i1, igt;  // 3 x H x W in [0, 1]
  double tau = 0.5;
  EventStream events;
  Tensor<float> flow;              // 4 x H x W: F_{tau->0} (x, y), F_{tau->1} (x, y)
  std::vector<std::uint8_t> occlusion;  // H x W, 1 = not visible in I0 or not visible in I1
  SceneSpec spec;
};

struct RenderResult {
  Sample sample;
  std::vector<Tensor<float>> frames;  // n_sub grayscale frames (1 x H x W) at t_j = j / (n_sub - 1)
  std::vector<std::string> warnings;
};

namespace detail {

/// Shapes ordered far-to-near for painting, near-to-far for hit tests.
inline std::vector<const ShapeSpec*> near_to_far(const SceneSpec& spec) {
  std::vector<const ShapeSpec*> order;
  for (const auto& s : spec.shapes) order.push_back(&s);
  std::stable_sort(order.begin(), order.end(), [](const ShapeSpec* a, const ShapeSpec* b) { return a->depth < b->depth; });
  return order;
}

/// Index into spec.shapes of the nearest shape covering (px, py) at time t, or -1.
inline int owner_at(const SceneSpec& spec, const std::vector<const ShapeSpec*>& order, double px, double py, double t) {
  for (const ShapeSpec* s : order) {
    if (s->contains(px, py, t)) return static_cast<int>(s - spec.shapes.data());
  }
  return -1;
}

}  // namespace detail

/// Renders the scene at time t with 4 x 4 supersampling. Returns 1 x H x W.
inline Tensor<float> render_frame(const SceneSpec& spec, double t) {
  constexpr int kSub = 4;
  const auto order = detail::near_to_far(spec);
  Tensor<float> out({1, spec.h, spec.w});
  for (int y = 0; y < spec.h; ++y)
    for (int x = 0; x < spec.w; ++x) {
      double acc = 0;
      for (int sy = 0; sy < kSub; ++sy)
        for (int sx = 0; sx < kSub; ++sx) {
          const double px = x + (sx + 0.5) / kSub;
          const double py = y + (sy + 0.5) / kSub;
          const int k = detail::owner_at(spec, order, px, py, t);
          acc += k < 0 ? spec.background : spec.shapes[static_cast<std::size_t>(k)].intensity;
        }
      out.at(0, y, x) = static_cast<float>(acc / (kSub * kSub));
    }
  return out;
}

inline Tensor<float> gray_to_rgb(const Tensor<float>& g) {
  Tensor<float> out({3, g.dim(1), g.dim(2)});
  const std::size_t hw = static_cast<std::size_t>(g.dim(1)) * g.dim(2);
  for (int k = 0; k < 3; ++k) std::copy(g.data(), g.data() + hw, out.data() + k * hw);
  return out;
}

/// Per-pixel contrast-threshold event model on log(I + 1e-4). Log intensity is
/// linear in time between frames; each crossing of the reference level by the
/// threshold emits one event and moves the reference by p * C. Frames are
/// equally spaced over [0, t_end_us]; only channel 0 is used.
inline EventStream simulate_events(const std::vector<Tensor<float>>& frames, const EventSimConfig& cfg) {
  if (frames.size() < 2) throw ParameterError("simulate_events: need at least 2 frames");
  if (!(cfg.contrast_threshold > 0)) throw ParameterError("simulate_events: contrast threshold must be > 0");
  constexpr double kLogEps = 1e-4;
  constexpr double kTol = 1e-9;
  const int h = frames[0].dim(1), w = frames[0].dim(2);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (const auto& f : frames) {
    if (f.rank() != 3 || f.dim(1) != h || f.dim(2) != w) throw ShapeError("simulate_events: frame size mismatch");
  }
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> jitter(0.0, cfg.threshold_sigma > 0 ? cfg.threshold_sigma : 1.0);
  auto threshold = [&]() {
    if (cfg.threshold_sigma <= 0) return cfg.contrast_threshold;
    return std::max(0.01, cfg.contrast_threshold + jitter(rng));
  };

  std::vector<double> ref(hw), prev(hw);
  for (std::size_t i = 0; i < hw; ++i) prev[i] = ref[i] = std::log(frames[0][i] + kLogEps);

  EventStream out;
  out.sensor_h = h;
  out.sensor_w = w;
  out.t_start = 0;
  out.t_end = static_cast<double>(cfg.t_end_us);
  const double dt = 1.0 / static_cast<double>(frames.size() - 1);
  for (std::size_t j = 0; j + 1 < frames.size(); ++j) {
    const double t0 = j * dt;
    for (std::size_t i = 0; i < hw; ++i) {
      const double la = prev[i];
      const double lb = std::log(frames[j + 1][i] + kLogEps);
      prev[i] = lb;
      if (lb == la) continue;
      const int pol = lb > la ? 1 : -1;
      for (;;) {
        const double level = ref[i] + pol * threshold();
        if (pol > 0 ? level > lb + kTol : level < lb - kTol) break;
        const double frac = std::clamp((level - la) / (lb - la), 0.0, 1.0);
        const double t_norm = t0 + frac * dt;
        Event e;
        e.x = static_cast<int>(i % w);
        e.y = static_cast<int>(i / w);
        e.p = pol;
        e.t = std::clamp<std::int64_t>(std::llround(t_norm * cfg.t_end_us), 0, cfg.t_end_us);
        out.events.push_back(e);
        ref[i] = level;
      }
    }
  }
  std::stable_sort(out.events.begin(), out.events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  return out;
}

/// Renders n_sub frames over [0, 1], keyframes, the ground truth at tau,
/// analytic flow/occlusion, and simulates events over the clip.
inline RenderResult render_sequence(const SceneSpec& spec, int n_sub, double tau, const EventSimConfig& sim = {}) {
  if (n_sub < 8) throw ParameterError("render_sequence: n_sub must be >= 8");
  if (!(tau > 0 && tau < 1)) throw ParameterError("render_sequence: tau must lie in (0, 1)");
  if (spec.h <= 0 || spec.w <= 0) throw ShapeError("render_sequence: empty canvas");
  RenderResult r;
  for (int j = 0; j < n_sub; ++j) r.frames.push_back(render_frame(spec, static_cast<double>(j) / (n_sub - 1)));

  for (std::size_t k = 0; k < spec.shapes.size(); ++k) {
    const auto& s = spec.shapes[k];
    bool seen = false;
    for (int j = 0; j < n_sub && !seen; ++j) {
      const auto c = s.traj.at(static_cast<double>(j) / (n_sub - 1));
      const double hh = s.kind == ShapeKind::Disk ? s.half_w : s.half_h;
      seen = c[0] + s.half_w > 0 && c[0] - s.half_w < spec.w && c[1] + hh > 0 && c[1] - hh < spec.h;
    }
    if (!seen) r.warnings.push_back("shape " + std::to_string(k) + " is off-canvas for the entire clip");
  }

  Sample& smp = r.sample;
  smp.spec = spec;
  smp.tau = tau;
  smp.i0 = gray_to_rgb(r.frames.front());
  smp.i1 = gray_to_rgb(r.frames.back());
  smp.igt = gray_to_rgb(render_frame(spec, tau));
  smp.events = simulate_events(r.frames, sim);

  const auto order = detail::near_to_far(spec);
  smp.flow = Tensor<float>({4, spec.h, spec.w});
  smp.occlusion.assign(static_cast<std::size_t>(spec.h) * spec.w, 0);
  for (int y = 0; y < spec.h; ++y)
    for (int x = 0; x < spec.w; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const int k = detail::owner_at(spec, order, px, py, tau);
      std::array<double, 2> f0{0, 0}, f1{0, 0};
      if (k >= 0) {
        const auto& tr = spec.shapes[static_cast<std::size_t>(k)].traj;
        const auto pt = tr.at(tau), p0 = tr.at(0.0), p1 = tr.at(1.0);
        f0 = {p0[0] - pt[0], p0[1] - pt[1]};
        f1 = {p1[0] - pt[0], p1[1] - pt[1]};
      }
      smp.flow.at(0, y, x) = static_cast<float>(f0[0]);
      smp.flow.at(1, y, x) = static_cast<float>(f0[1]);
      smp.flow.at(2, y, x) = static_cast<float>(f1[0]);
      smp.flow.at(3, y, x) = static_cast<float>(f1[1]);
      auto visible = [&](const std::array<double, 2>& f, double t) {
        const double qx = px + f[0], qy = py + f[1];
        if (qx < 0 || qy < 0 || qx >= spec.w || qy >= spec.h) return false;
        return detail::owner_at(spec, order, qx, qy, t) == k;
      };
      const bool vis0 = visible(f0, 0.0), vis1 = visible(f1, 1.0);
      smp.occlusion[static_cast<std::size_t>(y) * spec.w + x] = (vis0 && vis1) ? 0 : 1;
    }
  return r;
}

// ---------------------------------------------------------------------------
// Scene sampling and dataset persistence

/// Distribution over random scenes for dataset generation.
struct SceneDistribution {
  int h = 64;
  int w = 64;
  int min_shapes = 1;
  int max_shapes = 3;
  double min_half_extent = 5;
  double max_half_extent = 12;
  double max_displacement = 8;  // pixels over the clip
  double max_curvature = 2;     // magnitude of the quadratic coefficient, pixels
  bool occluding = false;       // two front shapes cross each other mid-clip
  double tau = 0.5;             // <= 0 draws tau uniformly from [0.25, 0.75]
  int n_sub = 32;
  EventSimConfig sim;
};

inline SceneSpec sample_scene(const SceneDistribution& d, std::uint64_t seed, double* tau_out = nullptr) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * u01(rng); };
  SceneSpec spec;
  spec.h = d.h;
  spec.w = d.w;
  spec.seed = seed;
  spec.background = uni(0.1, 0.9);
  int n = d.min_shapes + static_cast<int>(u01(rng) * (d.max_shapes - d.min_shapes + 1) * 0.999999);
  if (d.occluding) n = std::max(n, 2);
  for (int k = 0; k < n; ++k) {
    ShapeSpec s;
    s.kind = u01(rng) < 0.5 ? ShapeKind::Rectangle : ShapeKind::Disk;
    s.half_w = uni(d.min_half_extent, d.max_half_extent);
    s.half_h = s.kind == ShapeKind::Disk ? s.half_w : uni(d.min_half_extent, d.max_half_extent);
    // Keep a visible contrast against the background.
    do {
      s.intensity = uni(0.05, 0.95);
    } while (std::abs(s.intensity - spec.background) < 0.25);
    const double ang = uni(0, 2 * M_PI);
    const double mag = uni(0.3, 1.0) * d.max_displacement;
    const double cx = uni(0.3 * d.w, 0.7 * d.w), cy = uni(0.3 * d.h, 0.7 * d.h);
    const double ax = uni(-d.max_curvature, d.max_curvature), ay = uni(-d.max_curvature, d.max_curvature);
    const double vx = mag * std::cos(ang) - ax, vy = mag * std::sin(ang) - ay;
    // Centre the path on (cx, cy) at t = 0.5.
    s.traj.x = {cx - 0.5 * vx - 0.25 * ax, vx, ax};
    s.traj.y = {cy - 0.5 * vy - 0.25 * ay, vy, ay};
    s.depth = n - k;  // later shapes are nearer
    spec.shapes.push_back(s);
  }
  if (d.occluding && n >= 2) {
    // Front two shapes swap sides horizontally across the canvas centre.
    auto& back = spec.shapes[static_cast<std::size_t>(n - 2)];
    auto& front = spec.shapes[static_cast<std::size_t>(n - 1)];
    const double cy = uni(0.4 * d.h, 0.6 * d.h);
    const double span = d.max_displacement;
    back.traj.x = {0.5 * d.w - 0.5 * span, span, 0};
    back.traj.y = {cy + uni(-2, 2), 0, 0};
    front.traj.x = {0.5 * d.w + 0.5 * span, -span, 0};
    front.traj.y = {cy + uni(-2, 2), 0, 0};
  }
  const double tau = d.tau > 0 ? d.tau : uni(0.25, 0.75);
  if (tau_out) *tau_out = tau;
  return spec;
}

inline nlohmann::json scene_to_json(const SceneSpec& spec) {
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& s : spec.shapes) {
    shapes.push_back({{"kind", s.kind == ShapeKind::Disk ? "disk" : "rectangle"},
                      {"half_w", s.half_w},
                      {"half_h", s.half_h},
                      {"intensity", s.intensity},
                      {"traj_x", s.traj.x},
                      {"traj_y", s.traj.y},
                      {"depth", s.depth}});
  }
  return {{"h", spec.h}, {"w", spec.w}, {"background", spec.background}, {"seed", spec.seed}, {"shapes", shapes}};
}

inline SceneSpec scene_from_json(const nlohmann::json& j) {
  SceneSpec spec;
  spec.h = j.at("h");
  spec.w = j.at("w");
  spec.background = j.at("background");
  spec.seed = j.at("seed");
  for (const auto& s : j.at("shapes")) {
    ShapeSpec sh;
    sh.kind = s.at("kind") == "disk" ? ShapeKind::Disk : ShapeKind::Rectangle;
    sh.half_w = s.at("half_w");
    sh.half_h = s.at("half_h");
    sh.intensity = s.at("intensity");
    sh.traj.x = s.at("traj_x");
    sh.traj.y = s.at("traj_y");
    sh.depth = s.at("depth");
    spec.shapes.push_back(sh);
  }
  return spec;
}

namespace detail {

inline void write_bytes(const std::string& path, const std::vector<unsigned char>& buf) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("write failed: " + path);
}

inline std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// flow.bin: "FLW1", H u16, W u16, then 4 x H x W float32 little-endian.
inline void write_flow(const std::string& path, const Tensor<float>& flow) {
  if (flow.rank() != 3 || flow.dim(0) != 4) throw ShapeError("write_flow expects 4 x H x W");
  std::vector<unsigned char> buf{'F', 'L', 'W', '1'};
  detail::put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(flow.dim(1)));
  detail::put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(flow.dim(2)));
  for (float v : flow.values()) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    detail::put_le<std::uint32_t>(buf, bits);
  }
  detail::write_bytes(path, buf);
}

inline Tensor<float> read_flow(const std::string& path) {
  const auto buf = detail::read_bytes(path);
  if (buf.size() < 8 || std::memcmp(buf.data(), "FLW1", 4) != 0) throw FormatError(path + ": bad flow header");
  const int h = detail::get_le<std::uint16_t>(buf.data() + 4);
  const int w = detail::get_le<std::uint16_t>(buf.data() + 6);
  Tensor<float> flow({4, h, w});
  if (buf.size() != 8 + flow.size() * 4) throw FormatError(path + ": flow payload size mismatch");
  for (std::size_t i = 0; i < flow.size(); ++i) {
    const auto bits = detail::get_le<std::uint32_t>(buf.data() + 8 + 4 * i);
    std::memcpy(&flow[i], &bits, 4);
  }
  return flow;
}

inline void write_sample_dir(const Sample& s, const std::string& dir, const nlohmann::json& extra = {}) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
  write_png(dir + "/I0.png", s.i0);
  write_png(dir + "/I1.png", s.i1);
  write_png(dir + "/Igt.png", s.igt);
  write_events(s.events, dir + "/events.evt1");
  write_flow(dir + "/flow.bin", s.flow);
  detail::write_bytes(dir + "/occ.bin", std::vector<unsigned char>(s.occlusion.begin(), s.occlusion.end()));
  nlohmann::json meta = {{"version", 1}, {"tau", s.tau}, {"seed", s.spec.seed}, {"spec", scene_to_json(s.spec)}};
  for (auto it = extra.begin(); it != extra.end(); ++it) meta[it.key()] = it.value();
  std::ofstream os(dir + "/meta.json");
  if (!os) throw IoError("cannot write " + dir + "/meta.json");
  os << meta.dump(2) << "\n";
}

/// Loads a persisted sample. A missing Igt.png leaves igt empty.
inline Sample read_sample_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  Sample s;
  std::ifstream is(dir + "/meta.json");
  if (!is) throw IoError("cannot read " + dir + "/meta.json");
  const auto meta = nlohmann::json::parse(is);
  s.tau = meta.at("tau");
  s.spec = scene_from_json(meta.at("spec"));
  s.i0 = read_png(dir + "/I0.png");
  s.i1 = read_png(dir + "/I1.png");
  if (fs::exists(dir + "/Igt.png")) s.igt = read_png(dir + "/Igt.png");
  s.events = read_events(dir + "/events.evt1");
  if (fs::exists(dir + "/flow.bin")) s.flow = read_flow(dir + "/flow.bin");
  if (fs::exists(dir + "/occ.bin")) {
    const auto occ = detail::read_bytes(dir + "/occ.bin");
    s.occlusion.assign(occ.begin(), occ.end());
  }
  return s;
}

inline std::uint64_t sample_seed(std::uint64_t seed, std::size_t index) {
  // splitmix64 of (seed, index)
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Writes n_samples sample directories plus manifest.json under out_dir.
/// Returns the sample directory names.
inline std::vector<std::string> make_dataset(int n_samples, const SceneDistribution& dist, std::uint64_t seed,
                                             const std::string& out_dir, std::vector<std::string>* warnings = nullptr) {
  namespace fs = std::filesystem;
  if (n_samples < 0) throw ParameterError("make_dataset: negative sample count");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + out_dir + ": " + ec.message());
  std::vector<std::string> names;
  for (int i = 0; i < n_samples; ++i) {
    const std::uint64_t s = sample_seed(seed, static_cast<std::size_t>(i));
    double tau = 0.5;
    const SceneSpec spec = sample_scene(dist, s, &tau);
    EventSimConfig sim = dist.sim;
    sim.seed = s;
    auto r = render_sequence(spec, dist.n_sub, tau, sim);
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%04d", i);
    write_sample_dir(r.sample, out_dir + "/" + name,
                     {{"n_sub", dist.n_sub}, {"contrast_threshold", sim.contrast_threshold}, {"t_end_us", sim.t_end_us}});
    if (warnings) {
      for (auto& w : r.warnings) warnings->push_back(std::string(name) + ": " + w);
    }
    names.emplace_back(name);
  }
  nlohmann::json manifest = {{"version", 1}, {"seed", seed}, {"samples", names}};
  std::ofstream os(out_dir + "/manifest.json");
  if (!os) throw IoError("cannot write " + out_dir + "/manifest.json");
  os << manifest.dump(2) << "\n";
  return names;
}

inline std::vector<std::string> read_manifest(const std::string& dataset_dir) {
  std::ifstream is(dataset_dir + "/manifest.json");
  if (!is) throw IoError("cannot read manifest in " + dataset_dir);
  const auto j = nlohmann::json::parse(is);
  return j.at("samples").get<std::vector<std::string>>();
}

}  // namespace egmr
