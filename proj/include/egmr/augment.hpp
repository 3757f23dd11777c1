#pragma once

#include <algorithm>
#include <vector>

#include "egmr/synth_scene.hpp"

namespace egmr {

// Geometric transforms applied identically to frames, flows, occlusion and
// events. Flow vectors are rotated/mirrored with the image.

namespace detail {

/// Remaps a C x H x W tensor through dst(y', x') = src(map(y', x')).
template <class F>
Tensor<float> remap(const Tensor<float>& src, int ho, int wo, F src_of) {
  const int c = src.dim(0);
  Tensor<float> out({c, ho, wo});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x) {
        const auto [sy, sx] = src_of(y, x);
        out.at(ch, y, x) = src.at(ch, sy, sx);
      }
  return out;
}

template <class F>
std::vector<std::uint8_t> remap_mask(const std::vector<std::uint8_t>& m, int w, int ho, int wo, F src_of) {
  if (m.empty()) return {};
  std::vector<std::uint8_t> out(static_cast<std::size_t>(ho) * wo);
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < wo; ++x) {
      const auto [sy, sx] = src_of(y, x);
      out[static_cast<std::size_t>(y) * wo + x] = m[static_cast<std::size_t>(sy) * w + sx];
    }
  return out;
}

inline void require_frames(const Sample& s) {
  if (s.i0.rank() != 3) throw ShapeError("augment: sample has no keyframes");
}

}  // namespace detail

/// Mirror across the vertical axis: x -> W - 1 - x, flow x negated.
inline Sample flip_horizontal(const Sample& s) {
  detail::require_frames(s);
  const int h = s.i0.dim(1), w = s.i0.dim(2);
  auto src = [w](int y, int x) { return std::pair{y, w - 1 - x}; };
  Sample o = s;
  o.i0 = detail::remap(s.i0, h, w, src);
  o.i1 = detail::remap(s.i1, h, w, src);
  if (s.igt.rank() == 3) o.igt = detail::remap(s.igt, h, w, src);
  if (s.flow.rank() == 3) {
    o.flow = detail::remap(s.flow, h, w, src);
    for (int c : {0, 2})
      for (int i = 0; i < h * w; ++i) o.flow[static_cast<std::size_t>(c) * h * w + i] *= -1.0f;
  }
  o.occlusion = detail::remap_mask(s.occlusion, w, h, w, src);
  for (auto& e : o.events.events) e.x = w - 1 - e.x;
  return o;
}

/// Mirror across the horizontal axis: y -> H - 1 - y, flow y negated.
inline Sample flip_vertical(const Sample& s) {
  detail::require_frames(s);
  const int h = s.i0.dim(1), w = s.i0.dim(2);
  auto src = [h](int y, int x) { return std::pair{h - 1 - y, x}; };
  Sample o = s;
  o.i0 = detail::remap(s.i0, h, w, src);
  o.i1 = detail::remap(s.i1, h, w, src);
  if (s.igt.rank() == 3) o.igt = detail::remap(s.igt, h, w, src);
  if (s.flow.rank() == 3) {
    o.flow = detail::remap(s.flow, h, w, src);
    for (int c : {1, 3})
      for (int i = 0; i < h * w; ++i) o.flow[static_cast<std::size_t>(c) * h * w + i] *= -1.0f;
  }
  o.occlusion = detail::remap_mask(s.occlusion, w, h, w, src);
  for (auto& e : o.events.events) e.y = h - 1 - e.y;
  return o;
}

/// Quarter turn counter-clockwise: (x, y) -> (y, W - 1 - x), flow (u, v) -> (v, -u).
inline Sample rotate90(const Sample& s) {
  detail::require_frames(s);
  const int h = s.i0.dim(1), w = s.i0.dim(2);
  const int ho = w, wo = h;
  auto src = [w](int y, int x) { return std::pair{x, w - 1 - y}; };
  Sample o = s;
  o.i0 = detail::remap(s.i0, ho, wo, src);
  o.i1 = detail::remap(s.i1, ho, wo, src);
  if (s.igt.rank() == 3) o.igt = detail::remap(s.igt, ho, wo, src);
  if (s.flow.rank() == 3) {
    const auto f = detail::remap(s.flow, ho, wo, src);
    o.flow = Tensor<float>(f.shape());
    const std::size_t n = static_cast<std::size_t>(ho) * wo;
    for (int pair = 0; pair < 2; ++pair)
      for (std::size_t i = 0; i < n; ++i) {
        o.flow[(2 * pair) * n + i] = f[(2 * pair + 1) * n + i];
        o.flow[(2 * pair + 1) * n + i] = -f[(2 * pair) * n + i];
      }
  }
  o.occlusion = detail::remap_mask(s.occlusion, w, ho, wo, src);
  for (auto& e : o.events.events) e = Event{e.y, w - 1 - e.x, e.p, e.t};
  o.events.sensor_h = ho;
  o.events.sensor_w = wo;
  return o;
}

/// Spatial crop. Events outside the crop are dropped; the time window is kept.
inline Sample crop_sample(const Sample& s, int y0, int x0, int h, int w) {
  detail::require_frames(s);
  const int H = s.i0.dim(1), W = s.i0.dim(2);
  if (y0 < 0 || x0 < 0 || h <= 0 || w <= 0 || y0 + h > H || x0 + w > W) {
    throw ParameterError("crop_sample: window outside the frame");
  }
  auto src = [y0, x0](int y, int x) { return std::pair{y + y0, x + x0}; };
  Sample o = s;
  o.i0 = detail::remap(s.i0, h, w, src);
  o.i1 = detail::remap(s.i1, h, w, src);
  if (s.igt.rank() == 3) o.igt = detail::remap(s.igt, h, w, src);
  if (s.flow.rank() == 3) o.flow = detail::remap(s.flow, h, w, src);
  o.occlusion = detail::remap_mask(s.occlusion, W, h, w, src);
  o.events.events.clear();
  for (const auto& e : s.events.events) {
    if (e.x >= x0 && e.x < x0 + w && e.y >= y0 && e.y < y0 + h) o.events.events.push_back({e.x - x0, e.y - y0, e.p, e.t});
  }
  o.events.sensor_h = h;
  o.events.sensor_w = w;
  return o;
}

}  // namespace egmr
