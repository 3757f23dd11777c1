#pragma once

#include <cmath>
#include <random>
#include <string>

#include "egmr/config.hpp"
#include "egmr/params.hpp"

namespace egmr {

/// Backward-warped keyframe. Validity is the summed bilinear weight of the
/// in-bounds taps: 1 inside the image, 0 fully outside, fractional at borders.
template <class T>
struct WarpedFrame {
  ad::Var<T> image;     // C x H x W
  ad::Var<T> validity;  // 1 x H x W, fraction of the bilinear footprint inside the frame
};

template <class T>
Tensor<T> warp_validity(const Tensor<T>& flow) {
  if (flow.rank() != 3 || flow.dim(0) != 2) throw ShapeError("warp_validity expects a 2 x H x W flow");
  const int h = flow.dim(1), w = flow.dim(2);
  Tensor<T> v({1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const T sx = T(x) + flow.at(0, y, x), sy = T(y) + flow.at(1, y, x);
      const T fx0 = std::floor(sx), fy0 = std::floor(sy);
      const T ax = sx - fx0, ay = sy - fy0;
      if (!(fx0 > T(-2) && fx0 < T(w) && fy0 > T(-2) && fy0 < T(h))) continue;
      const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
      const T wx = (x0 >= 0 ? T(1) - ax : T(0)) + (x0 + 1 < w ? ax : T(0));
      const T wy = (y0 >= 0 ? T(1) - ay : T(0)) + (y0 + 1 < h ? ay : T(0));
      v.at(0, y, x) = wx * wy;
    }
  return v;
}

/// Validity is the warp of an all-ones plane, which equals warp_validity and
/// keeps its dependence on the flow differentiable.
template <class T>
WarpedFrame<T> warp_frame(ad::Var<T> image, ad::Var<T> flow) {
  auto out = ad::backward_warp(image, flow);
  const auto& s = image.shape();
  if (s.size() != 3) throw ShapeError("warp_frame: image must be C x H x W, got " + shape_str(s));
  auto ones = image.tape().constant(Tensor<T>({1, s[1], s[2]}, T(1)));
  return {out, ad::backward_warp(ones, flow)};
}

/// M * warp(I0) + (1 - M) * warp(I1) with M in [0, 1].
template <class T>
ad::Var<T> fuse_image_visibility(const WarpedFrame<T>& from0, const WarpedFrame<T>& from1, ad::Var<T> m) {
  if (from0.image.shape() != from1.image.shape()) throw ShapeError("fuse_image_visibility: warped frames differ in shape");
  for (T v : m.value().values()) {
    if (!(v >= T(0) && v <= T(1))) throw ContractError("fuse_image_visibility: visibility outside [0, 1]");
  }
  return ad::add(ad::mul_map(from0.image, m), ad::mul_map(from1.image, ad::one_minus(m)));
}

/// m0 * warp(I0) + m1 * warp(I1) for a 2 x H x W pair with m0 + m1 = 1.
template <class T>
ad::Var<T> fuse_event_visibility(const WarpedFrame<T>& from0, const WarpedFrame<T>& from1, ad::Var<T> pair) {
  if (from0.image.shape() != from1.image.shape()) throw ShapeError("fuse_event_visibility: warped frames differ in shape");
  const auto& pv = pair.value();
  if (pv.rank() != 3 || pv.dim(0) != 2) throw ShapeError("fuse_event_visibility: visibility pair must be 2 x H x W");
  const std::size_t hw = static_cast<std::size_t>(pv.dim(1)) * pv.dim(2);
  for (std::size_t i = 0; i < hw; ++i) {
    if (!(std::abs(pv[i] + pv[hw + i] - T(1)) <= T(1e-4))) {
      throw ContractError("fuse_event_visibility: pair does not sum to 1 at pixel " + std::to_string(i));
    }
  }
  return ad::add(ad::mul_map(from0.image, ad::slice_channels(pair, 0, 1)),
                 ad::mul_map(from1.image, ad::slice_channels(pair, 1, 2)));
}

/// Convolutional cross-space attention: pixelwise fusion weights (W0, W1)
/// for the image-visibility and event-visibility interpolations.
template <class T>
class CrossSpaceAttention {
 public:
  CrossSpaceAttention() = default;
  CrossSpaceAttention(ParamStore<T>& ps, std::mt19937_64& rng, const ModelConfig& cfg, const std::string& name = "c2sa") {
    const int c = cfg.c2sa_width;
    q_img_ = Conv<T>(ps, rng, name + ".q_img", 3, c);
    k_img_ = Conv<T>(ps, rng, name + ".k_img", 3, c);
    q_evt_ = Conv<T>(ps, rng, name + ".q_evt", 3, c);
    k_evt_ = Conv<T>(ps, rng, name + ".k_evt", 3, c);
    mix0_ = Conv<T>(ps, rng, name + ".mix0", 2 * c, 1);
    mix1_ = Conv<T>(ps, rng, name + ".mix1", 2 * c, 1);
  }

  /// Returns 2 x H x W: channel 0 weights the image-visibility frame.
  ad::Var<T> operator()(ad::Var<T> from_image, ad::Var<T> from_events) const {
    if (from_image.shape() != from_events.shape() || from_image.value().rank() != 3 || from_image.dim(0) != 3) {
      throw ShapeError("c2sa: inputs must both be 3 x H x W, got " + shape_str(from_image.shape()) + " and " +
                       shape_str(from_events.shape()));
    }
    auto qf = lrelu(q_img_(from_image)), kf = lrelu(k_img_(from_image));
    auto qe = lrelu(q_evt_(from_events)), ke = lrelu(k_evt_(from_events));
    auto l0 = mix0_(ad::concat_channels<T>({qe, kf}));
    auto l1 = mix1_(ad::concat_channels<T>({qf, ke}));
    return ad::softmax_pair(ad::concat_channels<T>({l0, l1}));
  }

 private:
  Conv<T> q_img_, k_img_, q_evt_, k_evt_, mix0_, mix1_;
};

/// Inputs the refinement net sees, all at full resolution.
template <class T>
struct RefineInputs {
  ad::Var<T> i0, i1;
  WarpedFrame<T> warped0, warped1;
  ad::Var<T> flow;              // 4 x H x W
  ad::Var<T> image_visibility;  // 1 x H x W
  ad::Var<T> event_visibility;  // 2 x H x W
};

inline constexpr int kRefineChannels = 3 + 3 + 3 + 3 + 4 + 1 + 2 + 1 + 1;

/// Two-level U-Net predicting a bounded residual image.
template <class T>
class RefineNet {
 public:
  RefineNet() = default;
  RefineNet(ParamStore<T>& ps, std::mt19937_64& rng, const ModelConfig& cfg, const std::string& name = "refine") {
    const int c = cfg.refine_base;
    enc0a_ = Conv<T>(ps, rng, name + ".enc0a", kRefineChannels, c);
    enc0b_ = Conv<T>(ps, rng, name + ".enc0b", c, c);
    enc1a_ = Conv<T>(ps, rng, name + ".enc1a", c, 2 * c, 3, 2);
    enc1b_ = Conv<T>(ps, rng, name + ".enc1b", 2 * c, 2 * c);
    enc2a_ = Conv<T>(ps, rng, name + ".enc2a", 2 * c, 4 * c, 3, 2);
    enc2b_ = Conv<T>(ps, rng, name + ".enc2b", 4 * c, 4 * c);
    dec1_ = Conv<T>(ps, rng, name + ".dec1", 4 * c + 2 * c, 2 * c);
    dec0_ = Conv<T>(ps, rng, name + ".dec0", 2 * c + c, c);
    head_ = Conv<T>(ps, rng, name + ".head", c, 3, 3, 1, 0.0);
  }

  ad::Var<T> operator()(const RefineInputs<T>& in) const {
    const auto& s = in.i0.shape();
    if (s.size() != 3 || s[0] != 3) throw ShapeError("refine: keyframes must be 3 x H x W");
    const int h = s[1], w = s[2];
    if (h % 4 || w % 4) throw ShapeError("refine: H and W must be divisible by 4");
    auto check = [&](ad::Var<T> v, int c, const char* what) {
      if (v.shape() != std::vector<int>{c, h, w}) {
        throw ShapeError(std::string("refine: ") + what + " has shape " + shape_str(v.shape()));
      }
    };
    check(in.i1, 3, "I1");
    check(in.warped0.image, 3, "warped I0");
    check(in.warped1.image, 3, "warped I1");
    check(in.warped0.validity, 1, "validity 0");
    check(in.warped1.validity, 1, "validity 1");
    check(in.flow, 4, "flow");
    check(in.image_visibility, 1, "image visibility");
    check(in.event_visibility, 2, "event visibility");
    auto x = ad::concat_channels<T>({in.i0, in.i1, in.warped0.image, in.warped1.image, in.flow, in.image_visibility,
                                     in.event_visibility, in.warped0.validity, in.warped1.validity});
    auto s0 = lrelu(enc0b_(lrelu(enc0a_(x))));
    auto s1 = lrelu(enc1b_(lrelu(enc1a_(s0))));
    auto s2 = lrelu(enc2b_(lrelu(enc2a_(s1))));
    auto u1 = lrelu(dec1_(ad::concat_channels<T>({ad::resize_bilinear(s2, h / 2, w / 2), s1})));
    auto u0 = lrelu(dec0_(ad::concat_channels<T>({ad::resize_bilinear(u1, h, w), s0})));
    return ad::tanh(head_(u0));
  }

 private:
  Conv<T> enc0a_, enc0b_, enc1a_, enc1b_, enc2a_, enc2b_, dec1_, dec0_, head_;
};

/// W0 * I^F + W1 * I^E + residual. Not clamped.
template <class T>
ad::Var<T> synthesize(ad::Var<T> from_image, ad::Var<T> from_events, ad::Var<T> weights, ad::Var<T> residual) {
  if (from_image.shape() != from_events.shape() || from_image.shape() != residual.shape()) {
    throw ShapeError("synthesize: image shapes differ");
  }
  const auto& s = from_image.shape();
  if (weights.shape() != std::vector<int>{2, s[1], s[2]}) throw ShapeError("synthesize: weights must be 2 x H x W");
  auto fused = ad::add(ad::mul_map(from_image, ad::slice_channels(weights, 0, 1)),
                       ad::mul_map(from_events, ad::slice_channels(weights, 1, 2)));
  return ad::add(fused, residual);
}

}  // namespace egmr
