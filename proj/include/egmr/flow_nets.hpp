#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "egmr/config.hpp"
#include "egmr/params.hpp"

namespace egmr {

// A FlowPair is carried as one 4 x H x W tensor: channels 0-1 hold
// F_{tau->0} (x, y), channels 2-3 hold F_{tau->1} (x, y), in pixels of the
// tensor's own resolution.

/// Bilinear resample of a flow field with displacements rescaled to the
/// target resolution.
template <class T>
ad::Var<T> resample_flow(ad::Var<T> flow, int h, int w) {
  if (flow.value().rank() != 3 || flow.dim(0) % 2 != 0) throw ShapeError("resample_flow expects 2k x H x W");
  if (h == flow.dim(1) && w == flow.dim(2)) return flow;
  if (static_cast<long>(h) * flow.dim(2) != static_cast<long>(w) * flow.dim(1)) {
    throw ParameterError("resample_flow: aspect ratio mismatch " + shape_str(flow.shape()) + " -> " +
                         std::to_string(h) + "x" + std::to_string(w));
  }
  return ad::scale(ad::resize_bilinear(flow, h, w), static_cast<T>(w) / static_cast<T>(flow.dim(2)));
}

/// Downsamples the event flow to a coarser EGA scale.
template <class T>
ad::Var<T> resample_event_flow(ad::Var<T> flow, int h, int w) {
  if (h > flow.dim(1) || w > flow.dim(2)) throw ParameterError("resample_event_flow: target larger than source");
  return resample_flow(flow, h, w);
}

template <class T>
Tensor<T> constant_plane(int h, int w, T v) {
  return Tensor<T>({1, h, w}, v);
}

// ---------------------------------------------------------------------------

/// U-Net over the two concatenated voxel grids. Emits the event flow pair and
/// a softmax-normalized event visibility pair at input resolution.
template <class T>
class EventFlowNet {
 public:
  struct Output {
    ad::Var<T> flow;        // 4 x H x W
    ad::Var<T> visibility;  // 2 x H x W, pixelwise sum 1
  };

  EventFlowNet() = default;
  EventFlowNet(ParamStore<T>& ps, std::mt19937_64& rng, const ModelConfig& cfg, const std::string& name = "event_flow") {
    const int c = cfg.event_base;
    const int in = 2 * cfg.bins;
    enc0a_ = Conv<T>(ps, rng, name + ".enc0a", in, c);
    enc0b_ = Conv<T>(ps, rng, name + ".enc0b", c, c);
    enc1a_ = Conv<T>(ps, rng, name + ".enc1a", c, 2 * c, 3, 2);
    enc1b_ = Conv<T>(ps, rng, name + ".enc1b", 2 * c, 2 * c);
    enc2a_ = Conv<T>(ps, rng, name + ".enc2a", 2 * c, 4 * c, 3, 2);
    enc2b_ = Conv<T>(ps, rng, name + ".enc2b", 4 * c, 4 * c);
    enc3a_ = Conv<T>(ps, rng, name + ".enc3a", 4 * c, 8 * c, 3, 2);
    enc3b_ = Conv<T>(ps, rng, name + ".enc3b", 8 * c, 8 * c);
    dec2_ = Conv<T>(ps, rng, name + ".dec2", 8 * c + 4 * c, 4 * c);
    dec1_ = Conv<T>(ps, rng, name + ".dec1", 4 * c + 2 * c, 2 * c);
    dec0_ = Conv<T>(ps, rng, name + ".dec0", 2 * c + c, c);
    head_ = Conv<T>(ps, rng, name + ".head", c, 6, 3, 1, 0.1);
  }

  Output operator()(ad::Var<T> grid_before, ad::Var<T> grid_after) const {
    if (grid_before.shape() != grid_after.shape() || grid_before.value().rank() != 3) {
      throw ShapeError("event flow net: voxel grids differ " + shape_str(grid_before.shape()) + " vs " +
                       shape_str(grid_after.shape()));
    }
    const int h = grid_before.dim(1), w = grid_before.dim(2);
    if (h % 8 || w % 8) throw ShapeError("event flow net: H and W must be divisible by 8, got " + shape_str(grid_before.shape()));
    if (!grid_before.value().all_finite() || !grid_after.value().all_finite()) {
      throw InputError("event flow net: non-finite voxel grid");
    }
    auto x = ad::concat_channels<T>({grid_before, grid_after});
    auto s0 = lrelu(enc0b_(lrelu(enc0a_(x))));
    auto s1 = lrelu(enc1b_(lrelu(enc1a_(s0))));
    auto s2 = lrelu(enc2b_(lrelu(enc2a_(s1))));
    auto s3 = lrelu(enc3b_(lrelu(enc3a_(s2))));
    auto u2 = lrelu(dec2_(ad::concat_channels<T>({ad::resize_bilinear(s3, h / 4, w / 4), s2})));
    auto u1 = lrelu(dec1_(ad::concat_channels<T>({ad::resize_bilinear(u2, h / 2, w / 2), s1})));
    auto u0 = lrelu(dec0_(ad::concat_channels<T>({ad::resize_bilinear(u1, h, w), s0})));
    auto out = head_(u0);
    return {ad::slice_channels(out, 0, 4), ad::softmax_pair(ad::slice_channels(out, 4, 6))};
  }

 private:
  Conv<T> enc0a_, enc0b_, enc1a_, enc1b_, enc2a_, enc2b_, enc3a_, enc3b_, dec2_, dec1_, dec0_, head_;
};

/// One coarse-to-fine frame-flow stage. Works at 1/K resolution and returns a
/// full-resolution flow pair plus a visibility logit.
template <class T>
class IFBlock {
 public:
  struct Output {
    ad::Var<T> flow;   // 4 x H x W, warm flow + update
    ad::Var<T> logit;  // 1 x H x W, sigmoid gives the image visibility map
  };

  IFBlock() = default;
  IFBlock(ParamStore<T>& ps, std::mt19937_64& rng, const ModelConfig& cfg, int scale)
      : scale_(scale), factor_(cfg.if_factor.at(static_cast<std::size_t>(scale))) {
    const std::string name = "ifblock" + std::to_string(scale);
    const int c = cfg.if_width.at(static_cast<std::size_t>(scale));
    in0_ = Conv<T>(ps, rng, name + ".in0", 17, c);
    in1_ = Conv<T>(ps, rng, name + ".in1", c, c);
    for (int i = 0; i < cfg.if_res_convs; ++i) res_.emplace_back(ps, rng, name + ".res" + std::to_string(i), c, c);
    head_ = Conv<T>(ps, rng, name + ".head", c, 5, 3, 1, 0.1);
  }

  int factor() const { return factor_; }

  /// warm: previous refined flow (4 x H x W) or invalid Var for none (zero flow).
  Output operator()(ad::Var<T> i0, ad::Var<T> i1, double tau, ad::Var<T> warm) const {
    if (i0.shape() != i1.shape() || i0.value().rank() != 3 || i0.dim(0) != 3) {
      throw ShapeError("ifblock: keyframes must both be 3 x H x W");
    }
    const int h = i0.dim(1), w = i0.dim(2);
    if (h % 4 || w % 4) throw ShapeError("ifblock: H and W must be divisible by 4, got " + shape_str(i0.shape()));
    auto& tape = i0.tape();
    if (!warm.valid()) warm = tape.constant(Tensor<T>({4, h, w}));
    if (warm.shape() != std::vector<int>{4, h, w}) throw ShapeError("ifblock: warm flow shape " + shape_str(warm.shape()));
    const int k = factor_;
    auto w0 = ad::backward_warp(i0, ad::slice_channels(warm, 0, 2));
    auto w1 = ad::backward_warp(i1, ad::slice_channels(warm, 2, 4));
    auto imgs = ad::avg_pool(ad::concat_channels<T>({i0, i1, w0, w1}), k);
    auto flow_lo = ad::scale(ad::avg_pool(warm, k), T(1) / T(k));
    auto tau_plane = tape.constant(constant_plane<T>(h / k, w / k, static_cast<T>(tau)));
    auto x = ad::concat_channels<T>({imgs, flow_lo, tau_plane});
    auto feat = lrelu(in1_(lrelu(in0_(x))));
    auto y = feat;
    for (const auto& conv : res_) y = lrelu(conv(y));
    if (!res_.empty()) feat = ad::add(feat, y);
    auto out = ad::resize_bilinear(head_(feat), h, w);
    auto update = ad::scale(ad::slice_channels(out, 0, 4), static_cast<T>(k));
    return {ad::add(warm, update), ad::slice_channels(out, 4, 5)};
  }

 private:
  int scale_ = 0;
  int factor_ = 1;
  Conv<T> in0_, in1_, head_;
  std::vector<Conv<T>> res_;
};

/// Validates the scale index and runs the matching block of a cascade.
template <class T>
typename IFBlock<T>::Output ifblock_forward(const std::vector<IFBlock<T>>& blocks, int scale, ad::Var<T> i0,
                                            ad::Var<T> i1, double tau, ad::Var<T> warm) {
  if (scale < 0 || scale >= static_cast<int>(blocks.size())) {
    throw ParameterError("ifblock: scale must be in {0, 1, 2}, got " + std::to_string(scale));
  }
  if (scale > 0 && !warm.valid()) throw ParameterError("ifblock: warm flow required for scale > 0");
  return blocks[static_cast<std::size_t>(scale)](i0, i1, tau, warm);
}

}  // namespace egmr
