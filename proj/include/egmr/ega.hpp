#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <string>

#include "egmr/flow_nets.hpp"

namespace egmr {

inline constexpr double kMaskedLogit = -100.0;

/// (Gh Gw) x (Gh Gw) additive attention mask over a row-major patch grid: 0
/// where the key patch lies in the m x m neighbourhood of the query patch
/// (Chebyshev distance <= (m - 1) / 2), -100 elsewhere.
template <class T = double>
Tensor<T> build_local_mask(int gh, int gw, int m) {
  if (m < 1 || m % 2 == 0) throw ParameterError("build_local_mask: m must be odd and >= 1, got " + std::to_string(m));
  if (gh < 1 || gw < 1) throw ShapeError("build_local_mask: empty patch grid");
  const int n = gh * gw;
  const int r = (m - 1) / 2;
  Tensor<T> mask({n, n}, static_cast<T>(kMaskedLogit));
  for (int q = 0; q < n; ++q)
    for (int k = 0; k < n; ++k) {
      const int dy = std::abs(q / gw - k / gw), dx = std::abs(q % gw - k % gw);
      if (std::max(dx, dy) <= r) mask[static_cast<std::size_t>(q) * n + k] = T(0);
    }
  return mask;
}

/// Cross-modal local attention. Event-flow patches give the queries and the
/// residual V_e; frame-flow patches give keys and values. The attended frame
/// values are added to the event flow (F^e_suppl) and the projected V_e to the
/// frame flow (F^s_smooth). The input event flow itself is never modified.
template <class T>
class CrossModalLocalAttention {
 public:
  struct Output {
    ad::Var<T> fe_suppl;   // 4 x H x W
    ad::Var<T> fs_smooth;  // 4 x H x W
    ad::Var<T> attention;  // N x N row-stochastic weights
    ad::Var<T> v_rect;     // N x d attended frame values
    int grid_h = 0, grid_w = 0;
  };

  CrossModalLocalAttention() = default;
  CrossModalLocalAttention(ParamStore<T>& ps, std::mt19937_64& rng, const ModelConfig& cfg, const std::string& name)
      : patch_(cfg.patch), dim_(cfg.embed_dim), mask_size_(cfg.mask_size) {
    const int token = 4 * patch_ * patch_;
    q_e_ = Dense<T>(ps, rng, name + ".q_e", token, dim_);
    v_e_ = Dense<T>(ps, rng, name + ".v_e", token, dim_);
    k_f_ = Dense<T>(ps, rng, name + ".k_f", token, dim_);
    v_f_ = Dense<T>(ps, rng, name + ".v_f", token, dim_);
    // Zero output projections: the module starts as an identity on both flows.
    out_f_ = Dense<T>(ps, rng, name + ".out_f", dim_, token, 0.0);
    out_e_ = Dense<T>(ps, rng, name + ".out_e", dim_, token, 0.0);
  }

  int mask_size() const { return mask_size_; }

  Output operator()(ad::Var<T> fe, ad::Var<T> fs) const {
    if (fe.shape() != fs.shape()) {
      throw ShapeError("cla: event flow " + shape_str(fe.shape()) + " vs frame flow " + shape_str(fs.shape()));
    }
    if (fe.value().rank() != 3 || fe.dim(0) != 4) throw ShapeError("cla: flows must be 4 x H x W");
    const int h = fe.dim(1), w = fe.dim(2);
    const int hp = (h + patch_ - 1) / patch_ * patch_, wp = (w + patch_ - 1) / patch_ * patch_;
    const int gh = hp / patch_, gw = wp / patch_;
    auto te = ad::patchify(ad::reflect_pad(fe, hp, wp), patch_);
    auto tf = ad::patchify(ad::reflect_pad(fs, hp, wp), patch_);
    auto q = q_e_(te);
    auto ve = v_e_(te);
    auto k = k_f_(tf);
    auto vf = v_f_(tf);
    const Tensor<T> mask = build_local_mask<T>(gh, gw, mask_size_);
    auto attn = ad::masked_softmax_rows(ad::matmul(q, k, true), mask, T(1) / std::sqrt(static_cast<T>(dim_)));
    auto v_rect = ad::matmul(attn, vf);
    auto res_f = ad::crop(ad::unpatchify(out_f_(v_rect), 4, hp, wp, patch_), h, w);
    auto res_e = ad::crop(ad::unpatchify(out_e_(ve), 4, hp, wp, patch_), h, w);
    return {ad::add(fe, res_f), ad::add(fs, res_e), attn, v_rect, gh, gw};
  }

 private:
  int patch_ = 16;
  int dim_ = 64;
  int mask_size_ = 3;
  Dense<T> q_e_, v_e_, k_f_, v_f_, out_f_, out_e_;
};

/// Cross-OF attention: local conv fusion, squeeze-and-excitation channel
/// re-weighting, conv aggregation to a flow pair. The aggregation conv is
/// zero-initialized and added onto the smoothed frame flow.
template <class T>
class CrossFlowAttention {
 public:
  struct Output {
    ad::Var<T> flow;             // 4 x H x W
    ad::Var<T> channel_weights;  // C, each in (0, 1)
  };

  CrossFlowAttention() = default;
  CrossFlowAttention(ParamStore<T>& ps, std::mt19937_64& rng, const ModelConfig& cfg, const std::string& name)
      : width_(cfg.coa_width) {
    fuse_ = Conv<T>(ps, rng, name + ".fuse", 8, width_);
    squeeze_ = Dense<T>(ps, rng, name + ".se_reduce", width_, width_ / 4);
    excite_ = Dense<T>(ps, rng, name + ".se_expand", width_ / 4, width_);
    out_ = Conv<T>(ps, rng, name + ".out", width_, 4, 3, 1, 0.0);
  }

  Output operator()(ad::Var<T> fe_suppl, ad::Var<T> fs_smooth) const {
    if (fe_suppl.shape() != fs_smooth.shape()) {
      throw ShapeError("coa: input shapes differ " + shape_str(fe_suppl.shape()) + " vs " + shape_str(fs_smooth.shape()));
    }
    auto x = lrelu(fuse_(ad::concat_channels<T>({fe_suppl, fs_smooth})));
    auto pooled = ad::reshape(ad::global_avg_pool(x), {1, width_});
    auto wts = ad::reshape(ad::sigmoid(excite_(lrelu(squeeze_(pooled)))), {width_});
    return {ad::add(fs_smooth, out_(ad::scale_channels(x, wts))), wts};
  }

 private:
  int width_ = 16;
  Conv<T> fuse_, out_;
  Dense<T> squeeze_, excite_;
};

/// Per-scale flow fusion: CLA followed by COA, or (ablation baseline) a
/// single zero-initialized convolution over the concatenated flows added to
/// the frame flow.
template <class T>
class EgaStage {
 public:
  struct Output {
    ad::Var<T> flow;  // refined flow pair at the stage resolution
    std::optional<typename CrossModalLocalAttention<T>::Output> cla;
    std::optional<typename CrossFlowAttention<T>::Output> coa;
  };

  EgaStage() = default;
  EgaStage(ParamStore<T>& ps, std::mt19937_64& rng, const ModelConfig& cfg, int scale) : use_ega_(cfg.use_ega) {
    const std::string name = "ega" + std::to_string(scale);
    if (use_ega_) {
      cla_ = CrossModalLocalAttention<T>(ps, rng, cfg, name + ".cla");
      coa_ = CrossFlowAttention<T>(ps, rng, cfg, name + ".coa");
    } else {
      concat_conv_ = Conv<T>(ps, rng, "fuse" + std::to_string(scale) + ".conv", 8, 4, 3, 1, 0.0);
    }
  }

  const CrossModalLocalAttention<T>& cla() const { return cla_; }
  const CrossFlowAttention<T>& coa() const { return coa_; }

  Output operator()(ad::Var<T> fe, ad::Var<T> fs) const {
    if (fe.shape() != fs.shape()) throw ShapeError("ega: flow shapes differ");
    Output out;
    if (use_ega_) {
      out.cla = cla_(fe, fs);
      out.coa = coa_(out.cla->fe_suppl, out.cla->fs_smooth);
      out.flow = out.coa->flow;
    } else {
      out.flow = ad::add(fs, concat_conv_(ad::concat_channels<T>({fe, fs})));
    }
    return out;
  }

 private:
  bool use_ega_ = true;
  CrossModalLocalAttention<T> cla_;
  CrossFlowAttention<T> coa_;
  Conv<T> concat_conv_;
};

}  // namespace egmr
