#pragma once

#include <cmath>
#include <random>
#include <string>

#include "egmr/warp_refine.hpp"

namespace egmr {

inline constexpr double kPixelScale = 255.0;

struct LossWeights {
  double event_recon = 1.0;
  double recon = 1.0;
  double perceptual = 0.1;
};

template <class T>
struct LossComponents {
  ad::Var<T> event_recon;
  ad::Var<T> recon;
  ad::Var<T> perceptual;
};

/// Frame predicted from the event branch alone: keyframes warped by the event
/// flow and blended with the event visibility pair.
template <class T>
ad::Var<T> event_branch_frame(ad::Var<T> i0, ad::Var<T> i1, ad::Var<T> event_flow, ad::Var<T> event_visibility) {
  if (i0.shape() != i1.shape()) throw ShapeError("event_recon_loss: keyframe shapes differ");
  const auto& s = i0.shape();
  if (event_flow.shape() != std::vector<int>{4, s[1], s[2]}) {
    throw ShapeError("event_recon_loss: event flow " + shape_str(event_flow.shape()) + " vs frames " + shape_str(s));
  }
  auto w0 = warp_frame(i0, ad::slice_channels(event_flow, 0, 2));
  auto w1 = warp_frame(i1, ad::slice_channels(event_flow, 2, 4));
  return fuse_event_visibility(w0, w1, event_visibility);
}

/// Mean absolute error on the 0-255 scale between I_gt and the event-branch frame.
template <class T>
ad::Var<T> event_recon_loss(ad::Var<T> igt, ad::Var<T> i0, ad::Var<T> i1, ad::Var<T> event_flow,
                            ad::Var<T> event_visibility) {
  auto pred = event_branch_frame(i0, i1, event_flow, event_visibility);
  if (pred.shape() != igt.shape()) throw ShapeError("event_recon_loss: ground truth shape " + shape_str(igt.shape()));
  return ad::mean_abs_diff(igt, pred, static_cast<T>(kPixelScale));
}

template <class T>
ad::Var<T> recon_loss(ad::Var<T> igt, ad::Var<T> itau) {
  if (igt.shape() != itau.shape()) {
    throw ShapeError("recon_loss: " + shape_str(igt.shape()) + " vs " + shape_str(itau.shape()));
  }
  return ad::mean_abs_diff(igt, itau, static_cast<T>(kPixelScale));
}

/// Frozen feature map for the perceptual term: four conv stages of widths
/// 16/32/64/128, stride 2 between stages, applied to images on the 0-255 scale.
template <class T>
class PerceptualExtractor {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x5eedf00dULL;

  explicit PerceptualExtractor(std::uint64_t seed = kDefaultSeed) : seed_(seed) {
    std::mt19937_64 rng(seed);
    const int widths[4] = {16, 32, 64, 128};
    int cin = 3;
    for (int i = 0; i < 4; ++i) {
      stages_[i] = Conv<T>(store_, rng, "perceptual.stage" + std::to_string(i), cin, widths[i], 3, i == 0 ? 1 : 2);
      cin = widths[i];
    }
  }

  PerceptualExtractor(const PerceptualExtractor&) = delete;
  PerceptualExtractor& operator=(const PerceptualExtractor&) = delete;

  std::string descriptor() const { return "random-conv 16/32/64/128 seed=" + std::to_string(seed_); }

  /// Features of a 3 x H x W image in [0, 1]. Weights enter the tape as constants.
  ad::Var<T> operator()(ad::Var<T> image) const {
    auto& tape = image.tape();
    auto x = ad::scale(image, static_cast<T>(kPixelScale));
    for (const auto& s : stages_) {
      x = ad::leaky_relu(ad::conv2d(x, tape.constant(s.weight->value), tape.constant(s.bias->value), s.stride, s.pad),
                         T(0.1));
    }
    return x;
  }

 private:
  std::uint64_t seed_;
  ParamStore<T> store_;
  Conv<T> stages_[4];
};

/// ||phi(I_gt) - phi(I_tau)||_2 / N with N the number of feature elements.
template <class T>
ad::Var<T> perceptual_loss(ad::Var<T> igt, ad::Var<T> itau, const PerceptualExtractor<T>& phi) {
  if (igt.shape() != itau.shape()) {
    throw ShapeError("perceptual_loss: " + shape_str(igt.shape()) + " vs " + shape_str(itau.shape()));
  }
  auto fa = phi(igt);
  auto fb = phi(itau);
  return ad::l2_norm_diff(fa, fb, static_cast<T>(fa.value().size()));
}

/// Weighted sum of the three terms. Throws NumericError naming the first
/// non-finite component.
template <class T>
ad::Var<T> total_loss(const LossComponents<T>& c, const LossWeights& w) {
  const std::pair<const char*, ad::Var<T>> named[] = {
      {"event_recon", c.event_recon}, {"recon", c.recon}, {"perceptual", c.perceptual}};
  for (const auto& [name, v] : named) {
    if (v.value().size() != 1) throw ShapeError(std::string("total_loss: component ") + name + " is not a scalar");
    if (!std::isfinite(static_cast<double>(v.value()[0]))) {
      throw NumericError(std::string("total_loss: non-finite ") + name + " loss");
    }
  }
  for (double lw : {w.event_recon, w.recon, w.perceptual}) {
    if (!(lw >= 0.0) || !std::isfinite(lw)) throw ParameterError("total_loss: loss weights must be finite and non-negative");
  }
  return ad::weighted_sum<T>({c.event_recon, c.recon, c.perceptual},
                             {static_cast<T>(w.event_recon), static_cast<T>(w.recon), static_cast<T>(w.perceptual)});
}

}  // namespace egmr
