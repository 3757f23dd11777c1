#pragma once

#include <array>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "egmr/ega.hpp"
#include "egmr/event_core.hpp"
#include "egmr/flow_nets.hpp"
#include "egmr/losses.hpp"
#include "egmr/warp_refine.hpp"

namespace egmr {

/// Every intermediate of one forward pass. Vars point into the caller's tape.
template <class T>
struct ForwardTrace {
  double tau = 0.5;
  Tensor<T> grid_before;  // B x H x W, events in [t_start, t_split]
  Tensor<T> grid_after;   // B x H x W, events in (t_split, t_end]
  ad::Var<T> event_flow;        // 4 x H x W
  ad::Var<T> event_visibility;  // 2 x H x W
  std::array<ad::Var<T>, 3> frame_flow;        // IFBlock output per scale, 4 x H x W
  std::array<ad::Var<T>, 3> visibility_logit;  // per scale, 1 x H x W
  std::array<ad::Var<T>, 3> refined_flow;      // after EGA (or the concat baseline), 4 x H x W
  std::array<typename EgaStage<T>::Output, 3> ega;  // at 1/K resolution
  ad::Var<T> image_visibility;  // sigmoid of the last logit
  WarpedFrame<T> warped0, warped1;
  ad::Var<T> from_image;   // image-visibility interpolation
  ad::Var<T> from_events;  // event-visibility interpolation
  ad::Var<T> weights;      // 2 x H x W fusion weights
  ad::Var<T> residual;     // 3 x H x W
  ad::Var<T> output_raw;   // unclamped prediction
  Tensor<T> output;        // clamped to [0, 1]
};

template <class T>
class EgmrModel {
 public:
  explicit EgmrModel(const ModelConfig& cfg = {}) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.init_seed);
    event_net_ = EventFlowNet<T>(params_, rng, cfg_);
    for (int s = 0; s < 3; ++s) blocks_.emplace_back(params_, rng, cfg_, s);
    for (int s = 0; s < 3; ++s) ega_.emplace_back(params_, rng, cfg_, s);
    c2sa_ = CrossSpaceAttention<T>(params_, rng, cfg_);
    refine_ = RefineNet<T>(params_, rng, cfg_);
  }

  EgmrModel(const EgmrModel&) = delete;
  EgmrModel& operator=(const EgmrModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  std::string fingerprint() const { return cfg_.fingerprint(); }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const EventFlowNet<T>& event_net() const { return event_net_; }
  const std::vector<IFBlock<T>>& ifblocks() const { return blocks_; }
  const std::vector<EgaStage<T>>& ega() const { return ega_; }
  const CrossSpaceAttention<T>& c2sa() const { return c2sa_; }
  const RefineNet<T>& refine() const { return refine_; }

  void save(const std::string& path) const { save_checkpoint(params_, fingerprint(), path); }
  void load(const std::string& path) { load_checkpoint(params_, fingerprint(), path); }

  ForwardTrace<T> forward(ad::Var<T> i0, ad::Var<T> i1, const EventStream& events, double tau) const {
    if (i0.shape() != i1.shape() || i0.value().rank() != 3 || i0.dim(0) != 3) {
      throw ShapeError("forward: keyframes must both be 3 x H x W, got " + shape_str(i0.shape()) + " and " +
                       shape_str(i1.shape()));
    }
    const int h = i0.dim(1), w = i0.dim(2);
    if (h % 16 || w % 16) throw ShapeError("forward: H and W must be divisible by 16, got " + shape_str(i0.shape()));
    auto& tape = i0.tape();
    ForwardTrace<T> tr;
    tr.tau = tau;
    const auto [before, after] = split_at_tau(events, tau);
    tr.grid_before = voxelize(before, cfg_.bins, h, w).template cast<T>();
    tr.grid_after = voxelize(after, cfg_.bins, h, w).template cast<T>();
    auto ev = event_net_(tape.constant(tr.grid_before), tape.constant(tr.grid_after));
    tr.event_flow = ev.flow;
    tr.event_visibility = ev.visibility;

    ad::Var<T> warm;
    for (int s = 0; s < 3; ++s) {
      auto fs = ifblock_forward(blocks_, s, i0, i1, tau, warm);
      tr.frame_flow[s] = fs.flow;
      tr.visibility_logit[s] = fs.logit;
      const int k = cfg_.if_factor[static_cast<std::size_t>(s)];
      const int hs = h / k, ws = w / k;
      auto fs_lo = resample_flow(fs.flow, hs, ws);
      auto fe_lo = resample_event_flow(ev.flow, hs, ws);
      tr.ega[s] = ega_[static_cast<std::size_t>(s)](fe_lo, fs_lo);
      // EGA runs at the block's working resolution; its change is lifted back.
      tr.refined_flow[s] =
          k == 1 ? tr.ega[s].flow : ad::add(fs.flow, resample_flow(ad::sub(tr.ega[s].flow, fs_lo), h, w));
      warm = tr.refined_flow[s];
    }

    tr.image_visibility = ad::sigmoid(tr.visibility_logit[2]);
    tr.warped0 = warp_frame(i0, ad::slice_channels(warm, 0, 2));
    tr.warped1 = warp_frame(i1, ad::slice_channels(warm, 2, 4));
    tr.from_image = fuse_image_visibility(tr.warped0, tr.warped1, tr.image_visibility);
    tr.from_events = fuse_event_visibility(tr.warped0, tr.warped1, tr.event_visibility);
    ad::Var<T> refine_event_vis;
    if (cfg_.use_c2sa) {
      tr.weights = c2sa_(tr.from_image, tr.from_events);
      refine_event_vis = tr.event_visibility;
    } else {
      // Without C2SA the event visibility has no say in the output.
      Tensor<T> wv({2, h, w});
      std::fill(wv.values().begin(), wv.values().begin() + static_cast<long>(h) * w, T(1));
      tr.weights = tape.constant(std::move(wv));
      refine_event_vis = tape.constant(Tensor<T>({2, h, w}));
    }
    tr.residual = refine_({i0, i1, tr.warped0, tr.warped1, warm, tr.image_visibility, refine_event_vis});
    tr.output_raw = synthesize(tr.from_image, tr.from_events, tr.weights, tr.residual);
    tr.output = clamp01(tr.output_raw.value());
    return tr;
  }

  ForwardTrace<T> forward(ad::Tape<T>& tape, const Tensor<T>& i0, const Tensor<T>& i1, const EventStream& events,
                          double tau) const {
    return forward(tape.constant(i0), tape.constant(i1), events, tau);
  }

  /// Clamped prediction without recording gradients.
  Tensor<T> predict(const Tensor<T>& i0, const Tensor<T>& i1, const EventStream& events, double tau) const {
    ad::Tape<T> tape(false);
    return forward(tape, i0, i1, events, tau).output;
  }

 private:
  ModelConfig cfg_;
  ParamStore<T> params_;
  EventFlowNet<T> event_net_;
  std::vector<IFBlock<T>> blocks_;
  std::vector<EgaStage<T>> ega_;
  CrossSpaceAttention<T> c2sa_;
  RefineNet<T> refine_;
};

/// The three loss terms for one trace against its ground truth.
template <class T>
LossComponents<T> trace_losses(const ForwardTrace<T>& tr, ad::Var<T> igt, ad::Var<T> i0, ad::Var<T> i1,
                               const PerceptualExtractor<T>& phi) {
  return {event_recon_loss(igt, i0, i1, tr.event_flow, tr.event_visibility), recon_loss(igt, tr.output_raw),
          perceptual_loss(igt, tr.output_raw, phi)};
}

/// One independent forward per tau; the event stream is re-split each time.
template <class T>
std::vector<Tensor<T>> interpolate_n(const EgmrModel<T>& model, const Tensor<T>& i0, const Tensor<T>& i1,
                                     const EventStream& events, const std::vector<double>& taus) {
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (!(taus[i] > 0.0 && taus[i] < 1.0)) throw ParameterError("interpolate_n: tau must lie in (0, 1)");
    if (i > 0 && !(taus[i] > taus[i - 1])) throw ParameterError("interpolate_n: taus must be strictly increasing");
  }
  std::vector<Tensor<T>> frames;
  frames.reserve(taus.size());
  for (double tau : taus) frames.push_back(model.predict(i0, i1, events, tau));
  return frames;
}

}  // namespace egmr
