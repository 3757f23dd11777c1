#include <gtest/gtest.h>

#include "egmr/warp_refine.hpp"
#include "test_util.hpp"

using namespace egmr;
using egmr::test::random_tensor;
using egmr::test::smooth_field;

namespace {

/// Scalar-loop bilinear sampler with zero padding outside the image.
double sample_zero_padded(const Tensor<double>& img, int c, double sy, double sx) {
  const int h = img.dim(1), w = img.dim(2);
  auto px = [&](int y, int x) { return (y < 0 || y >= h || x < 0 || x >= w) ? 0.0 : img.at(c, y, x); };
  const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
  const double ax = sx - x0, ay = sy - y0;
  return (1 - ay) * ((1 - ax) * px(y0, x0) + ax * px(y0, x0 + 1)) + ay * ((1 - ax) * px(y0 + 1, x0) + ax * px(y0 + 1, x0 + 1));
}

Tensor<double> uniform_map(int c, int h, int w, double v) {
  Tensor<double> t({c, h, w});
  std::fill(t.values().begin(), t.values().end(), v);
  return t;
}

Tensor<double> event_pair(int h, int w, std::mt19937_64& rng) {
  auto p = random_tensor<double>({2, h, w}, rng);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < hw; ++i) p[hw + i] = 1.0 - p[i];
  return p;
}

}  // namespace

TEST(Warp, ZeroFlowIsBitExactIdentity) {
  std::mt19937_64 rng(1);
  ad::Tape<float> tape(false);
  auto img = tape.constant(random_tensor({3, 16, 24}, rng));
  const auto wf = warp_frame(img, tape.constant(Tensor<float>({2, 16, 24})));
  EXPECT_EQ(wf.image.value().values(), img.value().values());
  for (float v : wf.validity.value().values()) EXPECT_EQ(v, 1.0f);
}

TEST(Warp, IntegerShiftOfRamp) {
  Tensor<double> ramp({1, 8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) ramp.at(0, y, x) = 10 * y + x + 1;
  Tensor<double> flow({2, 8, 8});
  std::fill(flow.data(), flow.data() + 64, 2.0);
  ad::Tape<double> tape(false);
  const auto wf = warp_frame(tape.constant(ramp), tape.constant(flow));
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      const double expect = x + 2 < 8 ? ramp.at(0, y, x + 2) : 0.0;
      EXPECT_EQ(wf.image.value().at(0, y, x), expect) << y << "," << x;
      EXPECT_EQ(wf.validity.value().at(0, y, x), x + 2 < 8 ? 1.0 : 0.0);
    }
}

TEST(Warp, FarOutOfBoundsGivesZero) {
  std::mt19937_64 rng(2);
  ad::Tape<double> tape(false);
  const auto wf = warp_frame(tape.constant(random_tensor<double>({3, 8, 8}, rng)), tape.constant(uniform_map(2, 8, 8, -50.0)));
  for (double v : wf.image.value().values()) EXPECT_EQ(v, 0.0);
  for (double v : wf.validity.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(Warp, MatchesScalarBilinearOracle) {
  std::mt19937_64 rng(3);
  const auto img = random_tensor<double>({3, 32, 40}, rng);
  const auto flow = smooth_field<double>(2, 32, 40, 6.0, rng);
  ad::Tape<double> tape(false);
  const auto out = backward_warp(tape.constant(img), tape.constant(flow)).value();
  double worst = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 40; ++x) {
        const double ref = sample_zero_padded(img, c, y + flow.at(1, y, x), x + flow.at(0, y, x));
        worst = std::max(worst, std::abs(ref - out.at(c, y, x)));
      }
  EXPECT_LT(worst, 1e-6);
}

TEST(Warp, ValidityMatchesFootprintOracle) {
  std::mt19937_64 rng(18);
  const auto flow = smooth_field<double>(2, 16, 20, 9.0, rng);
  ad::Tape<double> tape(false);
  const auto v = warp_frame(tape.constant(random_tensor<double>({3, 16, 20}, rng)), tape.constant(flow)).validity.value();
  const auto ref = warp_validity(flow);
  bool partial = false;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    EXPECT_NEAR(v[i], ref[i], 1e-12);
    EXPECT_GE(v[i], 0.0);
    EXPECT_LE(v[i], 1.0 + 1e-12);
    partial |= ref[i] > 0 && ref[i] < 1;
  }
  EXPECT_TRUE(partial);
}

TEST(Warp, LinearInImage) {
  std::mt19937_64 rng(4);
  const auto a = random_tensor<double>({3, 16, 16}, rng), b = random_tensor<double>({3, 16, 16}, rng);
  const auto flow = smooth_field<double>(2, 16, 16, 4.0, rng);
  ad::Tape<double> tape(false);
  auto f = tape.constant(flow);
  Tensor<double> mix({3, 16, 16});
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 0.7 * a[i] - 1.3 * b[i];
  const auto wm = backward_warp(tape.constant(mix), f).value();
  const auto wa = backward_warp(tape.constant(a), f).value(), wb = backward_warp(tape.constant(b), f).value();
  for (std::size_t i = 0; i < mix.size(); ++i) EXPECT_NEAR(wm[i], 0.7 * wa[i] - 1.3 * wb[i], 1e-6);
}

TEST(Warp, ShapeMismatch) {
  ad::Tape<float> tape(false);
  EXPECT_THROW(warp_frame(tape.constant(Tensor<float>({3, 8, 8})), tape.constant(Tensor<float>({2, 8, 16}))), ShapeError);
  EXPECT_THROW(warp_frame(tape.constant(Tensor<float>({3, 8, 8})), tape.constant(Tensor<float>({4, 8, 8}))), ShapeError);
}

TEST(Warp, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  const auto img = random_tensor<double>({3, 12, 12}, rng);
  const auto flow = smooth_field<double>(2, 12, 12, 2.5, rng);
  const auto r = egmr::test::check_input_grads(
      {img, flow},
      [](ad::Tape<double>&, const std::vector<ad::Var<double>>& v) {
        auto o = ad::backward_warp(v[0], v[1]);
        return ad::sum(ad::mul(o, o));
      },
      60, rng);
  EXPECT_LT(r.worst_rel, 1e-3) << r.where;
}

TEST(ImageVisibilityFusion, ExamplesAndOracle) {
  std::mt19937_64 rng(6);
  ad::Tape<double> tape(false);
  const auto a = random_tensor<double>({3, 8, 8}, rng), b = random_tensor<double>({3, 8, 8}, rng);
  WarpedFrame<double> w0{tape.constant(a), tape.constant(uniform_map(1, 8, 8, 1))};
  WarpedFrame<double> w1{tape.constant(b), tape.constant(uniform_map(1, 8, 8, 1))};
  EXPECT_EQ(fuse_image_visibility(w0, w1, tape.constant(uniform_map(1, 8, 8, 1.0))).value().values(), a.values());
  const auto same = fuse_image_visibility(w0, w0, tape.constant(uniform_map(1, 8, 8, 0.5))).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(same[i], a[i], 1e-15);

  const auto m = random_tensor<double>({1, 8, 8}, rng);
  const auto out = fuse_image_visibility(w0, w1, tape.constant(m)).value();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        const double mv = m.at(0, y, x);
        EXPECT_NEAR(out.at(c, y, x), mv * a.at(c, y, x) + (1 - mv) * b.at(c, y, x), 1e-7);
        EXPECT_GE(out.at(c, y, x), std::min(a.at(c, y, x), b.at(c, y, x)) - 1e-12);
        EXPECT_LE(out.at(c, y, x), std::max(a.at(c, y, x), b.at(c, y, x)) + 1e-12);
      }
}

TEST(ImageVisibilityFusion, RejectsOutOfRangeVisibility) {
  ad::Tape<double> tape(false);
  WarpedFrame<double> w{tape.constant(Tensor<double>({3, 4, 4})), tape.constant(uniform_map(1, 4, 4, 1))};
  auto m = uniform_map(1, 4, 4, 0.5);
  m[5] = 1.01;
  EXPECT_THROW(fuse_image_visibility(w, w, tape.constant(m)), ContractError);
  m[5] = -0.01;
  EXPECT_THROW(fuse_image_visibility(w, w, tape.constant(m)), ContractError);
}

TEST(EventVisibilityFusion, ExamplesAndOracle) {
  std::mt19937_64 rng(7);
  ad::Tape<double> tape(false);
  const auto a = random_tensor<double>({3, 8, 8}, rng), b = random_tensor<double>({3, 8, 8}, rng);
  WarpedFrame<double> w0{tape.constant(a), tape.constant(uniform_map(1, 8, 8, 1))};
  WarpedFrame<double> w1{tape.constant(b), tape.constant(uniform_map(1, 8, 8, 1))};
  Tensor<double> first({2, 8, 8});
  std::fill(first.data(), first.data() + 64, 1.0);
  EXPECT_EQ(fuse_event_visibility(w0, w1, tape.constant(first)).value().values(), a.values());

  const auto p = event_pair(8, 8, rng);
  const auto same = fuse_event_visibility(w0, w0, tape.constant(p)).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(same[i], a[i], 1e-15);

  const auto out = fuse_event_visibility(w0, w1, tape.constant(p)).value();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        const double expect = p.at(0, y, x) * a.at(c, y, x) + p.at(1, y, x) * b.at(c, y, x);
        EXPECT_NEAR(out.at(c, y, x), expect, 1e-7);
        EXPECT_GE(out.at(c, y, x), std::min(a.at(c, y, x), b.at(c, y, x)) - 1e-12);
        EXPECT_LE(out.at(c, y, x), std::max(a.at(c, y, x), b.at(c, y, x)) + 1e-12);
      }
}

TEST(EventVisibilityFusion, RejectsUnnormalizedPair) {
  std::mt19937_64 rng(8);
  ad::Tape<double> tape(false);
  WarpedFrame<double> w{tape.constant(Tensor<double>({3, 4, 4})), tape.constant(uniform_map(1, 4, 4, 1))};
  auto p = event_pair(4, 4, rng);
  p[3] += 5e-5;
  EXPECT_NO_THROW(fuse_event_visibility(w, w, tape.constant(p)));
  p[3] += 1e-3;
  EXPECT_THROW(fuse_event_visibility(w, w, tape.constant(p)), ContractError);
  EXPECT_THROW(fuse_event_visibility(w, w, tape.constant(Tensor<double>({1, 4, 4}))), ShapeError);
}

TEST(CrossSpaceAttention, WeightsFormPartitionOfUnity) {
  std::mt19937_64 rng(9);
  ParamStore<float> ps;
  CrossSpaceAttention<float> c2sa(ps, rng, ModelConfig{});
  ad::Tape<float> tape(false);
  const auto w = c2sa(tape.constant(random_tensor({3, 24, 32}, rng)), tape.constant(random_tensor({3, 24, 32}, rng))).value();
  ASSERT_EQ(w.shape(), (std::vector<int>{2, 24, 32}));
  const std::size_t hw = 24 * 32;
  for (std::size_t i = 0; i < hw; ++i) {
    EXPECT_NEAR(w[i] + w[hw + i], 1.0f, 1e-6f);
    EXPECT_GE(w[i], 0.0f);
    EXPECT_GE(w[hw + i], 0.0f);
  }
  EXPECT_THROW(c2sa(tape.constant(Tensor<float>({3, 8, 8})), tape.constant(Tensor<float>({3, 8, 16}))), ShapeError);
  EXPECT_THROW(c2sa(tape.constant(Tensor<float>({1, 8, 8})), tape.constant(Tensor<float>({1, 8, 8}))), ShapeError);
}

TEST(CrossSpaceAttention, SymmetricSetupGivesEqualWeights) {
  std::mt19937_64 rng(10);
  ParamStore<double> ps;
  CrossSpaceAttention<double> c2sa(ps, rng, ModelConfig{});
  // Same projections for both modalities and the same mixing conv: the two
  // logit maps coincide when the inputs do.
  ps.at("c2sa.q_evt.weight").value = ps.at("c2sa.q_img.weight").value;
  ps.at("c2sa.k_evt.weight").value = ps.at("c2sa.k_img.weight").value;
  ps.at("c2sa.mix1.weight").value = ps.at("c2sa.mix0.weight").value;
  ad::Tape<double> tape(false);
  auto img = tape.constant(random_tensor<double>({3, 16, 16}, rng));
  for (double v : c2sa(img, img).value().values()) EXPECT_NEAR(v, 0.5, 1e-12);
}

TEST(CrossSpaceAttention, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  ParamStore<double> ps;
  ModelConfig cfg;
  cfg.c2sa_width = 4;
  CrossSpaceAttention<double> c2sa(ps, rng, cfg);
  const auto a = random_tensor<double>({3, 12, 12}, rng), b = random_tensor<double>({3, 12, 12}, rng);
  const auto probe = random_tensor<double>({1, 12, 12}, rng, -1, 1);
  auto loss = [&](ad::Tape<double>& t, ad::Var<double> x, ad::Var<double> y) {
    return ad::sum(ad::mul(ad::slice_channels(c2sa(x, y), 0, 1), t.constant(probe)));
  };
  const auto ri = egmr::test::check_input_grads(
      {a, b}, [&](ad::Tape<double>& t, const std::vector<ad::Var<double>>& v) { return loss(t, v[0], v[1]); }, 60, rng);
  EXPECT_LT(ri.worst_rel, 1e-3) << ri.where;
  const auto rp = egmr::test::check_param_grads(
      ps, [&](ad::Tape<double>& t) { return loss(t, t.constant(a), t.constant(b)); }, 0.1, rng);
  EXPECT_LT(rp.worst_rel, 1e-3) << rp.where;
}

namespace {

template <class T>
RefineInputs<T> refine_inputs(ad::Tape<T>& tape, int h, int w, std::mt19937_64& rng, std::vector<ad::Var<T>> vars = {}) {
  auto pick = [&](std::size_t k, std::vector<int> shape) {
    return k < vars.size() ? vars[k] : tape.constant(random_tensor<T>(std::move(shape), rng));
  };
  RefineInputs<T> in;
  in.i0 = pick(0, {3, h, w});
  in.i1 = pick(1, {3, h, w});
  in.warped0 = {pick(2, {3, h, w}), tape.constant(random_tensor<T>({1, h, w}, rng))};
  in.warped1 = {pick(3, {3, h, w}), tape.constant(random_tensor<T>({1, h, w}, rng))};
  in.flow = pick(4, {4, h, w});
  in.image_visibility = pick(5, {1, h, w});
  in.event_visibility = pick(6, {2, h, w});
  return in;
}

}  // namespace

TEST(RefineNet, ZeroHeadGivesZeroResidual) {
  std::mt19937_64 rng(12);
  ParamStore<float> ps;
  RefineNet<float> net(ps, rng, ModelConfig{});
  ad::Tape<float> tape(false);
  const auto out = net(refine_inputs(tape, 32, 32, rng)).value();
  EXPECT_EQ(out.shape(), (std::vector<int>{3, 32, 32}));
  for (float v : out.values()) EXPECT_EQ(v, 0.0f);
}

TEST(RefineNet, OutputBounded) {
  std::mt19937_64 rng(13);
  ParamStore<float> ps;
  RefineNet<float> net(ps, rng, ModelConfig{});
  egmr::test::perturb_params(ps, rng, 2.0);
  ad::Tape<float> tape(false);
  const auto out = net(refine_inputs(tape, 32, 48, rng)).value();
  bool nonzero = false;
  for (float v : out.values()) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
    nonzero |= v != 0.0f;
  }
  EXPECT_TRUE(nonzero);
}

TEST(RefineNet, ShapeErrors) {
  std::mt19937_64 rng(14);
  ParamStore<float> ps;
  RefineNet<float> net(ps, rng, ModelConfig{});
  ad::Tape<float> tape(false);
  auto in = refine_inputs(tape, 32, 32, rng);
  in.flow = tape.constant(Tensor<float>({2, 32, 32}));
  EXPECT_THROW(net(in), ShapeError);
  EXPECT_THROW(net(refine_inputs(tape, 30, 32, rng)), ShapeError);
}

TEST(RefineNet, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(15);
  ParamStore<double> ps;
  ModelConfig cfg;
  cfg.refine_base = 4;
  RefineNet<double> net(ps, rng, cfg);
  egmr::test::perturb_params(ps, rng, 0.1);
  ad::Tape<double> probe_tape(false);
  const auto base = refine_inputs(probe_tape, 32, 32, rng);
  const std::vector<Tensor<double>> inputs = {base.i0.value(), base.warped0.image.value(), base.flow.value()};
  auto build = [&](ad::Tape<double>& t, ad::Var<double> i0, ad::Var<double> w0, ad::Var<double> flow) {
    RefineInputs<double> in;
    in.i0 = i0;
    in.i1 = t.constant(base.i1.value());
    in.warped0 = {w0, t.constant(base.warped0.validity.value())};
    in.warped1 = {t.constant(base.warped1.image.value()), t.constant(base.warped1.validity.value())};
    in.flow = flow;
    in.image_visibility = t.constant(base.image_visibility.value());
    in.event_visibility = t.constant(base.event_visibility.value());
    auto r = net(in);
    return ad::sum(ad::mul(r, r));
  };
  const auto rp = egmr::test::check_param_grads(
      ps, [&](ad::Tape<double>& t) { return build(t, t.constant(inputs[0]), t.constant(inputs[1]), t.constant(inputs[2])); },
      0.01, rng);
  EXPECT_LT(rp.worst_rel, 1e-3) << rp.where;
  const auto ri = egmr::test::check_input_grads(
      inputs, [&](ad::Tape<double>& t, const std::vector<ad::Var<double>>& v) { return build(t, v[0], v[1], v[2]); }, 20,
      rng);
  EXPECT_LT(ri.worst_rel, 1e-3) << ri.where;
}

TEST(Synthesize, ExamplesAndOracle) {
  std::mt19937_64 rng(16);
  ad::Tape<double> tape(false);
  const auto a = random_tensor<double>({3, 8, 8}, rng), b = random_tensor<double>({3, 8, 8}, rng);
  auto zero = tape.constant(Tensor<double>({3, 8, 8}));
  const auto p = event_pair(8, 8, rng);
  const auto same = synthesize(tape.constant(a), tape.constant(a), tape.constant(p), zero).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(same[i], a[i], 1e-15);
  Tensor<double> first({2, 8, 8});
  std::fill(first.data(), first.data() + 64, 1.0);
  EXPECT_EQ(synthesize(tape.constant(a), tape.constant(b), tape.constant(first), zero).value().values(), a.values());

  const auto r = random_tensor<double>({3, 8, 8}, rng, -1, 1);
  const auto out = synthesize(tape.constant(a), tape.constant(b), tape.constant(p), tape.constant(r)).value();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        EXPECT_NEAR(out.at(c, y, x), p.at(0, y, x) * a.at(c, y, x) + p.at(1, y, x) * b.at(c, y, x) + r.at(c, y, x), 1e-7);
  EXPECT_THROW(synthesize(tape.constant(a), tape.constant(b), tape.constant(Tensor<double>({1, 8, 8})), zero), ShapeError);
  EXPECT_THROW(synthesize(tape.constant(a), tape.constant(Tensor<double>({3, 8, 4})), tape.constant(p), zero), ShapeError);
}

TEST(Synthesize, CompositeGradientThroughWarpFusionAndAttention) {
  std::mt19937_64 rng(17);
  ParamStore<double> ps;
  ModelConfig cfg;
  cfg.c2sa_width = 4;
  CrossSpaceAttention<double> c2sa(ps, rng, cfg);
  const int h = 12, w = 12;
  const auto i0 = random_tensor<double>({3, h, w}, rng), i1 = random_tensor<double>({3, h, w}, rng);
  const auto flow = smooth_field<double>(4, h, w, 2.0, rng);
  const auto m_logit = random_tensor<double>({1, h, w}, rng, -2, 2);
  const auto e_logit = random_tensor<double>({2, h, w}, rng, -2, 2);
  const auto probe = random_tensor<double>({3, h, w}, rng, -1, 1);
  const auto r = egmr::test::check_input_grads(
      {i0, i1, flow, m_logit, e_logit},
      [&](ad::Tape<double>& t, const std::vector<ad::Var<double>>& v) {
        const auto w0 = warp_frame(v[0], ad::slice_channels(v[2], 0, 2));
        const auto w1 = warp_frame(v[1], ad::slice_channels(v[2], 2, 4));
        auto img = fuse_image_visibility(w0, w1, ad::sigmoid(v[3]));
        auto evt = fuse_event_visibility(w0, w1, ad::softmax_pair(v[4]));
        auto out = synthesize(img, evt, c2sa(img, evt), t.constant(Tensor<double>({3, h, w})));
        return ad::sum(ad::mul(out, t.constant(probe)));
      },
      40, rng);
  EXPECT_LT(r.worst_rel, 1e-3) << r.where;
}
