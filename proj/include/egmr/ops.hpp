#pragma once

#include <Eigen/Core>
#include <cmath>
#include <string>
#include <vector>

#include "egmr/autograd.hpp"

namespace egmr::ad {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;
template <class T>
using ColMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <class T>
using MapCol = Eigen::Map<ColMat<T>>;
template <class T>
using CMapCol = Eigen::Map<const ColMat<T>>;

template <class T>
Var<T> reshape(Var<T> x, std::vector<int> shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const int ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix](Tape<T>& t, const Tensor<T>& g) {
    auto& d = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Convolution (im2col + GEMM)

namespace detail {

struct ConvGeom {
  int cin, h, w, k, stride, pad, ho, wo;
};

/// Output columns [lo, hi) whose input column ox * stride - pad + kx is in range.
inline std::pair<int, int> valid_span(const ConvGeom& g, int kx) {
  const int off = kx - g.pad;
  int lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  int hi = (g.w - 1 - off) >= 0 ? (g.w - 1 - off) / g.stride + 1 : 0;
  hi = std::min(hi, g.wo);
  return {std::min(lo, hi), hi};
}

template <class T>
[[gnu::optimize("no-tree-loop-distribute-patterns")]] void im2col(const T* x, const ConvGeom& g, T* col) {
  const int n = g.ho * g.wo;
  for (int c = 0; c < g.cin; ++c)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        T* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * n;
        const T* plane = x + static_cast<std::size_t>(c) * g.h * g.w;
        const auto [lo, hi] = valid_span(g, kx);
        const int off = kx - g.pad;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.w + off;
          // Border runs are a pixel or two wide; plain loops beat memset calls.
          for (int ox = 0; ox < lo; ++ox) dst[ox] = T(0);
          if (g.stride == 1) {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride];
          }
          for (int ox = hi; ox < g.wo; ++ox) dst[ox] = T(0);
        }
      }
}

template <class T>
void col2im_add(const T* col, const ConvGeom& g, T* dx) {
  const int n = g.ho * g.wo;
  for (int c = 0; c < g.cin; ++c)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        const T* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * n;
        T* plane = dx + static_cast<std::size_t>(c) * g.h * g.w;
        const auto [lo, hi] = valid_span(g, kx);
        const int off = kx - g.pad;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = row + oy * g.wo;
          T* dst = plane + static_cast<std::size_t>(iy) * g.w + off;
          if (g.stride == 1) {
            for (int ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox * g.stride] += src[ox];
          }
        }
      }
}

}  // namespace detail

/// 2-D convolution with zero padding. x: Cin x H x W, weight: Cout x Cin x k x k,
/// bias: Cout.
template <class T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, int stride, int pad) {
  const auto& xv = x.value();
  const auto& wv = weight.value();
  if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(1) != xv.dim(0) || wv.dim(2) != wv.dim(3)) {
    throw ShapeError("conv2d: input " + shape_str(xv.shape()) + " incompatible with weight " + shape_str(wv.shape()));
  }
  if (bias.value().size() != static_cast<std::size_t>(wv.dim(0))) throw ShapeError("conv2d: bias size");
  detail::ConvGeom g{xv.dim(0), xv.dim(1), xv.dim(2), wv.dim(2), stride, pad, 0, 0};
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  if (g.ho <= 0 || g.wo <= 0) throw ShapeError("conv2d: input too small");
  const int cout = wv.dim(0);
  const int kk = g.cin * g.k * g.k;
  const int n = g.ho * g.wo;

  std::shared_ptr<T[]> col(new T[static_cast<std::size_t>(kk) * n]);
  detail::im2col(xv.data(), g, col.get());

  Tensor<T> out({cout, g.ho, g.wo});
  // Row-major (cout x n) output is column-major (n x cout); multiplying in that
  // orientation keeps the long pixel axis as the GEMM row dimension.
  MapCol<T> o(out.data(), n, cout);
  o.noalias() = CMapCol<T>(col.get(), n, kk) * CMapCol<T>(wv.data(), kk, cout);
  const auto& bv = bias.value();
  for (int c = 0; c < cout; ++c) o.col(c).array() += bv[c];

  const int ix = x.id(), iw = weight.id(), ib = bias.id();
  return x.tape().record(std::move(out), {x, weight, bias},
                         [ix, iw, ib, g, col, cout, kk, n](Tape<T>& t, const Tensor<T>& grad) {
                           CMapCol<T> G(grad.data(), n, cout);
                           if (t.requires_grad(iw)) {
                             MapCol<T>(t.grad(iw).data(), kk, cout).noalias() +=
                                 CMapCol<T>(col.get(), n, kk).transpose() * G;
                           }
                           if (t.requires_grad(ib)) {
                             auto& db = t.grad(ib);
                             for (int c = 0; c < cout; ++c) db[c] += G.col(c).sum();
                           }
                           if (t.requires_grad(ix)) {
                             std::unique_ptr<T[]> dcol(new T[static_cast<std::size_t>(kk) * n]);
                             MapCol<T>(dcol.get(), n, kk).noalias() =
                                 G * CMapCol<T>(t.value(iw).data(), kk, cout).transpose();
                             detail::col2im_add(dcol.get(), g, t.grad(ix).data());
                           }
                         });
}

// ---------------------------------------------------------------------------
// Resampling

/// K x K average pooling with stride K. Spatial dims must be divisible by K.
template <class T>
Var<T> avg_pool(Var<T> x, int k) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (k < 1 || h % k || w % k) throw ShapeError("avg_pool: " + shape_str(x.shape()) + " not divisible by " + std::to_string(k));
  if (k == 1) return x;
  const int ho = h / k, wo = w / k;
  const T inv = T(1) / T(k * k);
  Tensor<T> out({c, ho, wo});
  const auto& xv = x.value();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) out.at(ch, y / k, xx / k) += xv.at(ch, y, xx) * inv;
  const int ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, c, h, w, k, inv](Tape<T>& t, const Tensor<T>& g) {
    auto& d = t.grad(ix);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) d.at(ch, y, xx) += g.at(ch, y / k, xx / k) * inv;
  });
}

namespace detail {

/// Half-pixel-centre linear interpolation taps (align_corners = false).
struct Taps {
  std::vector<int> i0, i1;
  std::vector<double> frac;
};

inline Taps linear_taps(int in, int out) {
  Taps tp;
  tp.i0.resize(out);
  tp.i1.resize(out);
  tp.frac.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    tp.i0[o] = i0;
    tp.i1[o] = i0 < in - 1 ? i0 + 1 : i0;
    tp.frac[o] = src - i0;
  }
  return tp;
}

}  // namespace detail

/// Bilinear resize of a C x H x W tensor to C x ho x wo, half-pixel centres.
template <class T>
Var<T> resize_bilinear(Var<T> x, int ho, int wo) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (ho == h && wo == w) return x;
  const auto ty = detail::linear_taps(h, ho);
  const auto tx = detail::linear_taps(w, wo);
  Tensor<T> out({c, ho, wo});
  const auto& xv = x.value();
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < ho; ++oy) {
      const T ly = static_cast<T>(ty.frac[oy]);
      for (int ox = 0; ox < wo; ++ox) {
        const T lx = static_cast<T>(tx.frac[ox]);
        const T top = (T(1) - lx) * xv.at(ch, ty.i0[oy], tx.i0[ox]) + lx * xv.at(ch, ty.i0[oy], tx.i1[ox]);
        const T bot = (T(1) - lx) * xv.at(ch, ty.i1[oy], tx.i0[ox]) + lx * xv.at(ch, ty.i1[oy], tx.i1[ox]);
        out.at(ch, oy, ox) = (T(1) - ly) * top + ly * bot;
      }
    }
  const int ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, c, ho, wo, ty, tx](Tape<T>& t, const Tensor<T>& g) {
    auto& d = t.grad(ix);
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < ho; ++oy) {
        const T ly = static_cast<T>(ty.frac[oy]);
        for (int ox = 0; ox < wo; ++ox) {
          const T lx = static_cast<T>(tx.frac[ox]);
          const T gv = g.at(ch, oy, ox);
          d.at(ch, ty.i0[oy], tx.i0[ox]) += gv * (T(1) - ly) * (T(1) - lx);
          d.at(ch, ty.i0[oy], tx.i1[ox]) += gv * (T(1) - ly) * lx;
          d.at(ch, ty.i1[oy], tx.i0[ox]) += gv * ly * (T(1) - lx);
          d.at(ch, ty.i1[oy], tx.i1[ox]) += gv * ly * lx;
        }
      }
  });
}

/// Backward warp: out(c, y, x) = bilinear sample of img at (x + flow_x, y + flow_y).
/// Neighbours outside the image contribute zero. Differentiable in both inputs.
template <class T>
Var<T> backward_warp(Var<T> img, Var<T> flow) {
  const auto& iv = img.value();
  const auto& fv = flow.value();
  if (iv.rank() != 3 || fv.rank() != 3 || fv.dim(0) != 2 || fv.dim(1) != iv.dim(1) || fv.dim(2) != iv.dim(2)) {
    throw ShapeError("backward_warp: image " + shape_str(iv.shape()) + " vs flow " + shape_str(fv.shape()));
  }
  const int c = iv.dim(0), h = iv.dim(1), w = iv.dim(2);
  Tensor<T> out({c, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const T sx = T(x) + fv.at(0, y, x);
      const T sy = T(y) + fv.at(1, y, x);
      const T fx0 = std::floor(sx), fy0 = std::floor(sy);
      const T ax = sx - fx0, ay = sy - fy0;
      if (!(fx0 > T(-2) && fx0 < T(w) && fy0 > T(-2) && fy0 < T(h))) continue;
      const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
      const bool vx0 = x0 >= 0, vx1 = x0 + 1 < w, vy0 = y0 >= 0, vy1 = y0 + 1 < h;
      const T w00 = (T(1) - ax) * (T(1) - ay), w10 = ax * (T(1) - ay), w01 = (T(1) - ax) * ay, w11 = ax * ay;
      for (int ch = 0; ch < c; ++ch) {
        T acc = 0;
        if (vy0 && vx0) acc += w00 * iv.at(ch, y0, x0);
        if (vy0 && vx1) acc += w10 * iv.at(ch, y0, x0 + 1);
        if (vy1 && vx0) acc += w01 * iv.at(ch, y0 + 1, x0);
        if (vy1 && vx1) acc += w11 * iv.at(ch, y0 + 1, x0 + 1);
        out.at(ch, y, x) = acc;
      }
    }
  const int ii = img.id(), iflow = flow.id();
  return img.tape().record(std::move(out), {img, flow}, [ii, iflow, c, h, w](Tape<T>& t, const Tensor<T>& g) {
    const auto& iv = t.value(ii);
    const auto& fv = t.value(iflow);
    const bool gi = t.requires_grad(ii), gf = t.requires_grad(iflow);
    Tensor<T>* di = gi ? &t.grad(ii) : nullptr;
    Tensor<T>* df = gf ? &t.grad(iflow) : nullptr;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const T sx = T(x) + fv.at(0, y, x);
        const T sy = T(y) + fv.at(1, y, x);
        const T fx0 = std::floor(sx), fy0 = std::floor(sy);
        const T ax = sx - fx0, ay = sy - fy0;
        if (!(fx0 > T(-2) && fx0 < T(w) && fy0 > T(-2) && fy0 < T(h))) continue;
        const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
        const bool vx0 = x0 >= 0, vx1 = x0 + 1 < w, vy0 = y0 >= 0, vy1 = y0 + 1 < h;
        const T w00 = (T(1) - ax) * (T(1) - ay), w10 = ax * (T(1) - ay), w01 = (T(1) - ax) * ay, w11 = ax * ay;
        T gx = 0, gy = 0;
        for (int ch = 0; ch < c; ++ch) {
          const T gv = g.at(ch, y, x);
          const T v00 = (vy0 && vx0) ? iv.at(ch, y0, x0) : T(0);
          const T v10 = (vy0 && vx1) ? iv.at(ch, y0, x0 + 1) : T(0);
          const T v01 = (vy1 && vx0) ? iv.at(ch, y0 + 1, x0) : T(0);
          const T v11 = (vy1 && vx1) ? iv.at(ch, y0 + 1, x0 + 1) : T(0);
          if (gi) {
            if (vy0 && vx0) di->at(ch, y0, x0) += gv * w00;
            if (vy0 && vx1) di->at(ch, y0, x0 + 1) += gv * w10;
            if (vy1 && vx0) di->at(ch, y0 + 1, x0) += gv * w01;
            if (vy1 && vx1) di->at(ch, y0 + 1, x0 + 1) += gv * w11;
          }
          gx += gv * ((T(1) - ay) * (v10 - v00) + ay * (v11 - v01));
          gy += gv * ((T(1) - ax) * (v01 - v00) + ax * (v11 - v10));
        }
        if (gf) {
          df->at(0, y, x) += gx;
          df->at(1, y, x) += gy;
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Token / attention plumbing

/// a (N x K) times b (K x M), or b^T when trans_b (b is M x K).
template <class T>
Var<T> matmul(Var<T> a, Var<T> b, bool trans_b = false) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2) throw ShapeError("matmul expects matrices");
  const int n = av.dim(0), k = av.dim(1);
  const int m = trans_b ? bv.dim(0) : bv.dim(1);
  if ((trans_b ? bv.dim(1) : bv.dim(0)) != k) {
    throw ShapeError("matmul: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()) + (trans_b ? "^T" : ""));
  }
  Tensor<T> out({n, m});
  MapMat<T> o(out.data(), n, m);
  if (trans_b)
    o.noalias() = CMapMat<T>(av.data(), n, k) * CMapMat<T>(bv.data(), m, k).transpose();
  else
    o.noalias() = CMapMat<T>(av.data(), n, k) * CMapMat<T>(bv.data(), k, m);
  const int ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, n, k, m, trans_b](Tape<T>& t, const Tensor<T>& g) {
    CMapMat<T> G(g.data(), n, m);
    if (t.requires_grad(ia)) {
      MapMat<T> da(t.grad(ia).data(), n, k);
      if (trans_b)
        da.noalias() += G * CMapMat<T>(t.value(ib).data(), m, k);
      else
        da.noalias() += G * CMapMat<T>(t.value(ib).data(), k, m).transpose();
    }
    if (t.requires_grad(ib)) {
      CMapMat<T> A(t.value(ia).data(), n, k);
      if (trans_b)
        MapMat<T>(t.grad(ib).data(), m, k).noalias() += G.transpose() * A;
      else
        MapMat<T>(t.grad(ib).data(), k, m).noalias() += A.transpose() * G;
    }
  });
}

/// Adds bias (length M) to every row of x (N x M).
template <class T>
Var<T> add_row_bias(Var<T> x, Var<T> bias) {
  const int n = x.dim(0), m = x.dim(1);
  if (bias.value().size() != static_cast<std::size_t>(m)) throw ShapeError("add_row_bias: bias size");
  Tensor<T> out = x.value();
  const auto& bv = bias.value();
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < m; ++c) out[static_cast<std::size_t>(r) * m + c] += bv[c];
  const int ix = x.id(), ib = bias.id();
  return x.tape().record(std::move(out), {x, bias}, [ix, ib, n, m](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(ix)) {
      auto& d = t.grad(ix);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      auto& d = t.grad(ib);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < m; ++c) d[c] += g[static_cast<std::size_t>(r) * m + c];
    }
  });
}

/// x (N x D) W (D x M) + b.
template <class T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  return add_row_bias(matmul(x, weight), bias);
}

/// Row softmax of (scores * scale + mask); mask is a constant N x M tensor.
template <class T>
Var<T> masked_softmax_rows(Var<T> scores, const Tensor<T>& mask, T scale) {
  const auto& sv = scores.value();
  require_same_shape(sv, mask, "masked_softmax_rows");
  const int n = sv.dim(0), m = sv.dim(1);
  Tensor<T> out({n, m});
  for (int r = 0; r < n; ++r) {
    const std::size_t off = static_cast<std::size_t>(r) * m;
    T mx = -std::numeric_limits<T>::infinity();
    for (int c = 0; c < m; ++c) mx = std::max(mx, sv[off + c] * scale + mask[off + c]);
    T z = 0;
    for (int c = 0; c < m; ++c) {
      out[off + c] = std::exp(sv[off + c] * scale + mask[off + c] - mx);
      z += out[off + c];
    }
    for (int c = 0; c < m; ++c) out[off + c] /= z;
  }
  auto probs = std::make_shared<Tensor<T>>(out);
  const int is = scores.id();
  return scores.tape().record(std::move(out), {scores}, [is, probs, n, m, scale](Tape<T>& t, const Tensor<T>& g) {
    auto& d = t.grad(is);
    const auto& p = *probs;
    for (int r = 0; r < n; ++r) {
      const std::size_t off = static_cast<std::size_t>(r) * m;
      T dot = 0;
      for (int c = 0; c < m; ++c) dot += g[off + c] * p[off + c];
      for (int c = 0; c < m; ++c) d[off + c] += scale * p[off + c] * (g[off + c] - dot);
    }
  });
}

namespace detail {

/// Index of element (c, y, x) of a C x H x W tensor inside its patch token matrix.
inline std::size_t token_index(int c, int y, int x, int w, int p, int channels) {
  const int gw = w / p;
  const std::size_t token = static_cast<std::size_t>(y / p) * gw + x / p;
  const std::size_t d = static_cast<std::size_t>(channels) * p * p;
  return token * d + (static_cast<std::size_t>(c) * p + y % p) * p + x % p;
}

}  // namespace detail

/// C x H x W -> N x (C P P) with tokens ordered row-major over the patch grid.
template <class T>
Var<T> patchify(Var<T> x, int p) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % p || w % p) throw ShapeError("patchify: " + shape_str(x.shape()) + " not a multiple of " + std::to_string(p));
  const int n = (h / p) * (w / p);
  Tensor<T> out({n, c * p * p});
  const auto& xv = x.value();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) out[detail::token_index(ch, y, xx, w, p, c)] = xv.at(ch, y, xx);
  const int ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, c, h, w, p](Tape<T>& t, const Tensor<T>& g) {
    auto& d = t.grad(ix);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) d.at(ch, y, xx) += g[detail::token_index(ch, y, xx, w, p, c)];
  });
}

/// Inverse of patchify.
template <class T>
Var<T> unpatchify(Var<T> tokens, int c, int h, int w, int p) {
  if (tokens.value().size() != static_cast<std::size_t>(c) * h * w) throw ShapeError("unpatchify: size mismatch");
  Tensor<T> out({c, h, w});
  const auto& tv = tokens.value();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) out.at(ch, y, xx) = tv[detail::token_index(ch, y, xx, w, p, c)];
  const int it = tokens.id();
  return tokens.tape().record(std::move(out), {tokens}, [it, c, h, w, p](Tape<T>& t, const Tensor<T>& g) {
    auto& d = t.grad(it);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) d[detail::token_index(ch, y, xx, w, p, c)] += g.at(ch, y, xx);
  });
}

/// Mirror index for reflection padding; folds repeatedly for pads longer than the axis.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

/// Reflection-pads the bottom and right edges up to (ho, wo).
template <class T>
Var<T> reflect_pad(Var<T> x, int ho, int wo) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (ho == h && wo == w) return x;
  if (ho < h || wo < w) throw ShapeError("reflect_pad: target smaller than input");
  Tensor<T> out({c, ho, wo});
  const auto& xv = x.value();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx) out.at(ch, y, xx) = xv.at(ch, reflect_index(y, h), reflect_index(xx, w));
  const int ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, c, h, w, ho, wo](Tape<T>& t, const Tensor<T>& g) {
    auto& d = t.grad(ix);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx) d.at(ch, reflect_index(y, h), reflect_index(xx, w)) += g.at(ch, y, xx);
  });
}

/// Top-left crop to (h, w).
template <class T>
Var<T> crop(Var<T> x, int h, int w) {
  const int c = x.dim(0), hi = x.dim(1), wi = x.dim(2);
  if (h == hi && w == wi) return x;
  if (h > hi || w > wi) throw ShapeError("crop: target larger than input");
  Tensor<T> out({c, h, w});
  const auto& xv = x.value();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) out.at(ch, y, xx) = xv.at(ch, y, xx);
  const int ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, c, h, w](Tape<T>& t, const Tensor<T>& g) {
    auto& d = t.grad(ix);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) d.at(ch, y, xx) += g.at(ch, y, xx);
  });
}

// ---------------------------------------------------------------------------
// Channel attention

/// C x H x W -> C (spatial mean).
template <class T>
Var<T> global_avg_pool(Var<T> x) {
  const int c = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor<T> out({c});
  const auto& xv = x.value();
  for (int ch = 0; ch < c; ++ch) {
    T s = 0;
    for (std::size_t i = 0; i < hw; ++i) s += xv[ch * hw + i];
    out[ch] = s / T(hw);
  }
  const int ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, c, hw](Tape<T>& t, const Tensor<T>& g) {
    auto& d = t.grad(ix);
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i) d[ch * hw + i] += g[ch] / T(hw);
  });
}

/// Multiplies channel c of x (C x H x W) by w[c].
template <class T>
Var<T> scale_channels(Var<T> x, Var<T> wts) {
  const int c = x.dim(0);
  if (wts.value().size() != static_cast<std::size_t>(c)) throw ShapeError("scale_channels: weight count");
  const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  const auto& wv = wts.value();
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < hw; ++i) out[ch * hw + i] = xv[ch * hw + i] * wv[ch];
  const int ix = x.id(), iw = wts.id();
  return x.tape().record(std::move(out), {x, wts}, [ix, iw, c, hw](Tape<T>& t, const Tensor<T>& g) {
    const auto& xv = t.value(ix);
    const auto& wv = t.value(iw);
    if (t.requires_grad(ix)) {
      auto& d = t.grad(ix);
      for (int ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hw; ++i) d[ch * hw + i] += g[ch * hw + i] * wv[ch];
    }
    if (t.requires_grad(iw)) {
      auto& d = t.grad(iw);
      for (int ch = 0; ch < c; ++ch) {
        T s = 0;
        for (std::size_t i = 0; i < hw; ++i) s += g[ch * hw + i] * xv[ch * hw + i];
        d[ch] += s;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions used by the losses

/// scale * mean(|a - b|)
template <class T>
Var<T> mean_abs_diff(Var<T> a, Var<T> b, T scale) {
  detail::check_same(a, b, "mean_abs_diff");
  const auto& av = a.value();
  const auto& bv = b.value();
  T s = 0;
  for (std::size_t i = 0; i < av.size(); ++i) s += std::abs(av[i] - bv[i]);
  const T n = T(av.size());
  const int ia = a.id(), ib = b.id();
  return a.tape().record(Tensor<T>({1}, s * scale / n), {a, b}, [ia, ib, scale, n](Tape<T>& t, const Tensor<T>& g) {
    const auto& av = t.value(ia);
    const auto& bv = t.value(ib);
    const T k = g[0] * scale / n;
    for (std::size_t i = 0; i < av.size(); ++i) {
      const T diff = av[i] - bv[i];
      const T sg = diff > 0 ? k : (diff < 0 ? -k : T(0));
      if (t.requires_grad(ia)) t.grad(ia)[i] += sg;
      if (t.requires_grad(ib)) t.grad(ib)[i] -= sg;
    }
  });
}

/// ||a - b||_2 / divisor. The gradient at a == b is taken as zero.
template <class T>
Var<T> l2_norm_diff(Var<T> a, Var<T> b, T divisor) {
  detail::check_same(a, b, "l2_norm_diff");
  const auto& av = a.value();
  const auto& bv = b.value();
  T s = 0;
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  const T norm = std::sqrt(s);
  const int ia = a.id(), ib = b.id();
  return a.tape().record(Tensor<T>({1}, norm / divisor), {a, b},
                         [ia, ib, norm, divisor](Tape<T>& t, const Tensor<T>& g) {
                           if (norm == T(0)) return;
                           const auto& av = t.value(ia);
                           const auto& bv = t.value(ib);
                           const T k = g[0] / (divisor * norm);
                           for (std::size_t i = 0; i < av.size(); ++i) {
                             const T v = k * (av[i] - bv[i]);
                             if (t.requires_grad(ia)) t.grad(ia)[i] += v;
                             if (t.requires_grad(ib)) t.grad(ib)[i] -= v;
                           }
                         });
}

}  // namespace egmr::ad
