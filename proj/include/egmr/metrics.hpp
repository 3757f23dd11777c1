#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "egmr/tensor.hpp"

namespace egmr {

inline constexpr double kPsnrCeiling = 99.0;

/// PSNR in dB of images in [0, 1], measured on the 0-255 scale.
template <class T>
double psnr(const Tensor<T>& ref, const Tensor<T>& test) {
  require_same_shape(ref, test, "psnr");
  if (ref.size() == 0) throw ShapeError("psnr: empty image");
  double se = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double d = 255.0 * (static_cast<double>(ref[i]) - static_cast<double>(test[i]));
    se += d * d;
  }
  const double mse = se / static_cast<double>(ref.size());
  if (mse == 0.0) return kPsnrCeiling;
  return std::min(kPsnrCeiling, 10.0 * std::log10(255.0 * 255.0 / mse));
}

namespace detail {

inline std::array<double, 11> ssim_window() {
  std::array<double, 11> g{};
  double s = 0;
  for (int i = 0; i < 11; ++i) {
    g[i] = std::exp(-((i - 5) * (i - 5)) / (2.0 * 1.5 * 1.5));
    s += g[i];
  }
  for (auto& v : g) v /= s;
  return g;
}

/// Valid-mode separable filtering of an h x w plane with the SSIM window.
inline std::vector<double> ssim_filter(const std::vector<double>& img, int h, int w) {
  static const auto g = ssim_window();
  const int wo = w - 10, ho = h - 10;
  std::vector<double> tmp(static_cast<std::size_t>(h) * wo), out(static_cast<std::size_t>(ho) * wo);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < wo; ++x) {
      double s = 0;
      for (int k = 0; k < 11; ++k) s += g[k] * img[static_cast<std::size_t>(y) * w + x + k];
      tmp[static_cast<std::size_t>(y) * wo + x] = s;
    }
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < wo; ++x) {
      double s = 0;
      for (int k = 0; k < 11; ++k) s += g[k] * tmp[static_cast<std::size_t>(y + k) * wo + x];
      out[static_cast<std::size_t>(y) * wo + x] = s;
    }
  return out;
}

}  // namespace detail

/// Single-scale SSIM (11x11 Gaussian window, sigma 1.5, K1 0.01, K2 0.03,
/// range 255) per channel over valid window positions, averaged over channels.
template <class T>
double ssim(const Tensor<T>& ref, const Tensor<T>& test) {
  require_same_shape(ref, test, "ssim");
  if (ref.rank() != 3) throw ShapeError("ssim expects C x H x W images");
  const int c = ref.dim(0), h = ref.dim(1), w = ref.dim(2);
  if (h < 11 || w < 11) throw ParameterError("ssim: image smaller than the 11x11 window");
  const double c1 = (0.01 * 255.0) * (0.01 * 255.0), c2 = (0.03 * 255.0) * (0.03 * 255.0);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  double total = 0;
  for (int ch = 0; ch < c; ++ch) {
    std::vector<double> x(hw), y(hw), xx(hw), yy(hw), xy(hw);
    for (std::size_t i = 0; i < hw; ++i) {
      x[i] = 255.0 * static_cast<double>(ref[ch * hw + i]);
      y[i] = 255.0 * static_cast<double>(test[ch * hw + i]);
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = detail::ssim_filter(x, h, w), my = detail::ssim_filter(y, h, w);
    const auto sxx = detail::ssim_filter(xx, h, w), syy = detail::ssim_filter(yy, h, w),
               sxy = detail::ssim_filter(xy, h, w);
    double acc = 0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
      acc += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / c;
}

}  // namespace egmr
