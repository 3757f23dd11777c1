#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "egmr/params.hpp"

namespace egmr {

/// Cosine annealing from lr_max at step 0 to lr_min at step total - 1.
inline double cosine_lr(long step, long total, double lr_max, double lr_min) {
  if (total <= 1) return lr_max;
  const double p = std::clamp(static_cast<double>(step) / static_cast<double>(total - 1), 0.0, 1.0);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * p));
}

/// Adam with decoupled weight decay, applied to every parameter.
template <class T>
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
  };

  explicit AdamW(ParamStore<T>& ps, Options opt = {}) : ps_(&ps), opt_(opt) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
      m_.emplace_back(ps[i].value.size(), 0.0);
      v_.emplace_back(ps[i].value.size(), 0.0);
    }
  }

  long steps() const { return t_; }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < ps_->size(); ++k) {
      auto& p = (*ps_)[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = static_cast<double>(p.grad[i]);
        m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g;
        v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g * g;
        const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt_.eps);
        const double w = static_cast<double>(p.value[i]);
        p.value[i] = static_cast<T>(w - lr * (update + opt_.weight_decay * w));
      }
    }
  }

 private:
  ParamStore<T>* ps_;
  Options opt_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace egmr
