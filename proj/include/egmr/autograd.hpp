#pragma once

#include <cassert>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "egmr/tensor.hpp"

namespace egmr {

/// A trainable tensor with its accumulated gradient.
template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

namespace ad {

template <class T>
class Tape;

/// Handle to a value recorded on a Tape.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape<T>& tape() const { return *tape_; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const std::vector<int>& shape() const { return value().shape(); }
  int dim(int i) const { return value().dim(i); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode recording of a computation. Nodes are appended in evaluation
/// order, so reverse iteration is a valid topological order for backward.
template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> constant(Tensor<T> v) { return push(std::move(v), false, nullptr, nullptr); }

  /// Leaf whose gradient can be read back with grad() after backward().
  Var<T> leaf(Tensor<T> v) { return push(std::move(v), grad_enabled_, nullptr, nullptr); }

  /// Leaf bound to a parameter; backward() accumulates into param.grad.
  Var<T> param(Param<T>& p) { return push(p.value, grad_enabled_, nullptr, &p); }

  /// Records an op output. `fn` is kept only when some parent needs a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, Backward fn) {
    bool req = false;
    if (grad_enabled_) {
      for (const auto& p : parents) req = req || requires_grad(p.id());
    }
    return push(std::move(value), req, req ? std::move(fn) : nullptr, nullptr);
  }

  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& parents, Backward fn) {
    bool req = false;
    if (grad_enabled_) {
      for (const auto& p : parents) req = req || requires_grad(p.id());
    }
    return push(std::move(value), req, req ? std::move(fn) : nullptr, nullptr);
  }

  const Tensor<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor<T>& grad(int id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  bool has_grad(int id) const {
    const auto& n = nodes_[static_cast<std::size_t>(id)];
    return n.grad.size() == n.value.size() && !n.grad.shape().empty();
  }

  /// Seeds d(root)/d(root) = 1 and propagates to every node that needs it.
  void backward(Var<T> root) {
    if (root.value().size() != 1) throw ShapeError("backward() requires a scalar root");
    if (!requires_grad(root.id())) return;
    grad(root.id())[0] = T(1);
    for (int id = root.id(); id >= 0; --id) {
      auto& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.requires_grad || !has_grad(id)) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.sink) {
        Param<T>& p = *n.sink;
        if (!p.grad.same_shape(p.value)) p.zero_grad();
        for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[i];
      }
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Backward backward;
    Param<T>* sink = nullptr;
  };

  Var<T> push(Tensor<T> v, bool req, Backward fn, Param<T>* sink) {
    nodes_.push_back(Node{std::move(v), Tensor<T>(), req, std::move(fn), sink});
    return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
  }

  bool grad_enabled_;
  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Elementwise ops

namespace detail {

template <class T>
void check_same(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <class T, class F>
Tensor<T> map(const Tensor<T>& x, F f) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

}  // namespace detail

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::check_same(a, b, "add");
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const int ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, const Tensor<T>& g) {
    for (int id : {ia, ib}) {
      if (!t.requires_grad(id)) continue;
      auto& d = t.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::check_same(a, b, "sub");
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const int ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(ia)) {
      auto& d = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      auto& d = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::check_same(a, b, "mul");
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const int ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, const Tensor<T>& g) {
    const auto& av = t.value(ia);
    const auto& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      auto& d = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      auto& d = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = detail::map(a.value(), [s](T v) { return v * s; });
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, s](Tape<T>& t, const Tensor<T>& g) {
    auto& d = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * s;
  });
}

/// 1 - a
template <class T>
Var<T> one_minus(Var<T> a) {
  Tensor<T> out = detail::map(a.value(), [](T v) { return T(1) - v; });
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape<T>& t, const Tensor<T>& g) {
    auto& d = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
  });
}

template <class T>
Var<T> leaky_relu(Var<T> a, T slope = T(0.1)) {
  Tensor<T> out = detail::map(a.value(), [slope](T v) { return v > 0 ? v : v * slope; });
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, slope](Tape<T>& t, const Tensor<T>& g) {
    const auto& x = t.value(ia);
    auto& d = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += x[i] > 0 ? g[i] : g[i] * slope;
  });
}

template <class T>
T sigmoid_scalar(T v) {
  return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  Tensor<T> out = detail::map(a.value(), [](T v) { return sigmoid_scalar(v); });
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape<T>& t, const Tensor<T>& g) {
    const auto& x = t.value(ia);
    auto& d = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = sigmoid_scalar(x[i]);
      d[i] += g[i] * s * (T(1) - s);
    }
  });
}

template <class T>
Var<T> tanh(Var<T> a) {
  Tensor<T> out = detail::map(a.value(), [](T v) { return std::tanh(v); });
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape<T>& t, const Tensor<T>& g) {
    const auto& x = t.value(ia);
    auto& d = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = std::tanh(x[i]);
      d[i] += g[i] * (T(1) - y * y);
    }
  });
}

/// Sum of all elements, as a 1-element tensor.
template <class T>
Var<T> sum(Var<T> a) {
  Tensor<T> out({1}, a.value().sum());
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape<T>& t, const Tensor<T>& g) {
    auto& d = t.grad(ia);
    for (auto& v : d.values()) v += g[0];
  });
}

/// Weighted sum of scalar vars.
template <class T>
Var<T> weighted_sum(const std::vector<Var<T>>& xs, const std::vector<T>& w) {
  if (xs.size() != w.size() || xs.empty()) throw ParameterError("weighted_sum: size mismatch");
  T total = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].value().size() != 1) throw ShapeError("weighted_sum expects scalars");
    total += w[i] * xs[i].value()[0];
  }
  std::vector<int> ids;
  for (const auto& x : xs) ids.push_back(x.id());
  return xs[0].tape().record(Tensor<T>({1}, total), xs, [ids, w](Tape<T>& t, const Tensor<T>& g) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (t.requires_grad(ids[i])) t.grad(ids[i])[0] += g[0] * w[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Channel plumbing on C x H x W values

template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const int h = xs[0].dim(1), w = xs[0].dim(2);
  int c = 0;
  for (const auto& x : xs) {
    if (x.value().rank() != 3 || x.dim(1) != h || x.dim(2) != w) {
      throw ShapeError("concat_channels: spatial mismatch " + shape_str(x.shape()) + " vs " +
                       shape_str(xs[0].shape()));
    }
    c += x.dim(0);
  }
  Tensor<T> out({c, h, w});
  std::size_t off = 0;
  std::vector<int> ids;
  std::vector<std::size_t> offsets;
  for (const auto& x : xs) {
    std::copy(x.value().data(), x.value().data() + x.value().size(), out.data() + off);
    ids.push_back(x.id());
    offsets.push_back(off);
    off += x.value().size();
  }
  return xs[0].tape().record(std::move(out), xs, [ids, offsets](Tape<T>& t, const Tensor<T>& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      auto& d = t.grad(ids[k]);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[offsets[k] + i];
    }
  });
}

template <class T>
Var<T> slice_channels(Var<T> x, int c0, int c1) {
  if (c0 < 0 || c1 > x.dim(0) || c0 >= c1) throw ShapeError("slice_channels: bad range");
  Tensor<T> out = channels(x.value(), c0, c1);
  const std::size_t off = static_cast<std::size_t>(c0) * x.dim(1) * x.dim(2);
  const int ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, off](Tape<T>& t, const Tensor<T>& g) {
    auto& d = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) d[off + i] += g[i];
  });
}

/// img (C x H x W) times map (1 x H x W) broadcast over channels.
template <class T>
Var<T> mul_map(Var<T> img, Var<T> map) {
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (map.value().rank() != 3 || map.dim(0) != 1 || map.dim(1) != h || map.dim(2) != w) {
    throw ShapeError("mul_map: map " + shape_str(map.shape()) + " incompatible with " + shape_str(img.shape()));
  }
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor<T> out(img.shape());
  const auto& iv = img.value();
  const auto& mv = map.value();
  for (int k = 0; k < c; ++k)
    for (std::size_t i = 0; i < hw; ++i) out[k * hw + i] = iv[k * hw + i] * mv[i];
  const int ii = img.id(), im = map.id();
  return img.tape().record(std::move(out), {img, map}, [ii, im, c, hw](Tape<T>& t, const Tensor<T>& g) {
    const auto& iv = t.value(ii);
    const auto& mv = t.value(im);
    if (t.requires_grad(ii)) {
      auto& d = t.grad(ii);
      for (int k = 0; k < c; ++k)
        for (std::size_t i = 0; i < hw; ++i) d[k * hw + i] += g[k * hw + i] * mv[i];
    }
    if (t.requires_grad(im)) {
      auto& d = t.grad(im);
      for (int k = 0; k < c; ++k)
        for (std::size_t i = 0; i < hw; ++i) d[i] += g[k * hw + i] * iv[k * hw + i];
    }
  });
}

/// Normalizes a 2 x H x W logit pair to a pixelwise convex pair.
template <class T>
Var<T> softmax_pair(Var<T> logits) {
  if (logits.value().rank() != 3 || logits.dim(0) != 2) throw ShapeError("softmax_pair expects 2 x H x W");
  const std::size_t hw = static_cast<std::size_t>(logits.dim(1)) * logits.dim(2);
  const auto& l = logits.value();
  Tensor<T> out(l.shape());
  for (std::size_t i = 0; i < hw; ++i) {
    const T p0 = sigmoid_scalar(l[i] - l[hw + i]);
    out[i] = p0;
    out[hw + i] = T(1) - p0;
  }
  const int il = logits.id();
  return logits.tape().record(std::move(out), {logits}, [il, hw](Tape<T>& t, const Tensor<T>& g) {
    const auto& l = t.value(il);
    auto& d = t.grad(il);
    for (std::size_t i = 0; i < hw; ++i) {
      const T p0 = sigmoid_scalar(l[i] - l[hw + i]);
      // d p0 / d(l0 - l1) = p0 (1 - p0); p1 = 1 - p0.
      const T dz = (g[i] - g[hw + i]) * p0 * (T(1) - p0);
      d[i] += dz;
      d[hw + i] -= dz;
    }
  });
}

}  // namespace ad
}  // namespace egmr
