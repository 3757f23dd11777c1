#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "egmr/ops.hpp"

namespace egmr {

/// Named parameter collection. Parameter addresses are stable for the
/// lifetime of the store, so modules may keep raw pointers into it.
template <class T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Param<T>* add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw ParameterError("duplicate parameter name: " + name);
    auto p = std::make_unique<Param<T>>();
    p->name = name;
    p->value = std::move(value);
    p->zero_grad();
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return params_.back().get();
  }

  Param<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ParameterError("unknown parameter: " + name);
    return *params_[it->second];
  }
  const Param<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ParameterError("unknown parameter: " + name);
    return *params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  Param<T>& operator[](std::size_t i) { return *params_[i]; }
  const Param<T>& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  /// Copies values by name from a store of another precision.
  template <class U>
  void copy_values_from(const ParamStore<U>& other) {
    if (other.size() != size()) throw ParameterError("parameter count mismatch");
    for (std::size_t i = 0; i < size(); ++i) {
      auto& dst = *params_[i];
      const auto& src = other.at(dst.name);
      if (src.value.shape() != dst.value.shape()) throw ShapeError("parameter shape mismatch: " + dst.name);
      dst.value = src.value.template cast<T>();
    }
  }

 private:
  std::vector<std::unique_ptr<Param<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Layers

/// Square-kernel convolution with bias. Weights are He-uniform scaled by
/// `gain`; a zero gain gives an all-zero layer.
template <class T>
struct Conv {
  Param<T>* weight = nullptr;
  Param<T>* bias = nullptr;
  int stride = 1;
  int pad = 1;

  Conv() = default;
  Conv(ParamStore<T>& ps, std::mt19937_64& rng, const std::string& name, int cin, int cout, int k = 3,
       int stride_ = 1, double gain = 1.0)
      : stride(stride_), pad(k / 2) {
    const double fan_in = static_cast<double>(cin) * k * k;
    const double bound = gain * std::sqrt(6.0 / ((1.0 + 0.01) * fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor<T> wv({cout, cin, k, k});
    for (auto& v : wv.values()) v = gain == 0.0 ? T(0) : static_cast<T>(u(rng));
    weight = ps.add(name + ".weight", std::move(wv));
    bias = ps.add(name + ".bias", Tensor<T>({cout}));
  }

  ad::Var<T> operator()(ad::Var<T> x) const {
    auto& t = x.tape();
    return ad::conv2d(x, t.param(*weight), t.param(*bias), stride, pad);
  }
};

/// Dense map on row vectors: N x in -> N x out.
template <class T>
struct Dense {
  Param<T>* weight = nullptr;
  Param<T>* bias = nullptr;

  Dense() = default;
  Dense(ParamStore<T>& ps, std::mt19937_64& rng, const std::string& name, int in, int out, double gain = 1.0) {
    const double bound = gain * std::sqrt(3.0 / in);
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor<T> wv({in, out});
    for (auto& v : wv.values()) v = gain == 0.0 ? T(0) : static_cast<T>(u(rng));
    weight = ps.add(name + ".weight", std::move(wv));
    bias = ps.add(name + ".bias", Tensor<T>({out}));
  }

  ad::Var<T> operator()(ad::Var<T> x) const {
    auto& t = x.tape();
    return ad::linear(x, t.param(*weight), t.param(*bias));
  }
};

template <class T>
ad::Var<T> lrelu(ad::Var<T> x) {
  return ad::leaky_relu(x, T(0.1));
}

// ---------------------------------------------------------------------------
// Checkpoint container
//
// "EGCK" | u32 version | u32 fingerprint length | fingerprint bytes |
// u32 parameter count | per parameter: u32 name length, name, u32 rank,
// rank x u32 dims, float32 data. All integers little-endian.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError(path + ": truncated checkpoint");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void save_checkpoint(const ParamStore<T>& ps, const std::string& fingerprint, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint: " + path);
  os.write("EGCK", 4);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(fingerprint.size()));
  os.write(fingerprint.data(), static_cast<std::streamsize>(fingerprint.size()));
  detail::put_u32(os, static_cast<std::uint32_t>(ps.size()));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& p = ps[i];
    detail::put_u32(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(p.value.rank()));
    for (int d : p.value.shape()) detail::put_u32(os, static_cast<std::uint32_t>(d));
    for (T v : p.value.values()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      detail::put_u32(os, bits);
    }
  }
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

/// Loads values into an already-declared store; the fingerprint must match.
template <class T>
void load_checkpoint(ParamStore<T>& ps, const std::string& fingerprint, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "EGCK", 4) != 0) throw FormatError(path + ": bad checkpoint magic");
  if (detail::get_u32(is, path) != kCheckpointVersion) throw FormatError(path + ": unsupported checkpoint version");
  std::string fp(detail::get_u32(is, path), '\0');
  if (!is.read(fp.data(), static_cast<std::streamsize>(fp.size()))) throw FormatError(path + ": truncated fingerprint");
  if (fp != fingerprint) {
    throw FormatError(path + ": config fingerprint mismatch (checkpoint '" + fp + "', model '" + fingerprint + "')");
  }
  const std::uint32_t count = detail::get_u32(is, path);
  if (count != ps.size()) throw FormatError(path + ": parameter count mismatch");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(detail::get_u32(is, path), '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name.size()))) throw FormatError(path + ": truncated name");
    auto& p = ps.at(name);
    const std::uint32_t rank = detail::get_u32(is, path);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(detail::get_u32(is, path));
    if (shape != p.value.shape()) throw FormatError(path + ": shape mismatch for " + name);
    for (auto& v : p.value.values()) {
      const std::uint32_t bits = detail::get_u32(is, path);
      float f;
      std::memcpy(&f, &bits, 4);
      v = static_cast<T>(f);
    }
  }
}

}  // namespace egmr
