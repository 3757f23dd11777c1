#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "egmr/tensor.hpp"

namespace egmr {

/// One polarity spike. Timestamps are microseconds.
struct Event {
  int x = 0;
  int y = 0;
  int p = 1;  // -1 or +1
  std::int64_t t = 0;

  friend bool operator==(const Event&, const Event&) = default;
};

/// Time-sorted events over the window [t_start, t_end] on an H x W sensor.
/// Window bounds are real-valued so that a stream split at an arbitrary
/// normalized time keeps an exact boundary.
struct EventStream {
  std::vector<Event> events;
  double t_start = 0;
  double t_end = 0;
  int sensor_h = 0;
  int sensor_w = 0;

  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }

  /// Throws CoordinateError / ContractError when an invariant is broken.
  void validate() const {
    if (t_end < t_start) throw ContractError("event window ends before it starts");
    std::int64_t prev = std::numeric_limits<std::int64_t>::min();
    for (std::size_t i = 0; i < events.size(); ++i) {
      const auto& e = events[i];
      if (e.x < 0 || e.x >= sensor_w || e.y < 0 || e.y >= sensor_h) {
        throw CoordinateError("event " + std::to_string(i) + " at (" + std::to_string(e.x) + ", " +
                              std::to_string(e.y) + ") outside " + std::to_string(sensor_w) + "x" +
                              std::to_string(sensor_h) + " sensor");
      }
      if (e.p != 1 && e.p != -1) throw ContractError("event " + std::to_string(i) + " has polarity " + std::to_string(e.p));
      if (e.t < prev) throw ContractError("events not sorted by timestamp at index " + std::to_string(i));
      if (static_cast<double>(e.t) < t_start || static_cast<double>(e.t) > t_end) {
        throw ContractError("event " + std::to_string(i) + " timestamp outside window");
      }
      prev = e.t;
    }
  }

  long signed_mass() const {
    long s = 0;
    for (const auto& e : events) s += e.p;
    return s;
  }
};

/// B x H x W temporal voxel grid; every event spreads its polarity over the two
/// nearest bins with a triangular kernel. Time is normalized by the stream
/// window, so an event at t_start lands fully in bin 0 and one at t_end in bin B-1.
inline Tensor<float> voxelize(const EventStream& stream, int bins, int h, int w) {
  if (bins < 2) throw ParameterError("voxelize: bin count must be >= 2, got " + std::to_string(bins));
  if (stream.sensor_h != h || stream.sensor_w != w) {
    throw ShapeError("voxelize: stream resolution " + std::to_string(stream.sensor_w) + "x" +
                     std::to_string(stream.sensor_h) + " does not match " + std::to_string(w) + "x" + std::to_string(h));
  }
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::vector<double> acc(static_cast<std::size_t>(bins) * hw, 0.0);
  const double span = stream.t_end - stream.t_start;
  for (std::size_t i = 0; i < stream.events.size(); ++i) {
    const auto& e = stream.events[i];
    if (e.x < 0 || e.x >= w || e.y < 0 || e.y >= h) {
      throw CoordinateError("voxelize: event " + std::to_string(i) + " at (" + std::to_string(e.x) + ", " +
                            std::to_string(e.y) + ") outside sensor");
    }
    double pos = span > 0 ? (static_cast<double>(e.t) - stream.t_start) / span * (bins - 1) : 0.0;
    pos = std::clamp(pos, 0.0, static_cast<double>(bins - 1));
    const int k0 = static_cast<int>(std::floor(pos));
    const double frac = pos - k0;
    const std::size_t pix = static_cast<std::size_t>(e.y) * w + e.x;
    acc[k0 * hw + pix] += e.p * (1.0 - frac);
    if (frac > 0 && k0 + 1 < bins) acc[(k0 + 1) * hw + pix] += e.p * frac;
  }
  Tensor<float> grid({bins, h, w});
  for (std::size_t i = 0; i < acc.size(); ++i) grid[i] = static_cast<float>(acc[i]);
  return grid;
}

/// Splits at t_split = t_start + tau (t_end - t_start). Events with t <= t_split
/// go to the first segment.
inline std::pair<EventStream, EventStream> split_at_tau(const EventStream& stream, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ParameterError("split_at_tau: tau must lie in (0, 1), got " + std::to_string(tau));
  const double t_split = stream.t_start + tau * (stream.t_end - stream.t_start);
  EventStream first{{}, stream.t_start, t_split, stream.sensor_h, stream.sensor_w};
  EventStream second{{}, t_split, stream.t_end, stream.sensor_h, stream.sensor_w};
  auto mid = std::partition_point(stream.events.begin(), stream.events.end(),
                                  [t_split](const Event& e) { return static_cast<double>(e.t) <= t_split; });
  first.events.assign(stream.events.begin(), mid);
  second.events.assign(mid, stream.events.end());
  return {std::move(first), std::move(second)};
}

// ---------------------------------------------------------------------------
// Binary event file ("EVT1")
//
// header (16 bytes): "EVT1", sensor_w u16, sensor_h u16, t_start u32, t_end u32
// record (13 bytes): x u16, y u16, p i8, t u64. Little-endian throughout.

inline constexpr std::size_t kEventHeaderBytes = 16;
inline constexpr std::size_t kEventRecordBytes = 13;

namespace detail {

template <class U>
void put_le(std::vector<unsigned char>& buf, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<unsigned char>(static_cast<std::uint64_t>(v) >> (8 * i)));
}

template <class U>
U get_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<U>(v);
}

}  // namespace detail

inline std::vector<unsigned char> encode_events(const EventStream& stream) {
  auto integral_u32 = [](double v) { return v >= 0 && v <= 4294967295.0 && std::floor(v) == v; };
  if (!integral_u32(stream.t_start) || !integral_u32(stream.t_end)) {
    throw ParameterError("event file windows must be whole microseconds within u32 range");
  }
  if (stream.sensor_w < 0 || stream.sensor_w > 65535 || stream.sensor_h < 0 || stream.sensor_h > 65535) {
    throw ParameterError("sensor resolution exceeds u16 range");
  }
  stream.validate();
  std::vector<unsigned char> buf;
  buf.reserve(kEventHeaderBytes + kEventRecordBytes * stream.size());
  for (char c : {'E', 'V', 'T', '1'}) buf.push_back(static_cast<unsigned char>(c));
  detail::put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(stream.sensor_w));
  detail::put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(stream.sensor_h));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(stream.t_start));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(stream.t_end));
  for (const auto& e : stream.events) {
    detail::put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(e.x));
    detail::put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(e.y));
    buf.push_back(static_cast<unsigned char>(static_cast<std::int8_t>(e.p)));
    detail::put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(e.t));
  }
  return buf;
}

inline EventStream decode_events(const std::vector<unsigned char>& buf, const std::string& origin = "<memory>") {
  if (buf.size() < kEventHeaderBytes) throw FormatError(origin + ": truncated header at byte offset 0");
  if (std::memcmp(buf.data(), "EVT1", 4) != 0) throw FormatError(origin + ": bad magic at byte offset 0");
  EventStream s;
  s.sensor_w = detail::get_le<std::uint16_t>(buf.data() + 4);
  s.sensor_h = detail::get_le<std::uint16_t>(buf.data() + 6);
  s.t_start = detail::get_le<std::uint32_t>(buf.data() + 8);
  s.t_end = detail::get_le<std::uint32_t>(buf.data() + 12);
  const std::size_t body = buf.size() - kEventHeaderBytes;
  if (body % kEventRecordBytes != 0) {
    const std::size_t off = kEventHeaderBytes + (body / kEventRecordBytes) * kEventRecordBytes;
    throw FormatError(origin + ": truncated record at byte offset " + std::to_string(off));
  }
  const std::size_t n = body / kEventRecordBytes;
  s.events.reserve(n);
  std::int64_t prev = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = kEventHeaderBytes + i * kEventRecordBytes;
    const unsigned char* r = buf.data() + off;
    Event e;
    e.x = detail::get_le<std::uint16_t>(r);
    e.y = detail::get_le<std::uint16_t>(r + 2);
    e.p = static_cast<std::int8_t>(r[4]);
    const auto t = detail::get_le<std::uint64_t>(r + 5);
    if (e.p != 1 && e.p != -1) {
      throw FormatError(origin + ": polarity " + std::to_string(e.p) + " out of range at byte offset " + std::to_string(off + 4));
    }
    if (e.x >= s.sensor_w || e.y >= s.sensor_h) {
      throw FormatError(origin + ": coordinates outside sensor at byte offset " + std::to_string(off));
    }
    if (t > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
      throw FormatError(origin + ": timestamp overflow at byte offset " + std::to_string(off + 5));
    }
    e.t = static_cast<std::int64_t>(t);
    if (i > 0 && e.t < prev) throw FormatError(origin + ": unsorted timestamp at byte offset " + std::to_string(off + 5));
    if (static_cast<double>(e.t) < s.t_start || static_cast<double>(e.t) > s.t_end) {
      throw FormatError(origin + ": timestamp outside window at byte offset " + std::to_string(off + 5));
    }
    prev = e.t;
    s.events.push_back(e);
  }
  return s;
}

inline void write_events(const EventStream& stream, const std::string& path) {
  const auto buf = encode_events(stream);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("write failed: " + path);
}

inline EventStream read_events(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open event file: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_events(buf, path);
}

}  // namespace egmr
