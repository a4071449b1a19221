#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <variant>
#include <vector>

#include "daveqn/linalg.hpp"

namespace daveqn {

/// The five O(p) quantities a worker ships per round. skip=true marks a
/// degenerate curvature pair: the master refreshes u and g but leaves the
/// maintained inverse untouched.
struct UpdateMessage {
  std::uint32_t worker_id = 0;
  bool skip = false;
  double alpha = 0.0;
  double beta = 0.0;
  Vector delta_u;
  Vector y;
  Vector q;

  bool operator==(const UpdateMessage&) const = default;
};

struct AssignMessage {
  std::uint64_t t = 0;
  Vector x;

  bool operator==(const AssignMessage&) const = default;
};

struct StopMessage {
  bool operator==(const StopMessage&) const = default;
};

using Message = std::variant<UpdateMessage, AssignMessage, StopMessage>;

namespace wire {

constexpr std::uint8_t kTagUpdate = 0x01;
constexpr std::uint8_t kTagAssign = 0x02;
constexpr std::uint8_t kTagStop = 0x03;

inline void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  Vector vec(std::uint32_t p) {
    Vector v(p);
    for (std::uint32_t i = 0; i < p; ++i) v[i] = f64();
    return v;
  }
  bool exhausted() const { return pos_ == size_; }

 private:
  void need(std::size_t k) {
    if (pos_ + k > size_) throw MalformedFrame("truncated frame");
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace wire

inline std::vector<std::uint8_t> encode(const UpdateMessage& m) {
  std::vector<std::uint8_t> out;
  wire::put_u8(out, wire::kTagUpdate);
  wire::put_u32(out, m.worker_id);
  wire::put_u8(out, m.skip ? 1 : 0);
  wire::put_u32(out, static_cast<std::uint32_t>(m.delta_u.size()));
  wire::put_f64(out, m.alpha);
  wire::put_f64(out, m.beta);
  for (double v : m.delta_u) wire::put_f64(out, v);
  for (double v : m.y) wire::put_f64(out, v);
  for (double v : m.q) wire::put_f64(out, v);
  return out;
}

inline std::vector<std::uint8_t> encode(const AssignMessage& m) {
  std::vector<std::uint8_t> out;
  wire::put_u8(out, wire::kTagAssign);
  wire::put_u64(out, m.t);
  wire::put_u32(out, static_cast<std::uint32_t>(m.x.size()));
  for (double v : m.x) wire::put_f64(out, v);
  return out;
}

inline std::vector<std::uint8_t> encode(const StopMessage&) {
  return {wire::kTagStop};
}

inline std::vector<std::uint8_t> encode(const Message& m) {
  return std::visit([](const auto& v) { return encode(v); }, m);
}

inline Message decode(const std::uint8_t* data, std::size_t size) {
  wire::Reader r(data, size);
  std::uint8_t tag = r.u8();
  if (tag == wire::kTagUpdate) {
    UpdateMessage m;
    m.worker_id = r.u32();
    m.skip = r.u8() != 0;
    std::uint32_t p = r.u32();
    m.alpha = r.f64();
    m.beta = r.f64();
    m.delta_u = r.vec(p);
    m.y = r.vec(p);
    m.q = r.vec(p);
    if (!r.exhausted()) throw MalformedFrame("trailing bytes in UPDATE frame");
    return m;
  }
  if (tag == wire::kTagAssign) {
    AssignMessage m;
    m.t = r.u64();
    std::uint32_t p = r.u32();
    m.x = r.vec(p);
    if (!r.exhausted()) throw MalformedFrame("trailing bytes in ASSIGN frame");
    return m;
  }
  if (tag == wire::kTagStop) {
    if (!r.exhausted()) throw MalformedFrame("trailing bytes in STOP frame");
    return StopMessage{};
  }
  throw MalformedFrame("unknown tag");
}

inline Message decode(const std::vector<std::uint8_t>& bytes) {
  return decode(bytes.data(), bytes.size());
}

/// Per-worker exchange times defining d_i^t and the double delay D_i^t.
/// An update at t counts as a communication at t, so the acting worker's
/// d_i^t is 0 at its own update instant; for all other t the delay is
/// t minus the last exchange time.
class DelayLedger {
 public:
  /// Workers' initial exchanges are staggered at t = 0, -1, -2, ... so the
  /// exchange instants stay pairwise distinct from the start.
  explicit DelayLedger(int n) {
    for (int i = 0; i < n; ++i) {
      last_[i] = -static_cast<std::int64_t>(i);
      prev_[i] = -static_cast<std::int64_t>(i);
    }
  }

  struct Delays {
    std::int64_t d;
    std::int64_t D;
  };

  /// Record worker i's update at time t; returns (d_i^t, D_i^t) at the
  /// update instant, i.e. d = 0 and D = t - penultimate exchange.
  Delays on_update(int worker_id, std::int64_t t) {
    auto it = last_.find(worker_id);
    if (it == last_.end()) throw DimensionMismatch("ledger: unknown worker");
    prev_[worker_id] = it->second;
    it->second = t;
    return {0, t - prev_[worker_id]};
  }

  std::int64_t delay_of(int worker_id, std::int64_t t) const { return t - last_.at(worker_id); }
  std::int64_t double_delay_of(int worker_id, std::int64_t t) const {
    return t - prev_.at(worker_id);
  }

  double average_delay(std::int64_t t) const {
    double s = 0.0;
    for (const auto& [i, last] : last_) s += static_cast<double>(t - last);
    return s / static_cast<double>(last_.size());
  }

 private:
  std::map<int, std::int64_t> last_;
  std::map<int, std::int64_t> prev_;
};

/// Epoch markers: T_1 = 0, T_{m+1} = first t at which every worker has made
/// at least two updates on [T_m, t]. The boundary update at t opens the next
/// interval's count as well.
class EpochTracker {
 public:
  explicit EpochTracker(int n) : counts_(n, 0) { boundaries_.push_back(0); }

  /// Returns T_{m+1} when the update at t closes epoch m.
  std::optional<std::int64_t> on_update(int worker_id, std::int64_t t) {
    ++counts_.at(worker_id);
    bool complete = true;
    for (int c : counts_)
      if (c < 2) complete = false;
    if (!complete) return std::nullopt;
    boundaries_.push_back(t);
    std::fill(counts_.begin(), counts_.end(), 0);
    counts_[worker_id] = 1;  // the boundary update also lands in [T_{m+1}, .]
    return t;
  }

  /// Current epoch index m (1-based; t in [T_m, T_{m+1}) is epoch m).
  int epoch() const { return static_cast<int>(boundaries_.size()); }

  const std::vector<std::int64_t>& boundaries() const { return boundaries_; }

 private:
  std::vector<int> counts_;
  std::vector<std::int64_t> boundaries_;  // T_1, T_2, ...
};

}  // namespace daveqn
