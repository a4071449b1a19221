#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "daveqn/runtime.hpp"

namespace daveqn {
namespace net {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close_fd();
      fd_ = o.fd_;
      o.fd_ = -1;
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close_fd(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }

 private:
  void close_fd() {
    if (fd_ >= 0) ::close(fd_);
  }
  int fd_ = -1;
};

inline void send_all(int fd, const std::uint8_t* data, std::size_t size) {
  std::size_t sent = 0;
  while (sent < size) {
    ssize_t k = ::send(fd, data + sent, size - sent, MSG_NOSIGNAL);
    if (k <= 0) throw MalformedFrame("send failed: connection lost");
    sent += static_cast<std::size_t>(k);
  }
}

inline void send_message(int fd, const Message& m) {
  auto bytes = encode(m);
  send_all(fd, bytes.data(), bytes.size());
}

inline void recv_exact(int fd, std::uint8_t* buf, std::size_t size) {
  std::size_t got = 0;
  while (got < size) {
    ssize_t k = ::recv(fd, buf + got, size - got, 0);
    if (k <= 0) throw MalformedFrame("recv failed: connection lost");
    got += static_cast<std::size_t>(k);
  }
}

/// Read one complete frame. Frame length is implied by the tag and the
/// in-frame dimension field.
inline Message recv_message(int fd) {
  std::uint8_t tag;
  recv_exact(fd, &tag, 1);
  std::vector<std::uint8_t> frame{tag};
  auto read_more = [&](std::size_t k) {
    std::size_t old = frame.size();
    frame.resize(old + k);
    recv_exact(fd, frame.data() + old, k);
  };
  auto u32_at = [&](std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(frame[off + i]) << (8 * i);
    return v;
  };
  if (tag == wire::kTagUpdate) {
    read_more(4 + 1 + 4);  // worker_id, skip, p
    std::uint32_t p = u32_at(6);
    if (p == 0 || p > (1u << 24)) throw MalformedFrame("implausible dimension");
    read_more(16 + 24ull * p);
  } else if (tag == wire::kTagAssign) {
    read_more(8 + 4);  // t, p
    std::uint32_t p = u32_at(9);
    if (p == 0 || p > (1u << 24)) throw MalformedFrame("implausible dimension");
    read_more(8ull * p);
  } else if (tag != wire::kTagStop) {
    throw MalformedFrame("unknown tag");
  }
  return decode(frame);
}

inline Socket listen_on(const std::string& addr, int& port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw ConfigError("socket() failed");
  Socket sock(fd);
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, addr.c_str(), &sa.sin_addr) != 1)
    throw ConfigError("bad listen address " + addr);
  if (::bind(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0)
    throw ConfigError("bind failed on " + addr + ":" + std::to_string(port));
  if (::listen(fd, 64) != 0) throw ConfigError("listen failed");
  socklen_t len = sizeof sa;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&sa), &len);
  port = ntohs(sa.sin_port);
  return sock;
}

inline Socket connect_to(const std::string& addr, int port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw ConfigError("socket() failed");
  Socket sock(fd);
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, addr.c_str(), &sa.sin_addr) != 1)
    throw ConfigError("bad address " + addr);
  if (::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0)
    throw ConfigError("connect failed to " + addr + ":" + std::to_string(port));
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return sock;
}

}  // namespace net

struct TcpMasterConfig {
  std::string listen_addr = "127.0.0.1";
  int port = 0;  // 0: pick an ephemeral port; updated to the bound port
  int n_expected = 1;
  ObjectiveSpec spec;
  std::vector<Shard> shards;  // master-side copy, for reference metrics only
  Vector x0;                  // empty means zeros
  std::int64_t max_updates = 1000;
  std::optional<double> target_subopt;
  std::optional<Reference> reference;
  // Signals "bound and listening" before blocking in accept; used to start
  // in-process workers without races.
  std::function<void(int port)> on_listening;
};

struct TcpRunResult {
  Trace trace;
  MasterState master;
  std::vector<int> schedule;  // observed arrival order
};

/// Master event loop over real sockets. Handshake: accept n connections, send
/// each worker x0, collect init messages carrying grad f_i(x0) and the
/// scaled-identity factor of B_i^0 in the alpha field, then assign x0 to all
/// and serve arrivals one message per logical tick until termination.
inline TcpRunResult run_master_tcp(TcpMasterConfig config) {
  int n = config.n_expected;
  require(n >= 1, "run_master_tcp: need at least one worker");
  int p = config.shards.empty() ? static_cast<int>(config.x0.size()) : config.shards.front().dim;
  require(p >= 1, "run_master_tcp: unknown dimension");
  Vector x0 = config.x0.empty() ? Vector(p, 0.0) : config.x0;

  net::Socket listener = net::listen_on(config.listen_addr, config.port);
  if (config.on_listening) config.on_listening(config.port);

  std::map<int, net::Socket> conns;  // worker_id -> socket
  std::vector<SymMatrix> B0s(n);
  std::vector<Vector> grads0(n);
  for (int k = 0; k < n; ++k) {
    int fd = ::accept(listener.fd(), nullptr, nullptr);
    if (fd < 0) throw ConfigError("accept failed");
    net::Socket conn(fd);
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    net::send_message(fd, AssignMessage{0, x0});
    Message m = net::recv_message(fd);
    const auto* init = std::get_if<UpdateMessage>(&m);
    if (!init || !init->skip) throw MalformedFrame("expected init message");
    int id = static_cast<int>(init->worker_id);
    if (id < 0 || id >= n || conns.count(id))
      throw ConfigError("bad or duplicate worker id in handshake");
    B0s[id] = SymMatrix(p, init->alpha);
    grads0[id] = init->y;
    conns.emplace(id, std::move(conn));
  }

  TcpRunResult res;
  res.master = master_init(B0s, x0, grads0);
  DelayLedger ledger(n);
  EpochTracker tracker(n);

  std::map<int, int> outstanding;  // assignments in flight per worker
  for (auto& [id, conn] : conns) {
    net::send_message(conn.fd(), AssignMessage{0, x0});
    outstanding[id] = 1;
  }

  std::vector<pollfd> pfds;
  std::vector<int> pfd_worker;
  for (auto& [id, conn] : conns) {
    pfds.push_back({conn.fd(), POLLIN, 0});
    pfd_worker.push_back(id);
  }

  bool done = false;
  while (!done) {
    if (res.master.t >= config.max_updates) break;
    if (::poll(pfds.data(), pfds.size(), -1) < 0) throw ConfigError("poll failed");
    for (std::size_t k = 0; k < pfds.size() && !done; ++k) {
      if (!(pfds[k].revents & (POLLIN | POLLHUP))) continue;
      int who = pfd_worker[k];
      Message m = net::recv_message(pfds[k].fd);
      const auto* upd = std::get_if<UpdateMessage>(&m);
      if (!upd) throw MalformedFrame("expected UPDATE frame");
      --outstanding[who];
      master_apply(res.master, *upd);
      std::int64_t t = res.master.t;
      auto delays = ledger.on_update(who, t);
      tracker.on_update(who, t);
      res.schedule.push_back(who);

      TraceRow row;
      row.t = t;
      row.wall_s = static_cast<double>(t);
      row.worker = who;
      row.d = delays.d;
      row.D = delays.D;
      row.epoch = tracker.epoch();
      row.subopt = std::numeric_limits<double>::quiet_NaN();
      row.residual = std::numeric_limits<double>::quiet_NaN();
      if (!all_finite(res.master.x)) {
        res.trace.aborted_non_finite = true;
        res.trace.rows.push_back(row);
        done = true;
        break;
      }
      if (config.reference && !config.shards.empty()) {
        row.subopt = pooled_value(config.spec, config.shards, res.master.x) -
                     config.reference->f_star;
        row.residual = norm2(res.master.x - config.reference->x_star);
      }
      res.trace.rows.push_back(row);

      if (res.master.t >= config.max_updates ||
          (config.target_subopt && config.reference && row.subopt <= *config.target_subopt)) {
        done = true;
        break;
      }
      net::send_message(pfds[k].fd, AssignMessage{static_cast<std::uint64_t>(t), res.master.x});
      ++outstanding[who];
      break;  // one message per logical tick; re-poll for arrival order
    }
  }
  // Drain in-flight replies, stop every worker, then wait for its close so
  // the STOP frame is never torn down by a reset.
  for (auto& [id, conn] : conns) {
    try {
      while (outstanding[id] > 0) {
        net::recv_message(conn.fd());
        --outstanding[id];
      }
      net::send_message(conn.fd(), StopMessage{});
      std::uint8_t scratch;
      while (::recv(conn.fd(), &scratch, 1, 0) > 0) {
      }
    } catch (const MalformedFrame&) {
      // worker already gone; the run is over either way
    }
  }
  res.trace.epoch_boundaries = tracker.boundaries();
  res.trace.wall_s = static_cast<double>(res.master.t);
  return res;
}

struct TcpWorkerConfig {
  std::string master_addr = "127.0.0.1";
  int port = 0;
  int worker_id = 0;
  ObjectiveSpec spec;
  Shard shard;
  double init_scale = 0.0;  // <= 0: smoothness estimate
};

/// Worker loop: handshake on the first assignment, then compute/send rounds
/// until a STOP frame. Returns the number of update rounds performed.
inline std::int64_t run_worker_tcp(const TcpWorkerConfig& config) {
  net::Socket conn = net::connect_to(config.master_addr, config.port);
  Message first = net::recv_message(conn.fd());
  const auto* assign = std::get_if<AssignMessage>(&first);
  if (!assign) throw MalformedFrame("expected initial ASSIGN");
  double c = config.init_scale > 0.0 ? config.init_scale
                                     : smoothness_estimate(config.spec, config.shard);
  WorkerState state = make_worker(config.worker_id, config.spec, config.shard, assign->x,
                                  SymMatrix(config.shard.dim, c));
  UpdateMessage hello;
  hello.worker_id = static_cast<std::uint32_t>(config.worker_id);
  hello.skip = true;
  hello.alpha = c;
  hello.delta_u = state.u_local;
  hello.y = state.grad_z;
  hello.q = Vector(config.shard.dim, 0.0);
  net::send_message(conn.fd(), hello);

  while (true) {
    Message m = net::recv_message(conn.fd());
    if (std::holds_alternative<StopMessage>(m)) break;
    const auto* a = std::get_if<AssignMessage>(&m);
    if (!a) throw MalformedFrame("expected ASSIGN or STOP");
    UpdateMessage msg = worker_compute(state, a->x, config.spec, config.shard);
    net::send_message(conn.fd(), msg);
  }
  return state.updates_done;
}

}  // namespace daveqn
