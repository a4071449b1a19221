#pragma once

#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <utility>
#include <queue>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "daveqn/bfgs.hpp"
#include "daveqn/objective.hpp"
#include "daveqn/protocol.hpp"

namespace daveqn {

struct FixedRoundRobin {};
struct UniformBounded {
  double d = 1.0;
};
struct HeavyTailBoundedMean {
  double mean_cap = 4.0;
};
/// Replay of an explicit acting-worker sequence (e.g. an observed TCP
/// arrival order). Wall time is the step index.
struct FixedSchedule {
  std::vector<int> order;
};

using DelayModel = std::variant<FixedRoundRobin, UniformBounded, HeavyTailBoundedMean,
                                FixedSchedule>;

struct Reference {
  Vector x_star;
  double f_star = 0.0;
};

struct TraceRow {
  std::int64_t t = 0;
  double wall_s = 0.0;
  int worker = 0;
  std::int64_t d = 0;
  std::int64_t D = 0;
  int epoch = 0;
  double subopt = 0.0;    // NaN when no reference is bound
  double residual = 0.0;  // NaN when no reference is bound
  // Ledger snapshots after this event, for property checks; not serialized.
  std::vector<std::int64_t> all_d;
  std::vector<std::int64_t> all_D;
  double avg_delay = 0.0;
};

struct Trace {
  std::vector<TraceRow> rows;
  std::vector<std::int64_t> epoch_boundaries;  // T_1, T_2, ...
  bool aborted_non_finite = false;
  double wall_s = 0.0;
};

inline std::string trace_csv_header() { return "t,wall_s,worker,d,D,epoch,subopt,residual"; }

inline std::string to_csv(const TraceRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%.17g,%d,%lld,%lld,%d,%.17g,%.17g",
                static_cast<long long>(r.t), r.wall_s, r.worker, static_cast<long long>(r.d),
                static_cast<long long>(r.D), r.epoch, r.subopt, r.residual);
  return buf;
}

inline std::string to_csv(const Trace& trace) {
  std::string out = trace_csv_header() + "\n";
  for (const auto& r : trace.rows) out += to_csv(r) + "\n";
  return out;
}

struct SimConfig {
  ObjectiveSpec spec;
  std::vector<Shard> shards;
  Vector x0;  // empty means zeros
  DelayModel delay_model = FixedRoundRobin{};
  std::uint64_t seed = 0;
  std::int64_t max_updates = 10000;
  std::optional<double> target_subopt;
  InitMode init_mode = InitMode::ScaledIdentity;
  std::optional<double> init_scale;  // nullopt: per-shard smoothness estimate
  std::optional<Reference> reference;
};

struct SimResult {
  Trace trace;
  MasterState master;
  std::vector<WorkerState> workers;
  std::vector<int> schedule;  // acting-worker sequence, one entry per update
};

using SimObserver =
    std::function<void(const MasterState&, const std::vector<WorkerState>&, const TraceRow&)>;

/// Pooled objective f(x) = (1/n) sum_i f_i(x).
inline double pooled_value(const ObjectiveSpec& spec, const std::vector<Shard>& shards,
                           const Vector& x) {
  double s = 0.0;
  for (const auto& sh : shards) s += value(spec, sh, x);
  return s / static_cast<double>(shards.size());
}

inline Vector pooled_grad(const ObjectiveSpec& spec, const std::vector<Shard>& shards,
                          const Vector& x) {
  Vector g(x.size(), 0.0);
  for (const auto& sh : shards) axpy(1.0, grad(spec, sh, x), g);
  for (double& v : g) v *= 1.0 / static_cast<double>(shards.size());
  return g;
}

inline SymMatrix pooled_hessian(const ObjectiveSpec& spec, const std::vector<Shard>& shards,
                                const Vector& x) {
  SymMatrix H(static_cast<int>(x.size()));
  for (const auto& sh : shards) H += hessian(spec, sh, x);
  H *= 1.0 / static_cast<double>(shards.size());
  return H;
}

namespace detail {

class DurationSampler {
 public:
  DurationSampler(const DelayModel& model, int n, std::uint64_t seed)
      : model_(model), n_(n), rng_(seed) {}

  // Compute duration for worker i's next job. First jobs are staggered so
  // the initial round has distinct completion instants.
  double next(int worker, bool first_job) {
    if (std::holds_alternative<FixedRoundRobin>(model_)) {
      return first_job ? static_cast<double>(worker + 1) : static_cast<double>(n_);
    }
    if (const auto* u = std::get_if<UniformBounded>(&model_)) {
      if (u->d <= 0.0) return first_job ? 1.0 + 1e-3 * worker : 1.0;
      // Durations in [d, d + d/20): jitter keeps completion instants
      // distinct and shuffles the service order between rounds while
      // realized delays stay bounded by the model parameter.
      return u->d * (1.0 + detail::unit_uniform(rng_) / 20.0);
    }
    const auto& h = std::get<HeavyTailBoundedMean>(model_);
    // Pareto(xm=1, a=1.5)
    double draw = std::pow(1.0 - detail::unit_uniform(rng_), -1.0 / 1.5);
    double cap = 1.0 + h.mean_cap * n_;
    return std::min(draw, cap);
  }

 private:
  DelayModel model_;
  int n_;
  std::mt19937_64 rng_;
};

}  // namespace detail

/// Discrete-event execution of the master/worker state machines. Each worker,
/// on assignment, draws a compute duration; the master processes completions
/// in (event-time, worker-id) order, one message per logical tick, and
/// replies immediately. Deterministic for a fixed config.
inline SimResult run_simulated(const SimConfig& config, const SimObserver& observer = nullptr) {
  int n = static_cast<int>(config.shards.size());
  require(n >= 1, "run_simulated: need at least one shard");
  int p = config.shards.front().dim;
  Vector x0 = config.x0.empty() ? Vector(p, 0.0) : config.x0;

  SimResult res;
  std::vector<SymMatrix> B0s;
  std::vector<Vector> grads0;
  for (int i = 0; i < n; ++i) {
    double c = config.init_scale
                   ? *config.init_scale
                   : smoothness_estimate(config.spec, config.shards[i]);
    SymMatrix B0 = init_hessian_approx(config.init_mode, c, config.spec, config.shards[i], x0);
    res.workers.push_back(make_worker(i, config.spec, config.shards[i], x0, B0));
    B0s.push_back(res.workers.back().B);
    grads0.push_back(res.workers.back().grad_z);
  }
  res.master = master_init(B0s, x0, grads0);

  DelayLedger ledger(n);
  EpochTracker tracker(n);
  RefactorSource refactor = [&res, p]() {
    SymMatrix B_sum(p);
    for (const auto& w : res.workers) B_sum += w.B;
    return B_sum;
  };

  const auto* fixed = std::get_if<FixedSchedule>(&config.delay_model);
  detail::DurationSampler sampler(config.delay_model, n, config.seed);

  // (completion wall time, worker); ties break by worker id.
  using Event = std::pair<double, int>;
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> queue;
  std::vector<Vector> assigned(n, x0);
  if (!fixed) {
    for (int i = 0; i < n; ++i) queue.emplace(sampler.next(i, true), i);
  }

  std::size_t fixed_pos = 0;
  double now = 0.0;
  while (true) {
    if (res.master.t >= config.max_updates) break;
    int who;
    if (fixed) {
      if (fixed_pos >= fixed->order.size()) break;
      who = fixed->order[fixed_pos++];
      require(who >= 0 && who < n, "run_simulated: schedule worker id out of range");
      now = static_cast<double>(fixed_pos);
    } else {
      auto [wall, w] = queue.top();
      queue.pop();
      now = wall;
      who = w;
    }

    UpdateMessage msg = worker_compute(res.workers[who], assigned[who], config.spec,
                                       config.shards[who]);
    master_apply(res.master, msg, refactor);
    std::int64_t t = res.master.t;
    auto delays = ledger.on_update(who, t);
    tracker.on_update(who, t);
    res.schedule.push_back(who);

    TraceRow row;
    row.t = t;
    row.wall_s = now;
    row.worker = who;
    row.d = delays.d;
    row.D = delays.D;
    row.epoch = tracker.epoch();
    row.all_d.resize(n);
    row.all_D.resize(n);
    for (int i = 0; i < n; ++i) {
      row.all_d[i] = ledger.delay_of(i, t);
      row.all_D[i] = ledger.double_delay_of(i, t);
    }
    row.avg_delay = ledger.average_delay(t);
    double subopt = std::numeric_limits<double>::quiet_NaN();
    double residual = std::numeric_limits<double>::quiet_NaN();
    if (!all_finite(res.master.x)) {
      res.trace.aborted_non_finite = true;
      res.trace.rows.push_back(row);
      break;
    }
    if (config.reference) {
      subopt = pooled_value(config.spec, config.shards, res.master.x) - config.reference->f_star;
      residual = norm2(res.master.x - config.reference->x_star);
    }
    row.subopt = subopt;
    row.residual = residual;
    res.trace.rows.push_back(row);
    if (observer) observer(res.master, res.workers, row);

    assigned[who] = res.master.x;
    if (!fixed) queue.emplace(now + sampler.next(who, false), who);

    if (config.target_subopt && config.reference && subopt <= *config.target_subopt) break;
  }
  res.trace.epoch_boundaries = tracker.boundaries();
  res.trace.wall_s = now;
  return res;
}

}  // namespace daveqn
