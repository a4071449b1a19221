#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "daveqn/linalg.hpp"
#include "daveqn/objective.hpp"
#include "daveqn/protocol.hpp"

namespace daveqn {

// Updates with alpha <= kCurvatureThreshold * ||s||^2 are skipped; convexity
// guarantees positive curvature analytically but floating point and s ~ 0 can
// violate it, and skipping preserves positive definiteness.
constexpr double kCurvatureThreshold = 1e-12;

struct CurvaturePair {
  Vector s;      // variable variation
  Vector y;      // gradient variation
  Vector q;      // B*s
  double alpha;  // y's
  double beta;   // s'q
};

inline CurvaturePair make_pair_from(const SymMatrix& B, const Vector& s, const Vector& y) {
  CurvaturePair pair;
  pair.q = mat_vec(B, s);
  pair.alpha = dot(y, s);
  pair.beta = dot(s, pair.q);
  pair.s = s;
  pair.y = y;
  return pair;
}

inline bool accept_pair(const CurvaturePair& pair) {
  double s2 = dot(pair.s, pair.s);
  return pair.alpha > kCurvatureThreshold * s2 && pair.beta > 0.0 && s2 > 0.0;
}

/// Rank-two BFGS update B' = B + y y'/alpha - q q'/beta. The pair must be
/// built from this B. Throws CurvatureReject on a degenerate pair.
inline SymMatrix bfgs_rank_two(const SymMatrix& B, const CurvaturePair& pair) {
  require(B.dim() == static_cast<int>(pair.s.size()), "bfgs_rank_two: dimension mismatch");
  if (!accept_pair(pair)) throw CurvatureReject("bfgs_rank_two: curvature below threshold");
  SymMatrix Bp = rank_one_update(B, pair.y, 1.0 / pair.alpha);
  Bp = rank_one_update(Bp, pair.q, -1.0 / pair.beta);
  return Bp;
}

struct WorkerState {
  int id = 0;
  Vector z;            // last iterate incorporated
  SymMatrix B;         // local Hessian approximation
  Vector grad_z;       // gradient at z, always recomputed with z
  Vector u_local;      // B*z cache
  std::int64_t updates_done = 0;
  std::int64_t skips = 0;
};

enum class InitMode { ScaledIdentity, ExactLocalHessian };

inline SymMatrix init_hessian_approx(InitMode mode, double c, const ObjectiveSpec& spec,
                                     const Shard& shard, const Vector& x0) {
  if (mode == InitMode::ExactLocalHessian) return hessian(spec, shard, x0);
  require(c > 0.0, "init_hessian_approx: scale must be positive");
  return SymMatrix(shard.dim, c);
}

inline WorkerState make_worker(int id, const ObjectiveSpec& spec, const Shard& shard,
                               const Vector& x0, SymMatrix B0) {
  WorkerState w;
  w.id = id;
  w.z = x0;
  w.B = std::move(B0);
  w.grad_z = grad(spec, shard, x0);
  w.u_local = mat_vec(w.B, x0);
  return w;
}

/// One worker round: incorporate the assigned iterate, update B by the
/// rank-two rule (or freeze it on a rejected pair), and emit the O(p)
/// update message.
inline UpdateMessage worker_compute(WorkerState& state, const Vector& x_new,
                                    const ObjectiveSpec& spec, const Shard& shard) {
  require(x_new.size() == state.z.size(), "worker_compute: dimension mismatch");
  Vector grad_new = grad(spec, shard, x_new);
  Vector s = x_new - state.z;
  Vector y = grad_new - state.grad_z;
  CurvaturePair pair = make_pair_from(state.B, s, y);

  UpdateMessage msg;
  msg.worker_id = static_cast<std::uint32_t>(state.id);
  msg.y = y;
  msg.q = pair.q;
  msg.alpha = pair.alpha;
  msg.beta = pair.beta;

  if (accept_pair(pair)) {
    state.B = bfgs_rank_two(state.B, pair);
  } else {
    msg.skip = true;
    ++state.skips;
  }
  Vector u_new = mat_vec(state.B, x_new);
  msg.delta_u = u_new - state.u_local;

  state.z = x_new;
  state.grad_z = std::move(grad_new);
  state.u_local = std::move(u_new);
  ++state.updates_done;
  return msg;
}

struct MasterState {
  SymMatrix B_inv;  // maintained inverse of the aggregate Hessian approximation
  Vector u;         // sum of B_i z_i
  Vector g;         // sum of grad f_i(z_i)
  Vector x;
  std::int64_t t = 0;
  std::int64_t degenerate_events = 0;
};

/// Callback returning the authoritative aggregate sum of worker B_i, used to
/// refactorize on a degenerate Woodbury denominator.
using RefactorSource = std::function<SymMatrix()>;

inline MasterState master_init(const std::vector<SymMatrix>& B0s, const Vector& x0,
                               const std::vector<Vector>& grads0) {
  require(!B0s.empty() && B0s.size() == grads0.size(), "master_init: size mismatch");
  int p = static_cast<int>(x0.size());
  SymMatrix B_sum(p);
  Vector g(p, 0.0);
  for (std::size_t i = 0; i < B0s.size(); ++i) {
    require(B0s[i].dim() == p && static_cast<int>(grads0[i].size()) == p,
            "master_init: dimension mismatch");
    B_sum += B0s[i];
    for (int k = 0; k < p; ++k) g[k] += grads0[i][k];
  }
  MasterState m;
  m.B_inv = spd_inverse(B_sum);  // one-time O(p^3) at init
  m.u = mat_vec(B_sum, x0);
  m.g = std::move(g);
  m.x = x0;
  m.t = 0;
  return m;
}

inline void recover_by_refactor(MasterState& state, const RefactorSource& refactor) {
  if (!refactor)
    throw DenominatorDegenerate("master_apply: degenerate denominator, no refactor source");
  state.B_inv = spd_inverse(refactor());
  ++state.degenerate_events;
}

/// Apply one worker message: refresh u, g, the maintained inverse via the two
/// rank-one Woodbury corrections (bypassed on skip), and the iterate
/// x = B^{-1}(u - g).
inline void master_apply(MasterState& state, const UpdateMessage& msg,
                         const RefactorSource& refactor = nullptr) {
  int p = state.B_inv.dim();
  require(static_cast<int>(msg.delta_u.size()) == p && static_cast<int>(msg.y.size()) == p &&
              static_cast<int>(msg.q.size()) == p,
          "master_apply: dimension mismatch");
  for (int k = 0; k < p; ++k) {
    state.u[k] += msg.delta_u[k];
    state.g[k] += msg.y[k];
  }
  if (!msg.skip) {
    Vector v = mat_vec(state.B_inv, msg.y);
    double denom1 = msg.alpha + dot(v, msg.y);
    double scale1 = std::abs(msg.alpha) + norm2(v) * norm2(msg.y);
    if (std::abs(denom1) <= 1e-12 * scale1) {
      recover_by_refactor(state, refactor);
    } else {
      SymMatrix U = rank_one_update(state.B_inv, v, -1.0 / denom1);
      Vector w = mat_vec(U, msg.q);
      double denom2 = msg.beta - dot(msg.q, w);
      double scale2 = std::abs(msg.beta) + norm2(msg.q) * norm2(w);
      if (std::abs(denom2) <= 1e-12 * scale2) {
        recover_by_refactor(state, refactor);
      } else {
        state.B_inv = rank_one_update(U, w, 1.0 / denom2);
      }
    }
  }
  state.x = mat_vec(state.B_inv, state.u - state.g);
  ++state.t;
}

}  // namespace daveqn
