#pragma once

#include <utility>
#include <vector>

#include "daveqn/bfgs.hpp"
#include "daveqn/linalg.hpp"
#include "daveqn/objective.hpp"

namespace daveqn {
namespace oracle {

struct MasterSnapshot {
  SymMatrix B;  // sum of worker B_i
  Vector u;
  Vector g;
  Vector x;
};

/// Brute-force recomputation of the aggregate state from worker snapshots,
/// solving for x by factorization. No reuse of any incrementally maintained
/// quantity; gradients are recomputed from the shards.
inline MasterSnapshot recompute_master(const std::vector<WorkerState>& workers,
                                       const ObjectiveSpec& spec,
                                       const std::vector<Shard>& shards) {
  require(!workers.empty() && workers.size() == shards.size(),
          "recompute_master: size mismatch");
  int p = static_cast<int>(workers.front().z.size());
  MasterSnapshot out;
  out.B = SymMatrix(p);
  out.u = Vector(p, 0.0);
  out.g = Vector(p, 0.0);
  for (std::size_t i = 0; i < workers.size(); ++i) {
    const WorkerState& w = workers[i];
    require(w.B.dim() == p && static_cast<int>(w.z.size()) == p,
            "recompute_master: dimension mismatch");
    out.B += w.B;
    Vector Bz = mat_vec(w.B, w.z);
    Vector gr = grad(spec, shards[i], w.z);
    for (int k = 0; k < p; ++k) {
      out.u[k] += Bz[k];
      out.g[k] += gr[k];
    }
  }
  out.x = spd_factor_solve(out.B, out.u - out.g);
  return out;
}

/// Drift of the maintained inverse: ||B_inv * sum(B_i) - I||_F.
inline double check_inverse(const SymMatrix& B_inv, const std::vector<WorkerState>& workers) {
  int p = B_inv.dim();
  SymMatrix B_sum(p);
  for (const WorkerState& w : workers) B_sum += w.B;
  SymMatrix prod = mat_mul(B_inv, B_sum);
  for (int i = 0; i < p; ++i) prod(i, i) -= 1.0;
  return prod.frobenius_norm();
}

inline Vector finite_diff_grad(const ObjectiveSpec& spec, const Shard& shard, const Vector& x,
                               double h) {
  require(h > 0.0, "finite_diff_grad: h must be positive");
  Vector g(x.size());
  Vector xp = x, xm = x;
  for (std::size_t k = 0; k < x.size(); ++k) {
    xp[k] = x[k] + h;
    xm[k] = x[k] - h;
    g[k] = (value(spec, shard, xp) - value(spec, shard, xm)) / (2.0 * h);
    xp[k] = x[k];
    xm[k] = x[k];
  }
  return g;
}

inline SymMatrix finite_diff_hessian(const ObjectiveSpec& spec, const Shard& shard,
                                     const Vector& x, double h) {
  require(h > 0.0, "finite_diff_hessian: h must be positive");
  int p = static_cast<int>(x.size());
  SymMatrix H(p);
  Vector xp = x, xm = x;
  for (int k = 0; k < p; ++k) {
    xp[k] = x[k] + h;
    xm[k] = x[k] - h;
    Vector gp = grad(spec, shard, xp);
    Vector gm = grad(spec, shard, xm);
    for (int r = 0; r < p; ++r) H(r, k) = (gp[r] - gm[r]) / (2.0 * h);
    xp[k] = x[k];
    xm[k] = x[k];
  }
  H.symmetrize();
  return H;
}

/// Literal re-execution of a (t, worker) schedule maintaining the aggregate B
/// directly and solving each step by factorization. Ground truth for the
/// inverse-maintenance fast path. init_scale <= 0 means the per-shard
/// smoothness estimate.
inline std::vector<Vector> replay_reference(const std::vector<int>& schedule,
                                            const ObjectiveSpec& spec,
                                            const std::vector<Shard>& shards, const Vector& x0,
                                            InitMode init_mode, double init_scale = 0.0) {
  int n = static_cast<int>(shards.size());
  int p = static_cast<int>(x0.size());
  std::vector<WorkerState> workers;
  for (int i = 0; i < n; ++i) {
    double c = init_scale > 0.0 ? init_scale : smoothness_estimate(spec, shards[i]);
    workers.push_back(make_worker(i, spec, shards[i], x0,
                                  init_hessian_approx(init_mode, c, spec, shards[i], x0)));
  }
  std::vector<Vector> iterates;
  // Assignments outstanding per worker; everyone starts on x0.
  std::vector<Vector> assigned(n, x0);
  for (int who : schedule) {
    require(who >= 0 && who < n, "replay_reference: worker id out of range");
    worker_compute(workers[who], assigned[who], spec, shards[who]);
    SymMatrix B_sum(p);
    Vector rhs(p, 0.0);
    for (int i = 0; i < n; ++i) {
      B_sum += workers[i].B;
      Vector Bz = mat_vec(workers[i].B, workers[i].z);
      Vector gr = grad(spec, shards[i], workers[i].z);
      for (int k = 0; k < p; ++k) rhs[k] += Bz[k] - gr[k];
    }
    Vector x = spd_factor_solve(B_sum, rhs);
    assigned[who] = x;
    iterates.push_back(std::move(x));
  }
  return iterates;
}

}  // namespace oracle
}  // namespace daveqn
