#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "daveqn/oracle.hpp"
#include "daveqn/runtime.hpp"

using namespace daveqn;

TEST_CASE("recompute_master hand example: identity quadratic at the optimum") {
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::Quadratic;
  spec.quad_A.push_back(SymMatrix::identity(2));
  spec.quad_b.push_back(Vector{0, 0});
  Shard shard;
  shard.dim = 2;
  shard.features.push_back({0, 0});
  shard.labels.push_back(1.0);

  WorkerState w = make_worker(0, spec, shard, {1, 1}, SymMatrix::identity(2));
  auto snap = oracle::recompute_master({w}, spec, {shard});
  CHECK(snap.u == Vector{1, 1});
  CHECK(snap.g == Vector{1, 1});
  CHECK(norm2(snap.x) <= 1e-14);  // x* = 0 for A = I, b = 0
}

TEST_CASE("recompute_master symmetry: duplicated workers give the n=1 iterate") {
  auto prob = synth_problem(41, 1, 4, 15, 10.0, 0.1);
  WorkerState w = make_worker(0, prob.spec, prob.shards[0], Vector(4, 0.1),
                              SymMatrix(4, 2.0));
  auto one = oracle::recompute_master({w}, prob.spec, {prob.shards[0]});
  WorkerState w2 = w;
  w2.id = 1;
  auto two = oracle::recompute_master({w, w2}, prob.spec, {prob.shards[0], prob.shards[0]});
  CHECK(norm2(one.x - two.x) <= 1e-12 * (1.0 + norm2(one.x)));
}

TEST_CASE("check_inverse at fresh init and after forced refactorization") {
  auto prob = synth_problem(43, 3, 5, 10, 10.0, 0.1);
  SimConfig sim;
  sim.spec = prob.spec;
  sim.shards = prob.shards;
  sim.delay_model = UniformBounded{2.0};
  sim.seed = 13;
  sim.max_updates = 0;
  SimResult res = run_simulated(sim);
  CHECK(oracle::check_inverse(res.master.B_inv, res.workers) <= 1e-12);

  sim.max_updates = 120;
  res = run_simulated(sim);
  CHECK(oracle::check_inverse(res.master.B_inv, res.workers) <= 1e-6);

  SymMatrix B_sum(5);
  for (const auto& w : res.workers) B_sum += w.B;
  SymMatrix refreshed = spd_inverse(B_sum);
  CHECK(oracle::check_inverse(refreshed, res.workers) <= 1e-12);
}

TEST_CASE("finite_diff_grad basics") {
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::Quadratic;
  SymMatrix A(2);
  A(0, 0) = 2;
  A(1, 1) = 3;
  spec.quad_A.push_back(A);
  spec.quad_b.push_back(Vector{1, -1});
  Shard shard;
  shard.dim = 2;
  shard.features.push_back({0, 0});
  shard.labels.push_back(1.0);
  Vector x{0.3, -0.7};
  Vector fd = oracle::finite_diff_grad(spec, shard, x, 1e-6);
  Vector g = grad(spec, shard, x);
  CHECK(norm2(fd - g) <= 1e-7 * (1.0 + norm2(g)));
  CHECK_THROWS_AS(oracle::finite_diff_grad(spec, shard, x, 0.0), DimensionMismatch);
}

TEST_CASE("replay_reference: empty schedule and quadratic one-step exactness") {
  auto prob = synth_quadratic(47, 3, 4, 20.0);
  auto empty = oracle::replay_reference({}, prob.spec, prob.shards, Vector(4, 0.0),
                                        InitMode::ExactLocalHessian, 1.0);
  CHECK(empty.empty());

  // x* = -(sum A_i)^{-1} sum b_i
  SymMatrix A_sum(4);
  Vector b_sum(4, 0.0);
  for (int i = 0; i < 3; ++i) {
    A_sum += prob.spec.quad_A[i];
    axpy(1.0, prob.spec.quad_b[i], b_sum);
  }
  Vector x_star = spd_factor_solve(A_sum, -1.0 * b_sum);
  auto iterates = oracle::replay_reference({1}, prob.spec, prob.shards, Vector(4, 0.0),
                                           InitMode::ExactLocalHessian, 1.0);
  REQUIRE(iterates.size() == 1);
  CHECK(norm2(iterates[0] - x_star) <= 1e-10 * (1.0 + norm2(x_star)));
}

TEST_CASE("replay_reference agrees with the fast path over a long trace") {
  auto prob = synth_problem(51, 3, 6, 20, 30.0, 0.1);
  SimConfig sim;
  sim.spec = prob.spec;
  sim.shards = prob.shards;
  sim.delay_model = UniformBounded{3.0};
  sim.seed = 29;
  sim.max_updates = 500;

  std::vector<Vector> fast;
  SimResult res = run_simulated(sim, [&fast](const MasterState& m, const auto&, const auto&) {
    fast.push_back(m.x);
  });
  auto slow = oracle::replay_reference(res.schedule, prob.spec, prob.shards, Vector(6, 0.0),
                                       InitMode::ScaledIdentity);
  REQUIRE(slow.size() == fast.size());
  for (std::size_t i = 0; i < fast.size(); ++i)
    CHECK(norm2(fast[i] - slow[i]) <= 1e-8 * (1.0 + norm2(slow[i])));
}
