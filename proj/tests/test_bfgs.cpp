#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "daveqn/bfgs.hpp"
#include "daveqn/oracle.hpp"

using namespace daveqn;

namespace {

SymMatrix random_spd(int p, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  SymMatrix g(p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) g(i, j) = normal(rng);
  SymMatrix m(p, 0.5);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j)
      for (int k = 0; k < p; ++k) m(i, j) += g(i, k) * g(j, k);
  m.symmetrize();
  return m;
}

ObjectiveSpec identity_quadratic(int p, Vector b = {}) {
  ObjectiveSpec spec;
  spec.kind = ObjectiveKind::Quadratic;
  spec.quad_A.push_back(SymMatrix::identity(p));
  spec.quad_b.push_back(b.empty() ? Vector(p, 0.0) : std::move(b));
  return spec;
}

Shard dummy_shard(int p, int id = 0) {
  Shard s;
  s.id = id;
  s.dim = p;
  s.features.push_back(Vector(p, 0.0));
  s.labels.push_back(1.0);
  return s;
}

}  // namespace

TEST_CASE("bfgs_rank_two hand example") {
  SymMatrix B = SymMatrix::identity(2);
  Vector s{1, 0}, y{2, 0};
  CurvaturePair pair = make_pair_from(B, s, y);
  CHECK(pair.alpha == 2.0);
  CHECK(pair.q == Vector{1, 0});
  CHECK(pair.beta == 1.0);
  SymMatrix Bp = bfgs_rank_two(B, pair);
  CHECK(Bp(0, 0) == Catch::Approx(2.0));
  CHECK(Bp(0, 1) == Catch::Approx(0.0).margin(1e-15));
  CHECK(Bp(1, 1) == Catch::Approx(1.0));
  Vector Bps = mat_vec(Bp, s);
  CHECK(norm2(Bps - y) <= 1e-10 * (1.0 + norm2(y)));
}

TEST_CASE("bfgs_rank_two fixed point when secant already holds") {
  std::mt19937_64 rng(2);
  SymMatrix B = random_spd(4, rng);
  Vector s{1, -1, 0.5, 2};
  Vector y = mat_vec(B, s);  // q = y, alpha = beta
  CurvaturePair pair = make_pair_from(B, s, y);
  SymMatrix Bp = bfgs_rank_two(B, pair);
  SymMatrix diff = Bp;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) diff(i, j) -= B(i, j);
  CHECK(diff.frobenius_norm() <= 1e-10 * B.frobenius_norm());
}

TEST_CASE("bfgs_rank_two rejects degenerate curvature") {
  SymMatrix B = SymMatrix::identity(2);
  CurvaturePair pair = make_pair_from(B, {0, 0}, {0, 0});
  CHECK_THROWS_AS(bfgs_rank_two(B, pair), CurvatureReject);
  pair = make_pair_from(B, {1, 0}, {-1, 0});  // alpha < 0
  CHECK_THROWS_AS(bfgs_rank_two(B, pair), CurvatureReject);
}

TEST_CASE("secant and PD preservation over seeded random updates") {
  std::mt19937_64 rng(123);
  std::normal_distribution<double> normal;
  int done = 0;
  while (done < 200) {
    int p = 2 + static_cast<int>(rng() % 7);
    SymMatrix B = random_spd(p, rng);
    Vector s(p), y(p);
    for (double& v : s) v = normal(rng);
    // y from an SPD map of s so alpha > 0
    SymMatrix H = random_spd(p, rng);
    y = mat_vec(H, s);
    CurvaturePair pair = make_pair_from(B, s, y);
    if (!accept_pair(pair)) continue;
    SymMatrix Bp = bfgs_rank_two(B, pair);
    Vector Bps = mat_vec(Bp, s);
    CHECK(norm2(Bps - y) <= 1e-10 * (1.0 + norm2(y)));
    CHECK(Bp.is_symmetric(1e-12));
    CHECK(is_positive_definite(Bp));
    ++done;
  }
}

TEST_CASE("worker_compute repeat assignment produces a skip message") {
  auto spec = identity_quadratic(2);
  Shard shard = dummy_shard(2);
  WorkerState w = make_worker(0, spec, shard, {1, 0}, SymMatrix::identity(2));
  SymMatrix B_before = w.B;
  UpdateMessage msg = worker_compute(w, {1, 0}, spec, shard);
  CHECK(msg.skip);
  CHECK(norm2(msg.y) == 0.0);
  CHECK(norm2(msg.delta_u) == 0.0);
  CHECK(w.updates_done == 1);
  SymMatrix diff = w.B;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) diff(i, j) -= B_before(i, j);
  CHECK(diff.frobenius_norm() == 0.0);
}

TEST_CASE("worker_compute hand example on identity quadratic") {
  auto spec = identity_quadratic(2);
  Shard shard = dummy_shard(2);
  WorkerState w = make_worker(0, spec, shard, {1, 0}, SymMatrix::identity(2));
  UpdateMessage msg = worker_compute(w, {0, 0}, spec, shard);
  CHECK_FALSE(msg.skip);
  CHECK(msg.y == Vector{-1, 0});
  CHECK(msg.alpha == 1.0);
  CHECK(msg.q == Vector{-1, 0});
  CHECK(msg.beta == 1.0);
  CHECK(msg.delta_u[0] == Catch::Approx(-1.0));
  CHECK(msg.delta_u[1] == Catch::Approx(0.0).margin(1e-15));
  CHECK(w.z == Vector{0, 0});
}

TEST_CASE("worker_compute output satisfies secant for random calls") {
  auto prob = synth_problem(8, 1, 5, 25, 10.0, 0.1);
  WorkerState w = make_worker(0, prob.spec, prob.shards[0], Vector(5, 0.0),
                              SymMatrix(5, smoothness_estimate(prob.spec, prob.shards[0])));
  std::mt19937_64 rng(77);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 100; ++trial) {
    Vector x_new(5);
    for (double& v : x_new) v = normal(rng);
    Vector z_old = w.z;
    Vector g_old = w.grad_z;
    UpdateMessage msg = worker_compute(w, x_new, prob.spec, prob.shards[0]);
    if (msg.skip) continue;
    Vector s = x_new - z_old;
    Vector y = w.grad_z - g_old;
    Vector Bs = mat_vec(w.B, s);
    CHECK(norm2(Bs - y) <= 1e-10 * (1.0 + norm2(y)));
    // caches stay consistent with the new state
    CHECK(norm2(w.u_local - mat_vec(w.B, w.z)) <= 1e-12 * (1.0 + norm2(w.u_local)));
  }
}

TEST_CASE("master_init examples") {
  std::vector<SymMatrix> B0s{SymMatrix::identity(2), SymMatrix::identity(2)};
  std::vector<Vector> grads{{1, 1}, {1, 1}};
  MasterState m = master_init(B0s, {1, 1}, grads);
  CHECK(m.B_inv(0, 0) == Catch::Approx(0.5));
  CHECK(m.u == Vector{2, 2});
  CHECK(m.g == Vector{2, 2});
  CHECK(m.t == 0);

  SymMatrix neg = SymMatrix::identity(2);
  neg *= -1.0;
  CHECK_THROWS_AS(master_init({neg}, {0, 0}, {{0, 0}}), NotPositiveDefinite);
}

TEST_CASE("master_apply hand example matches the direct inverse") {
  MasterState m;
  m.B_inv = SymMatrix::identity(2);
  m.u = Vector{0, 0};
  m.g = Vector{0, 0};
  m.x = Vector{0, 0};
  UpdateMessage msg;
  msg.y = {2, 0};
  msg.q = {1, 0};
  msg.alpha = 2.0;
  msg.beta = 1.0;
  msg.delta_u = {0, 0};
  master_apply(m, msg);
  CHECK(m.B_inv(0, 0) == Catch::Approx(0.5));
  CHECK(m.B_inv(0, 1) == Catch::Approx(0.0).margin(1e-15));
  CHECK(m.B_inv(1, 1) == Catch::Approx(1.0));
  CHECK(m.t == 1);
}

TEST_CASE("master_apply skip refreshes u, g, x but not the inverse") {
  MasterState m;
  m.B_inv = SymMatrix::identity(2);
  m.B_inv(0, 0) = 0.25;
  m.u = Vector{1, 0};
  m.g = Vector{0, 0};
  m.x = Vector{0, 0};
  SymMatrix before = m.B_inv;
  UpdateMessage msg;
  msg.skip = true;
  msg.delta_u = {1, 1};
  msg.y = {0.5, 0};
  msg.q = {0, 0};
  master_apply(m, msg);
  CHECK(m.B_inv(0, 0) == before(0, 0));
  CHECK(m.u == Vector{2, 1});
  CHECK(m.g == Vector{0.5, 0});
  // x = B_inv (u - g)
  CHECK(m.x[0] == Catch::Approx(0.25 * 1.5));
  CHECK(m.x[1] == Catch::Approx(1.0));
}

TEST_CASE("degenerate denominator triggers refactorization when a source exists") {
  MasterState m;
  m.B_inv = SymMatrix::identity(2);
  m.u = Vector{0, 0};
  m.g = Vector{0, 0};
  m.x = Vector{0, 0};
  UpdateMessage bad;
  bad.y = {1, 0};
  bad.q = {0, 0};
  bad.alpha = -1.0;  // alpha + v'y = -1 + 1 = 0
  bad.beta = 1.0;
  bad.delta_u = {0, 0};
  CHECK_THROWS_AS(master_apply(m, bad), DenominatorDegenerate);

  MasterState m2;
  m2.B_inv = SymMatrix::identity(2);
  m2.u = Vector{0, 0};
  m2.g = Vector{0, 0};
  m2.x = Vector{0, 0};
  master_apply(m2, bad, [] { return SymMatrix(2, 4.0); });
  CHECK(m2.degenerate_events == 1);
  CHECK(m2.B_inv(0, 0) == Catch::Approx(0.25));
}

TEST_CASE("BFGS is a fixed point on quadratics with exact Hessian init") {
  auto prob = synth_quadratic(19, 1, 4, 10.0);
  WorkerState w = make_worker(0, prob.spec, prob.shards[0], Vector(4, 0.0),
                              prob.spec.quad_A[0]);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 30; ++trial) {
    Vector x_new(4);
    for (double& v : x_new) v = normal(rng);
    worker_compute(w, x_new, prob.spec, prob.shards[0]);
    SymMatrix diff = w.B;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) diff(i, j) -= prob.spec.quad_A[0](i, j);
    CHECK(diff.frobenius_norm() <= 1e-12 * (1.0 + prob.spec.quad_A[0].frobenius_norm()));
  }
}

TEST_CASE("init_hessian_approx modes") {
  auto prob = synth_quadratic(3, 1, 3, 5.0);
  SymMatrix scaled = init_hessian_approx(InitMode::ScaledIdentity, 2.0, prob.spec,
                                         prob.shards[0], Vector(3, 0.0));
  CHECK(scaled(0, 0) == 2.0);
  CHECK(scaled(0, 1) == 0.0);
  SymMatrix exact = init_hessian_approx(InitMode::ExactLocalHessian, 1.0, prob.spec,
                                        prob.shards[0], Vector(3, 0.0));
  CHECK(exact(1, 2) == prob.spec.quad_A[0](1, 2));

  ObjectiveSpec logi;
  logi.kind = ObjectiveKind::Logistic;
  Shard s;
  s.dim = 2;
  s.features.push_back({1, 0});
  s.labels.push_back(1.0);
  SymMatrix h = init_hessian_approx(InitMode::ExactLocalHessian, 1.0, logi, s, {0, 0});
  CHECK(h(0, 0) == Catch::Approx(0.25));
}
