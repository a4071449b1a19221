#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "daveqn/linalg.hpp"

namespace daveqn {

/// One worker's slice of the dataset. Features are stored dense.
struct Shard {
  int id = 0;  // index into ObjectiveSpec quadratic terms
  int dim = 0;
  std::vector<Vector> features;   // m_i rows of length dim
  std::vector<double> labels;     // in {-1,+1}

  int num_samples() const { return static_cast<int>(features.size()); }
};

enum class ObjectiveKind { Quadratic, Logistic };

/// Objective family shared by all shards. For Quadratic the per-shard
/// terms f_i(z) = 1/2 z'A_i z + b_i'z live here, indexed by Shard::id.
struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::Logistic;
  double lambda = 0.0;
  std::vector<SymMatrix> quad_A;
  std::vector<Vector> quad_b;
};

// log(1 + exp(-t)) without overflow.
inline double log1p_exp_neg(double t) {
  if (t >= 0.0) return std::log1p(std::exp(-t));
  return -t + std::log1p(std::exp(t));
}

inline double sigmoid(double t) {
  if (t >= 0.0) {
    double e = std::exp(-t);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(t);
  return e / (1.0 + e);
}

inline double value(const ObjectiveSpec& spec, const Shard& shard, const Vector& x) {
  require(static_cast<int>(x.size()) == shard.dim, "value: dimension mismatch");
  if (spec.kind == ObjectiveKind::Quadratic) {
    const SymMatrix& A = spec.quad_A.at(shard.id);
    const Vector& b = spec.quad_b.at(shard.id);
    return 0.5 * dot(x, mat_vec(A, x)) + dot(b, x);
  }
  double s = 0.0;
  for (int j = 0; j < shard.num_samples(); ++j)
    s += log1p_exp_neg(shard.labels[j] * dot(shard.features[j], x));
  s /= shard.num_samples();
  return s + 0.5 * spec.lambda * dot(x, x);
}

inline Vector grad(const ObjectiveSpec& spec, const Shard& shard, const Vector& x) {
  require(static_cast<int>(x.size()) == shard.dim, "grad: dimension mismatch");
  if (spec.kind == ObjectiveKind::Quadratic) {
    const SymMatrix& A = spec.quad_A.at(shard.id);
    return mat_vec(A, x) + spec.quad_b.at(shard.id);
  }
  Vector g(x.size(), 0.0);
  for (int j = 0; j < shard.num_samples(); ++j) {
    double t = shard.labels[j] * dot(shard.features[j], x);
    axpy(-shard.labels[j] * sigmoid(-t), shard.features[j], g);
  }
  double inv_m = 1.0 / shard.num_samples();
  for (double& v : g) v *= inv_m;
  axpy(spec.lambda, x, g);
  return g;
}

inline SymMatrix hessian(const ObjectiveSpec& spec, const Shard& shard, const Vector& x) {
  require(static_cast<int>(x.size()) == shard.dim, "hessian: dimension mismatch");
  if (spec.kind == ObjectiveKind::Quadratic) return spec.quad_A.at(shard.id);
  int p = shard.dim;
  SymMatrix H(p);
  for (int j = 0; j < shard.num_samples(); ++j) {
    double t = dot(shard.features[j], x);  // labels are +-1, b^2 = 1
    double w = sigmoid(t) * sigmoid(-t);
    const Vector& a = shard.features[j];
    for (int r = 0; r < p; ++r)
      for (int c = 0; c < p; ++c) H(r, c) += w * a[r] * a[c];
  }
  double inv_m = 1.0 / shard.num_samples();
  H *= inv_m;
  for (int r = 0; r < p; ++r) H(r, r) += spec.lambda;
  H.symmetrize();
  return H;
}

/// Local smoothness estimate lambda + max_j ||a_j||^2 / 4 for logistic shards.
inline double smoothness_estimate(const ObjectiveSpec& spec, const Shard& shard) {
  if (spec.kind == ObjectiveKind::Quadratic) {
    const SymMatrix& A = spec.quad_A.at(shard.id);
    double tr = 0.0;
    for (int i = 0; i < A.dim(); ++i) tr += A(i, i);
    return tr;  // trace bounds the largest eigenvalue
  }
  double mx = 0.0;
  for (const auto& a : shard.features) mx = std::max(mx, dot(a, a));
  return spec.lambda + mx / 4.0;
}

inline Shard load_libsvm(const std::string& path, std::optional<int> p_override = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::vector<std::vector<std::pair<int, double>>> rows;
  std::vector<double> labels;
  int max_idx = 0;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;  // blank line
    double label;
    try {
      std::size_t pos = 0;
      label = std::stod(tok, &pos);
      if (pos != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ParseError(lineno, "bad label token '" + tok + "'");
    }
    if (label == 0.0) label = -1.0;
    if (label != 1.0 && label != -1.0)
      throw LabelError(lineno, "label outside {-1,0,+1}");
    std::vector<std::pair<int, double>> row;
    while (ls >> tok) {
      auto colon = tok.find(':');
      if (colon == std::string::npos) throw ParseError(lineno, "missing ':' in '" + tok + "'");
      int idx;
      double val;
      try {
        std::size_t pos = 0;
        idx = std::stoi(tok.substr(0, colon), &pos);
        if (pos != colon) throw std::invalid_argument(tok);
        std::string vs = tok.substr(colon + 1);
        val = std::stod(vs, &pos);
        if (pos != vs.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError(lineno, "bad feature token '" + tok + "'");
      }
      if (idx < 1) throw ParseError(lineno, "feature index must be >= 1");
      max_idx = std::max(max_idx, idx);
      row.emplace_back(idx, val);
    }
    rows.push_back(std::move(row));
    labels.push_back(label);
  }
  int p = p_override.value_or(max_idx);
  if (max_idx > p) throw ParseError(0, "feature index exceeds p_override");
  Shard shard;
  shard.dim = p;
  shard.labels = std::move(labels);
  shard.features.reserve(rows.size());
  for (const auto& row : rows) {
    Vector f(p, 0.0);
    for (auto [idx, val] : row) f[idx - 1] = val;
    shard.features.push_back(std::move(f));
  }
  return shard;
}

inline void save_libsvm(const Shard& shard, const std::string& path) {
  std::ofstream out(path);
  for (int j = 0; j < shard.num_samples(); ++j) {
    out << (shard.labels[j] > 0 ? "+1" : "-1");
    for (int k = 0; k < shard.dim; ++k) {
      if (shard.features[j][k] != 0.0) {
        char buf[40];
        std::snprintf(buf, sizeof buf, " %d:%.17g", k + 1, shard.features[j][k]);
        out << buf;
      }
    }
    out << "\n";
  }
}

struct SynthProblem {
  std::vector<Shard> shards;
  ObjectiveSpec spec;
};

namespace detail {

// Uniform in [0,1) from the top 53 bits; avoids the implementation-defined
// behavior of std::uniform_real_distribution so instances are reproducible
// across standard libraries.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1p-53;
}

inline double unit_normal(std::mt19937_64& rng) {
  double u1 = unit_uniform(rng);
  double u2 = unit_uniform(rng);
  while (u1 <= 0.0) u1 = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace detail

/// Synthetic binary logistic problem. Features live in a low-dimensional
/// latent subspace whose stiffness ladder widens with condition_target, and
/// a per-coordinate scale ladder spans exactly condition_target. Labels come
/// from a fixed separator on the latent factors plus label noise, so the
/// geometry of the margins does not depend on the feature scaling.
inline SynthProblem synth_problem(std::uint64_t seed, int n, int p, int m_per,
                                  double condition_target, double lambda) {
  require(n >= 1 && p >= 1 && m_per >= 1, "synth_problem: bad sizes");
  require(condition_target >= 1.0, "synth_problem: condition_target must be >= 1");
  std::mt19937_64 rng(seed + 52220u);
  const double ct = condition_target;
  const int k_eff = std::min(p, 5);
  // Latent stiffness ladder: squared magnitudes decay linearly so the
  // curvature gaps are evenly spaced, and the weakest factor softens with
  // the conditioning so the spectrum genuinely spans it.
  Vector tau(k_eff);
  for (int l = 0; l < k_eff; ++l) {
    double f = (k_eff > 1) ? 1.0 - 0.7 * static_cast<double>(l) / (k_eff - 1) : 1.0;
    if (l == k_eff - 1) f *= std::pow(std::min(1.0, 100.0 / ct), 3.0);
    tau[l] = 12.0 * (ct / 100.0) * std::sqrt(f);
  }
  // Sign embedding: every coordinate gets equal exposure to every latent
  // factor, so the per-coordinate scale ratio is set purely by the ladder
  // below and equals condition_target.
  std::vector<Vector> embed(p, Vector(k_eff));
  for (int k = 0; k < p; ++k)
    for (int l = 0; l < k_eff; ++l) embed[k][l] = (rng() & 1) ? 1.0 : -1.0;
  Vector scales(p);
  for (int k = 0; k < p; ++k) {
    double e = (p > 1) ? static_cast<double>(k) / (p - 1) - 1.0 : 0.0;
    scales[k] = std::pow(ct, e);
  }
  Vector separator(k_eff);
  for (double& v : separator) v = detail::unit_normal(rng);
  SynthProblem out;
  out.spec.kind = ObjectiveKind::Logistic;
  out.spec.lambda = lambda;
  double sqrt_p = std::sqrt(static_cast<double>(p));
  for (int i = 0; i < n; ++i) {
    Shard shard;
    shard.id = i;
    shard.dim = p;
    for (int j = 0; j < m_per; ++j) {
      Vector h(k_eff);
      for (double& v : h) v = (rng() & 1) ? 1.0 : -1.0;
      Vector a(p, 0.0);
      for (int k = 0; k < p; ++k) {
        double s = 0.0;
        for (int l = 0; l < k_eff; ++l) s += embed[k][l] * tau[l] * h[l];
        a[k] = scales[k] * s / sqrt_p;
      }
      double margin = dot(h, separator) + detail::unit_normal(rng);
      shard.labels.push_back(margin >= 0.0 ? 1.0 : -1.0);
      shard.features.push_back(std::move(a));
    }
    out.shards.push_back(std::move(shard));
  }
  return out;
}

/// Synthetic quadratic problem: random SPD A_i spanning condition_target,
/// random b_i. Constant Hessians make one-step exactness testable.
inline SynthProblem synth_quadratic(std::uint64_t seed, int n, int p,
                                    double condition_target) {
  require(n >= 1 && p >= 1, "synth_quadratic: bad sizes");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  SynthProblem out;
  out.spec.kind = ObjectiveKind::Quadratic;
  for (int i = 0; i < n; ++i) {
    // A_i = Q D Q^T with D log-spaced in [1, condition_target], Q from QR of
    // a Gaussian matrix via Gram-Schmidt.
    std::vector<Vector> q;
    for (int c = 0; c < p; ++c) {
      Vector v(p);
      for (int r = 0; r < p; ++r) v[r] = normal(rng);
      for (const auto& u : q) axpy(-dot(u, v), u, v);
      double nv = norm2(v);
      q.push_back((1.0 / nv) * v);
    }
    SymMatrix A(p);
    for (int c = 0; c < p; ++c) {
      double e = (p > 1) ? static_cast<double>(c) / (p - 1) : 0.0;
      double d = std::pow(condition_target, e);
      for (int r = 0; r < p; ++r)
        for (int s = 0; s < p; ++s) A(r, s) += d * q[c][r] * q[c][s];
    }
    A.symmetrize();
    Vector b(p);
    for (int r = 0; r < p; ++r) b[r] = normal(rng);
    out.spec.quad_A.push_back(std::move(A));
    out.spec.quad_b.push_back(std::move(b));
    Shard shard;
    shard.id = i;
    shard.dim = p;
    shard.features.push_back(Vector(p, 0.0));  // placeholder sample
    shard.labels.push_back(1.0);
    out.shards.push_back(std::move(shard));
  }
  return out;
}

/// Random permutation by seed, then contiguous equal splits; remainder dropped.
inline std::vector<Shard> partition(const Shard& shard, int n, std::uint64_t seed) {
  require(n >= 1 && shard.num_samples() >= n, "partition: more shards than samples");
  std::vector<int> perm(shard.num_samples());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  int per = shard.num_samples() / n;
  std::vector<Shard> out;
  for (int i = 0; i < n; ++i) {
    Shard s;
    s.id = i;
    s.dim = shard.dim;
    for (int j = 0; j < per; ++j) {
      int k = perm[i * per + j];
      s.features.push_back(shard.features[k]);
      s.labels.push_back(shard.labels[k]);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace daveqn
