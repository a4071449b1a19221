#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <vector>

#include "daveqn/errors.hpp"

namespace daveqn {

using Vector = std::vector<double>;

inline double dot(const Vector& a, const Vector& b) {
  require(a.size() == b.size(), "dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const Vector& a) { return std::sqrt(dot(a, a)); }

inline Vector operator+(const Vector& a, const Vector& b) {
  require(a.size() == b.size(), "vector add: dimension mismatch");
  Vector r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
  return r;
}

inline Vector operator-(const Vector& a, const Vector& b) {
  require(a.size() == b.size(), "vector sub: dimension mismatch");
  Vector r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
  return r;
}

inline Vector operator*(double c, const Vector& a) {
  Vector r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = c * a[i];
  return r;
}

inline void axpy(double c, const Vector& x, Vector& y) {
  require(x.size() == y.size(), "axpy: dimension mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += c * x[i];
}

inline bool all_finite(const Vector& a) {
  for (double v : a)
    if (!std::isfinite(v)) return false;
  return true;
}

/// Dense symmetric p-by-p matrix, row-major storage.
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(int n, double diag = 0.0) : n_(n), a_(static_cast<std::size_t>(n) * n, 0.0) {
    for (int i = 0; i < n; ++i) (*this)(i, i) = diag;
  }

  static SymMatrix identity(int n) { return SymMatrix(n, 1.0); }

  int dim() const { return n_; }

  double& operator()(int i, int j) { return a_[static_cast<std::size_t>(i) * n_ + j]; }
  double operator()(int i, int j) const { return a_[static_cast<std::size_t>(i) * n_ + j]; }

  const std::vector<double>& data() const { return a_; }
  std::vector<double>& data() { return a_; }

  SymMatrix& operator+=(const SymMatrix& o) {
    require(n_ == o.n_, "matrix add: dimension mismatch");
    for (std::size_t k = 0; k < a_.size(); ++k) a_[k] += o.a_[k];
    return *this;
  }

  SymMatrix operator+(const SymMatrix& o) const {
    SymMatrix r = *this;
    r += o;
    return r;
  }

  SymMatrix& operator*=(double c) {
    for (double& v : a_) v *= c;
    return *this;
  }

  // M <- (M + M^T)/2, suppresses floating-point asymmetry drift.
  void symmetrize() {
    for (int i = 0; i < n_; ++i)
      for (int j = i + 1; j < n_; ++j) {
        double m = 0.5 * ((*this)(i, j) + (*this)(j, i));
        (*this)(i, j) = m;
        (*this)(j, i) = m;
      }
  }

  bool is_symmetric(double tol = 1e-12) const {
    for (int i = 0; i < n_; ++i)
      for (int j = i + 1; j < n_; ++j)
        if (std::abs((*this)(i, j) - (*this)(j, i)) > tol * (1.0 + std::abs((*this)(i, j))))
          return false;
    return true;
  }

  bool all_finite() const {
    for (double v : a_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double frobenius_norm() const {
    double s = 0.0;
    for (double v : a_) s += v * v;
    return std::sqrt(s);
  }

 private:
  int n_ = 0;
  std::vector<double> a_;
};

/// M + c*v*v^T, re-symmetrized.
inline SymMatrix rank_one_update(const SymMatrix& M, const Vector& v, double c) {
  require(M.dim() == static_cast<int>(v.size()), "rank_one_update: dimension mismatch");
  require(std::isfinite(c), "rank_one_update: non-finite scale");
  SymMatrix r = M;
  for (int i = 0; i < M.dim(); ++i)
    for (int j = 0; j < M.dim(); ++j) r(i, j) += c * v[i] * v[j];
  r.symmetrize();
  return r;
}

inline Vector mat_vec(const SymMatrix& M, const Vector& v) {
  require(M.dim() == static_cast<int>(v.size()), "mat_vec: dimension mismatch");
  Vector r(v.size(), 0.0);
  for (int i = 0; i < M.dim(); ++i) {
    double s = 0.0;
    for (int j = 0; j < M.dim(); ++j) s += M(i, j) * v[j];
    r[i] = s;
  }
  return r;
}

inline SymMatrix mat_mul(const SymMatrix& A, const SymMatrix& B) {
  require(A.dim() == B.dim(), "mat_mul: dimension mismatch");
  int n = A.dim();
  SymMatrix r(n);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      double aik = A(i, k);
      if (aik == 0.0) continue;
      for (int j = 0; j < n; ++j) r(i, j) += aik * B(k, j);
    }
  return r;
}

/// Lower-triangular Cholesky factor; nullopt on a non-positive pivot.
inline std::optional<SymMatrix> cholesky(const SymMatrix& M) {
  int n = M.dim();
  SymMatrix L(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = M(i, j);
      for (int k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
      if (i == j) {
        if (s <= 0.0 || !std::isfinite(s)) return std::nullopt;
        L(i, i) = std::sqrt(s);
      } else {
        L(i, j) = s / L(j, j);
      }
    }
  }
  return L;
}

inline Vector cholesky_solve(const SymMatrix& L, const Vector& b) {
  int n = L.dim();
  require(n == static_cast<int>(b.size()), "cholesky_solve: dimension mismatch");
  Vector y(b);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < i; ++k) y[i] -= L(i, k) * y[k];
    y[i] /= L(i, i);
  }
  for (int i = n - 1; i >= 0; --i) {
    for (int k = i + 1; k < n; ++k) y[i] -= L(k, i) * y[k];
    y[i] /= L(i, i);
  }
  return y;
}

/// Solve M*x = b for symmetric positive definite M.
inline Vector spd_factor_solve(const SymMatrix& M, const Vector& b) {
  require(M.dim() == static_cast<int>(b.size()), "spd_factor_solve: dimension mismatch");
  auto L = cholesky(M);
  if (!L) throw NotPositiveDefinite("spd_factor_solve: non-positive pivot");
  return cholesky_solve(*L, b);
}

inline SymMatrix spd_inverse(const SymMatrix& M) {
  auto L = cholesky(M);
  if (!L) throw NotPositiveDefinite("spd_inverse: non-positive pivot");
  int n = M.dim();
  SymMatrix inv(n);
  Vector e(n, 0.0);
  for (int j = 0; j < n; ++j) {
    e[j] = 1.0;
    Vector col = cholesky_solve(*L, e);
    for (int i = 0; i < n; ++i) inv(i, j) = col[i];
    e[j] = 0.0;
  }
  inv.symmetrize();
  return inv;
}

inline bool is_positive_definite(const SymMatrix& M) { return cholesky(M).has_value(); }

}  // namespace daveqn
