#pragma once

// Independent reference computations used only by tests. Nothing here calls
// the library code path it is used to check.

#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "stiefel_lora/matrix.hpp"

namespace oracle {

using stiefel_lora::Matrix;

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& gen,
                            double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix m(rows, cols);
  for (double& x : m.data()) x = nd(gen);
  return m;
}

/// Naive triple-loop product.
inline Matrix product(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(p, j);
      out(i, j) = acc;
    }
  return out;
}

inline double frob(const Matrix& m) {
  double acc = 0.0;
  for (double x : m.data()) acc += x * x;
  return std::sqrt(acc);
}

struct Qr {
  Matrix q;
  Matrix r;
};

/// Modified Gram-Schmidt; r has a positive diagonal by construction.
inline Qr mgs(const Matrix& m) {
  const std::size_t rows = m.rows(), cols = m.cols();
  Matrix q = m;
  Matrix r(cols, cols);
  for (std::size_t k = 0; k < cols; ++k) {
    double norm = 0.0;
    for (std::size_t i = 0; i < rows; ++i) norm += q(i, k) * q(i, k);
    norm = std::sqrt(norm);
    r(k, k) = norm;
    for (std::size_t i = 0; i < rows; ++i) q(i, k) /= norm;
    for (std::size_t j = k + 1; j < cols; ++j) {
      double dot = 0.0;
      for (std::size_t i = 0; i < rows; ++i) dot += q(i, k) * q(i, j);
      r(k, j) = dot;
      for (std::size_t i = 0; i < rows; ++i) q(i, j) -= dot * q(i, k);
    }
  }
  return {q, r};
}

/// Adapter weight formed explicitly: W0 + s B A, optionally column-renormalized
/// to the given magnitudes (DoRA).
inline Matrix adapter_weight(const Matrix& w0, const Matrix& a, const Matrix& b, double s,
                             const std::optional<std::vector<double>>& magnitude) {
  Matrix w = w0;
  const Matrix ba = product(b, a);
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) w(i, j) += s * ba(i, j);
  if (magnitude) {
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double n = 0.0;
      for (std::size_t i = 0; i < w.rows(); ++i) n += w(i, j) * w(i, j);
      n = std::sqrt(n);
      for (std::size_t i = 0; i < w.rows(); ++i) w(i, j) *= (*magnitude)[j] / n;
    }
  }
  return w;
}

/// Central differences of f at every entry of `at`.
inline Matrix central_difference(const std::function<double(const Matrix&)>& f, const Matrix& at,
                                 double h) {
  Matrix grad(at.rows(), at.cols());
  Matrix probe = at;
  for (std::size_t i = 0; i < at.rows(); ++i)
    for (std::size_t j = 0; j < at.cols(); ++j) {
      const double orig = probe(i, j);
      probe(i, j) = orig + h;
      const double up = f(probe);
      probe(i, j) = orig - h;
      const double down = f(probe);
      probe(i, j) = orig;
      grad(i, j) = (up - down) / (2.0 * h);
    }
  return grad;
}

/// max|a - b| / max|b|.
inline double max_relative_error(const Matrix& analytic, const Matrix& reference) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    num = std::max(num, std::abs(analytic.data()[i] - reference.data()[i]));
    den = std::max(den, std::abs(reference.data()[i]));
  }
  return den == 0.0 ? num : num / den;
}

/// Straight-line bias-corrected Adam on one scalar.
struct ScalarAdam {
  double beta1, beta2, eps, lr;
  double m = 0.0, v = 0.0, p = 0.0;
  int t = 0;
  void step(double g) {
    ++t;
    m = beta1 * m + (1 - beta1) * g;
    v = beta2 * v + (1 - beta2) * g * g;
    const double mh = m / (1 - std::pow(beta1, t));
    const double vh = v / (1 - std::pow(beta2, t));
    p -= lr * mh / (std::sqrt(vh) + eps);
  }
};

}  // namespace oracle
