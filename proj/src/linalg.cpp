#include "stiefel_lora/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "stiefel_lora/errors.hpp"

namespace stiefel_lora {

namespace {

std::mt19937_64 seeded_engine(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

constexpr int kMaxJacobiSweeps = 100;

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), engine_(seeded_engine(seed, stream)) {}

double Rng::normal() { return normal_(engine_); }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + a.shape_string() + " x " +
                     b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const double aip = a(i, p);
      if (aip == 0.0) continue;
      auto src = b.row(p);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += aip * src[j];
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: row counts differ, " + a.shape_string() + "^T x " +
                     b.shape_string());
  }
  Matrix out(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto arow = a.row(i);
    auto brow = b.row(i);
    for (std::size_t p = 0; p < arow.size(); ++p) {
      const double api = arow[p];
      if (api == 0.0) continue;
      auto dst = out.row(p);
      for (std::size_t j = 0; j < brow.size(); ++j) dst[j] += api * brow[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: column counts differ, " + a.shape_string() + " x " +
                     b.shape_string() + "^T");
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto brow = b.row(j);
      double acc = 0.0;
      for (std::size_t p = 0; p < arow.size(); ++p) acc += arow[p] * brow[p];
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix sym(const Matrix& x) {
  if (x.rows() != x.cols()) throw ShapeError("sym: expected a square matrix, got " + x.shape_string());
  const std::size_t n = x.rows();
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const double v = (x(i, j) + x(j, i)) / 2.0;
      out(i, j) = v;
      out(j, i) = v;
    }
  }
  return out;
}

QrResult qr_positive(const Matrix& m) {
  const std::size_t rows = m.rows();
  const std::size_t cols = m.cols();
  if (rows < cols) {
    throw ShapeError("qr_positive: expected rows >= cols, got " + m.shape_string());
  }

  Matrix work = m;
  std::vector<std::vector<double>> reflectors(cols);
  std::vector<double> reflector_norm2(cols, 0.0);

  for (std::size_t k = 0; k < cols; ++k) {
    std::vector<double> v(rows - k);
    double norm2 = 0.0;
    for (std::size_t i = k; i < rows; ++i) {
      v[i - k] = work(i, k);
      norm2 += v[i - k] * v[i - k];
    }
    const double norm = std::sqrt(norm2);
    const double alpha = v[0] >= 0.0 ? -norm : norm;
    v[0] -= alpha;
    double vnorm2 = 0.0;
    for (double x : v) vnorm2 += x * x;

    if (vnorm2 > 0.0) {
      for (std::size_t j = k; j < cols; ++j) {
        double dot = 0.0;
        for (std::size_t i = k; i < rows; ++i) dot += v[i - k] * work(i, j);
        const double f = 2.0 * dot / vnorm2;
        for (std::size_t i = k; i < rows; ++i) work(i, j) -= f * v[i - k];
      }
    }
    work(k, k) = alpha;
    for (std::size_t i = k + 1; i < rows; ++i) work(i, k) = 0.0;

    if (std::abs(alpha) < kRankTolerance) {
      throw RankDeficiencyError("qr_positive: rank deficient, |R[" + std::to_string(k) + "][" +
                                    std::to_string(k) + "]| = " + format_double(std::abs(alpha)) +
                                    " below " + format_double(kRankTolerance),
                                k);
    }
    reflectors[k] = std::move(v);
    reflector_norm2[k] = vnorm2;
  }

  Matrix r(cols, cols);
  for (std::size_t i = 0; i < cols; ++i)
    for (std::size_t j = i; j < cols; ++j) r(i, j) = work(i, j);

  // Thin Q: apply the reflectors in reverse to the first cols columns of I.
  Matrix q(rows, cols);
  for (std::size_t i = 0; i < cols; ++i) q(i, i) = 1.0;
  for (std::size_t kk = cols; kk-- > 0;) {
    const auto& v = reflectors[kk];
    if (reflector_norm2[kk] == 0.0) continue;
    for (std::size_t j = 0; j < cols; ++j) {
      double dot = 0.0;
      for (std::size_t i = kk; i < rows; ++i) dot += v[i - kk] * q(i, j);
      const double f = 2.0 * dot / reflector_norm2[kk];
      if (f == 0.0) continue;
      for (std::size_t i = kk; i < rows; ++i) q(i, j) -= f * v[i - kk];
    }
  }

  for (std::size_t k = 0; k < cols; ++k) {
    if (r(k, k) < 0.0) {
      for (std::size_t j = k; j < cols; ++j) r(k, j) = -r(k, j);
      for (std::size_t i = 0; i < rows; ++i) q(i, k) = -q(i, k);
    }
  }
  return {std::move(q), std::move(r)};
}

Matrix qf(const Matrix& m) { return qr_positive(m).q; }

std::vector<double> singular_values(const Matrix& m) {
  // Columns of `u` are rotated until mutually orthogonal; their norms are
  // then the singular values.
  Matrix u = m.rows() >= m.cols() ? m.transpose() : m;  // store columns as rows
  const std::size_t n = u.rows();
  const std::size_t len = u.cols();
  const double tol = std::min(1e-14, static_cast<double>(len) *
                                         std::numeric_limits<double>::epsilon());

  for (int sweep = 0; sweep < kMaxJacobiSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        auto up = u.row(p);
        auto uq = u.row(q);
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
          alpha += up[i] * up[i];
          beta += uq[i] * uq[i];
          gamma += up[i] * uq[i];
        }
        if (alpha == 0.0 || beta == 0.0 || gamma == 0.0) continue;
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < len; ++i) {
          const double a = up[i];
          const double b = uq[i];
          up[i] = c * a - s * b;
          uq[i] = s * a + c * b;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sv(n);
  for (std::size_t p = 0; p < n; ++p) {
    double s2 = 0.0;
    for (double x : u.row(p)) s2 += x * x;
    sv[p] = std::sqrt(s2);
  }
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

double frobenius_norm(const Matrix& m) {
  double acc = 0.0;
  for (double x : m.data()) acc += x * x;
  return std::sqrt(acc);
}

double frobenius_dot(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "frobenius_dot");
  double acc = 0.0;
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) acc += ad[i] * bd[i];
  return acc;
}

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix out(rows, cols);
  for (double& x : out.data()) x = rng.normal();
  return out;
}

}  // namespace stiefel_lora
