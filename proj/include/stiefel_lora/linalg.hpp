#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "stiefel_lora/matrix.hpp"

namespace stiefel_lora {

/// Seeded deterministic generator. The same (seed, stream) pair always
/// produces the same sequence within one build.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  double normal();
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

Matrix matmul(const Matrix& a, const Matrix& b);
/// a^T * b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a * b^T without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);

/// (x + x^T) / 2, mirrored from the upper triangle so the result is exactly
/// symmetric.
Matrix sym(const Matrix& x);

struct QrResult {
  Matrix q;  // rows x cols, orthonormal columns
  Matrix r;  // cols x cols, upper triangular, positive diagonal
};

/// Threshold on |R_ii| below which a matrix is treated as rank deficient.
inline constexpr double kRankTolerance = 1e-12;

/// Thin Householder QR with the positive-diagonal sign convention.
/// Throws RankDeficiencyError when some |R_ii| < kRankTolerance.
QrResult qr_positive(const Matrix& m);

/// Q factor of qr_positive.
Matrix qf(const Matrix& m);

/// All min(rows, cols) singular values, descending, via one-sided Jacobi.
std::vector<double> singular_values(const Matrix& m);

double frobenius_norm(const Matrix& m);

/// Frobenius inner product <a, b> = trace(a^T b).
double frobenius_dot(const Matrix& a, const Matrix& b);

/// I.i.d. standard normal entries, filled in row-major order.
Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng);

}  // namespace stiefel_lora
