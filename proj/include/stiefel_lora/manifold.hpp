#pragma once

#include "stiefel_lora/linalg.hpp"
#include "stiefel_lora/matrix.hpp"

namespace stiefel_lora {

/// Membership tolerance on ||X^T X - I||_F for a StiefelPoint.
inline constexpr double kStiefelTolerance = 1e-10;

/// A d x r matrix with orthonormal columns (d >= r).
///
/// Construction verifies the invariant and throws ManifoldError otherwise, so
/// every live StiefelPoint is on St(d, r) to within kStiefelTolerance.
class StiefelPoint {
 public:
  explicit StiefelPoint(Matrix value);

  const Matrix& value() const noexcept { return value_; }
  std::size_t ambient_dim() const noexcept { return value_.rows(); }
  std::size_t rank() const noexcept { return value_.cols(); }

 private:
  Matrix value_;
};

/// A direction in the tangent space at `at`: at^T xi is skew-symmetric.
struct TangentVector {
  StiefelPoint at;
  Matrix direction;
};

/// ||b^T b - I||_F. Requires b.rows() >= b.cols().
double ortho_error(const Matrix& b);

/// qf of a d x r Gaussian matrix.
StiefelPoint random_stiefel(std::size_t d, std::size_t r, Rng& rng);

/// Euclidean-metric projection xi = M - B sym(B^T M).
TangentVector project_tangent(const StiefelPoint& b, const Matrix& ambient);

/// ||B^T xi + xi^T B||_F; zero for an exact tangent vector.
double tangent_residual(const StiefelPoint& b, const Matrix& direction);

/// QR retraction qf(B + step). The caller owns the sign and scale of `step`.
StiefelPoint retract_qr(const StiefelPoint& b, const Matrix& step);

}  // namespace stiefel_lora
