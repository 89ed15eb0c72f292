#include "stiefel_lora/manifold.hpp"

#include "stiefel_lora/errors.hpp"

namespace stiefel_lora {

StiefelPoint::StiefelPoint(Matrix value) : value_(std::move(value)) {
  if (value_.rows() < value_.cols()) {
    throw ShapeError("StiefelPoint: expected rows >= cols, got " + value_.shape_string());
  }
  const double err = ortho_error(value_);
  if (!(err <= kStiefelTolerance)) {
    throw ManifoldError("StiefelPoint: ||X^T X - I||_F = " + format_double(err) +
                        " exceeds " + format_double(kStiefelTolerance));
  }
}

double ortho_error(const Matrix& b) {
  if (b.rows() < b.cols()) {
    throw ShapeError("ortho_error: expected rows >= cols, got " + b.shape_string());
  }
  Matrix gram = matmul_tn(b, b);
  for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) -= 1.0;
  return frobenius_norm(gram);
}

StiefelPoint random_stiefel(std::size_t d, std::size_t r, Rng& rng) {
  if (d < r || r == 0) {
    throw ShapeError("random_stiefel: need d >= r >= 1, got d=" + std::to_string(d) +
                     " r=" + std::to_string(r));
  }
  return StiefelPoint(qf(gaussian_matrix(d, r, rng)));
}

TangentVector project_tangent(const StiefelPoint& b, const Matrix& ambient) {
  require_same_shape(b.value(), ambient, "project_tangent");
  Matrix xi = ambient - matmul(b.value(), sym(matmul_tn(b.value(), ambient)));
  return {b, std::move(xi)};
}

double tangent_residual(const StiefelPoint& b, const Matrix& direction) {
  require_same_shape(b.value(), direction, "tangent_residual");
  const Matrix bt_xi = matmul_tn(b.value(), direction);
  return frobenius_norm(bt_xi + bt_xi.transpose());
}

StiefelPoint retract_qr(const StiefelPoint& b, const Matrix& step) {
  require_same_shape(b.value(), step, "retract_qr");
  try {
    return StiefelPoint(qf(b.value() + step));
  } catch (const RankDeficiencyError& e) {
    throw RankDeficiencyError(std::string("retract_qr: ") + e.what() +
                                  " (step norm " + format_double(frobenius_norm(step)) + ")",
                              e.column());
  }
}

}  // namespace stiefel_lora
