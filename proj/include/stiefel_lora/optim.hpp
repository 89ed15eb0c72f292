#pragma once

#include <cstdint>

#include "stiefel_lora/manifold.hpp"
#include "stiefel_lora/matrix.hpp"

namespace stiefel_lora {

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // AdamW only

  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

/// Default step size on the manifold for the Stiefel branch.
inline constexpr double kDefaultStiefelLr = 0.3;
/// Default Euclidean learning rate (Adam / AdamW).
inline constexpr double kDefaultEuclideanLr = 1e-4;

/// Moments live in the ambient space for both branches.
struct AdamState {
  Matrix m;
  Matrix v;
  std::int64_t t = 0;

  static AdamState zeros_like(const Matrix& param);
};

struct AdamUpdate {
  Matrix param;
  AdamState state;
};

struct StiefelUpdate {
  StiefelPoint point;
  AdamState state;
};

/// Bias-corrected Adam.
AdamUpdate adam_step(const AdamState& state, const Matrix& param, const Matrix& grad,
                     const AdamHyper& h);

/// Adam followed by decoupled decay: param' -= lr * weight_decay * param.
AdamUpdate adamw_step(const AdamState& state, const Matrix& param, const Matrix& grad,
                      const AdamHyper& h);

/// Stiefel-Adam: Euclidean moment update, tangent projection of the
/// preconditioned direction, then a QR retraction along -lr * xi.
/// Weight decay must be zero (ConfigError otherwise).
StiefelUpdate stiefel_adam_step(const AdamState& state, const StiefelPoint& b,
                                const Matrix& grad, const AdamHyper& h);

/// Learning-rate multiplier for step t (1-based) out of `total_steps`.
enum class LrSchedule { constant, linear };
double lr_factor(LrSchedule schedule, std::int64_t t, std::int64_t total_steps);

}  // namespace stiefel_lora
