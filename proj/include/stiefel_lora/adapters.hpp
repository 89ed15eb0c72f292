#pragma once

#include <string_view>
#include <variant>
#include <vector>

#include "stiefel_lora/linalg.hpp"
#include "stiefel_lora/manifold.hpp"
#include "stiefel_lora/matrix.hpp"

namespace stiefel_lora {

/// Geometry of the B factor.
enum class BMode { stiefel, euclidean };
enum class Variant { lora, dora };

std::string_view to_string(BMode mode);
std::string_view to_string(Variant variant);
BMode parse_b_mode(std::string_view text);
Variant parse_variant(std::string_view text);

/// Smallest column norm accepted by the DoRA normalization.
inline constexpr double kDoraMinColumnNorm = 1e-12;

struct AdapterOptions {
  std::size_t rank = 8;
  double alpha = 16.0;
  BMode mode = BMode::stiefel;
  Variant variant = Variant::lora;
  bool train_a = true;
  /// alpha / sqrt(r) instead of alpha / r.
  bool rslora = false;
};

/// Low-rank adapter over a frozen base weight: W = W0 + s B A (lora), or the
/// column-renormalized DoRA form.
///
/// W0 is d x k, A is r x k, B is d x r. The base weight is only readable;
/// A and B are replaced wholesale by the training loop.
class LoraAdapter {
 public:
  LoraAdapter(Matrix w0, Matrix a, std::variant<Matrix, StiefelPoint> b, AdapterOptions options,
              std::vector<double> dora_magnitude = {});

  const Matrix& w0() const noexcept { return w0_; }
  const Matrix& a() const noexcept { return a_; }
  const Matrix& b() const;
  /// Throws ConfigError unless mode() == stiefel.
  const StiefelPoint& b_point() const;

  std::size_t out_dim() const noexcept { return w0_.rows(); }
  std::size_t in_dim() const noexcept { return w0_.cols(); }
  std::size_t rank() const noexcept { return options_.rank; }
  double alpha() const noexcept { return options_.alpha; }
  double scaling() const noexcept { return scaling_; }
  bool train_a() const noexcept { return options_.train_a; }
  BMode mode() const noexcept { return options_.mode; }
  Variant variant() const noexcept { return options_.variant; }
  bool rslora() const noexcept { return options_.rslora; }
  const AdapterOptions& options() const noexcept { return options_; }
  const std::vector<double>& dora_magnitude() const noexcept { return dora_magnitude_; }

  void set_a(Matrix a);
  void set_b(Matrix b);
  void set_b(StiefelPoint b);

 private:
  Matrix w0_;
  Matrix a_;
  std::variant<Matrix, StiefelPoint> b_;
  AdapterOptions options_;
  double scaling_;
  std::vector<double> dora_magnitude_;
};

/// Stiefel mode draws B on St(d, r); euclidean mode draws B ~ N(0, 1/d).
/// A is zero when trainable (so B A = 0 at step 0), otherwise N(0, 1/r).
LoraAdapter init_adapter(const Matrix& w0, const AdapterOptions& options, Rng& rng);

/// s * B * A.
Matrix delta_weight(const LoraAdapter& ad);

/// The dense weight the adapter applies to its input.
Matrix effective_weight(const LoraAdapter& ad);

/// Layer output for a k x N input batch.
Matrix forward(const LoraAdapter& ad, const Matrix& x);

struct AdapterGradients {
  Matrix grad_a;  // zero when train_a is false
  Matrix grad_b;
};

/// Gradients of the loss w.r.t. A and B given upstream = dLoss/dOutput.
AdapterGradients gradients(const LoraAdapter& ad, const Matrix& x, const Matrix& upstream);

/// dLoss/dInput = W_eff^T * upstream, for backpropagating through a stack.
Matrix input_gradient(const LoraAdapter& ad, const Matrix& upstream);

}  // namespace stiefel_lora
