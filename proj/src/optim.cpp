#include "stiefel_lora/optim.hpp"

#include <cmath>

#include "stiefel_lora/errors.hpp"

namespace stiefel_lora {

namespace {

struct MomentUpdate {
  AdamState state;
  Matrix direction;  // m_hat / (sqrt(v_hat) + eps)
};

MomentUpdate update_moments(const AdamState& state, const Matrix& param, const Matrix& grad,
                            const AdamHyper& h) {
  h.validate();
  require_same_shape(param, grad, "adam: param vs grad");
  require_same_shape(param, state.m, "adam: param vs first moment");
  require_same_shape(param, state.v, "adam: param vs second moment");

  const std::int64_t t = state.t + 1;
  if (!grad.all_finite()) {
    throw GradientError("non-finite gradient entry at optimizer step " + std::to_string(t), t);
  }

  MomentUpdate out{AdamState{state.m, state.v, t}, Matrix(param.rows(), param.cols())};
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  auto m = out.state.m.data();
  auto v = out.state.v.data();
  auto g = grad.data();
  auto dir = out.direction.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
    v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    dir[i] = m_hat / (std::sqrt(v_hat) + h.eps);
  }
  return out;
}

}  // namespace

void AdamHyper::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("adam hyperparameters: " + msg); };
  if (!std::isfinite(lr) || lr <= 0.0) fail("lr must be finite and > 0, got " + format_double(lr));
  if (!std::isfinite(beta1) || beta1 < 0.0 || beta1 >= 1.0)
    fail("beta1 must be in [0, 1), got " + format_double(beta1));
  if (!std::isfinite(beta2) || beta2 < 0.0 || beta2 >= 1.0)
    fail("beta2 must be in [0, 1), got " + format_double(beta2));
  if (!std::isfinite(eps) || eps <= 0.0) fail("eps must be finite and > 0, got " + format_double(eps));
  if (!std::isfinite(weight_decay) || weight_decay < 0.0)
    fail("weight_decay must be finite and >= 0, got " + format_double(weight_decay));
}

AdamState AdamState::zeros_like(const Matrix& param) {
  return {Matrix(param.rows(), param.cols()), Matrix(param.rows(), param.cols()), 0};
}

AdamUpdate adam_step(const AdamState& state, const Matrix& param, const Matrix& grad,
                     const AdamHyper& h) {
  MomentUpdate mu = update_moments(state, param, grad, h);
  Matrix next = param;
  auto p = next.data();
  auto dir = mu.direction.data();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= h.lr * dir[i];
  return {std::move(next), std::move(mu.state)};
}

AdamUpdate adamw_step(const AdamState& state, const Matrix& param, const Matrix& grad,
                      const AdamHyper& h) {
  AdamUpdate out = adam_step(state, param, grad, h);
  if (h.weight_decay != 0.0) {
    auto p = out.param.data();
    auto p0 = param.data();
    const double decay = h.lr * h.weight_decay;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= decay * p0[i];
  }
  return out;
}

StiefelUpdate stiefel_adam_step(const AdamState& state, const StiefelPoint& b,
                                const Matrix& grad, const AdamHyper& h) {
  if (h.weight_decay != 0.0) {
    throw ConfigError("stiefel_adam_step: weight decay is not defined on the Stiefel manifold, got " +
                      format_double(h.weight_decay));
  }
  MomentUpdate mu = update_moments(state, b.value(), grad, h);
  const TangentVector xi = project_tangent(b, mu.direction);
  try {
    return {retract_qr(b, -h.lr * xi.direction), std::move(mu.state)};
  } catch (const RankDeficiencyError& e) {
    throw RankDeficiencyError(std::string(e.what()) + " at optimizer step " +
                                  std::to_string(mu.state.t),
                              e.column());
  }
}

double lr_factor(LrSchedule schedule, std::int64_t t, std::int64_t total_steps) {
  switch (schedule) {
    case LrSchedule::constant:
      return 1.0;
    case LrSchedule::linear:
      // Decays from 1 at t = 1 toward 0; the last step keeps 1/total_steps.
      return 1.0 - static_cast<double>(t - 1) / static_cast<double>(total_steps);
  }
  return 1.0;
}

}  // namespace stiefel_lora
