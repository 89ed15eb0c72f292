#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "stiefel_lora/adapters.hpp"
#include "stiefel_lora/diagnostics.hpp"
#include "stiefel_lora/optim.hpp"

namespace stiefel_lora {

enum class Optimizer { stiefel, adam, adamw };

std::string_view to_string(Optimizer optimizer);
Optimizer parse_optimizer(std::string_view text);
std::string_view to_string(LrSchedule schedule);
LrSchedule parse_lr_schedule(std::string_view text);

/// Spectral scale of the teacher's low-rank shift when none is given.
inline constexpr double kDefaultTeacherMagnitude = 1.0;

struct RunConfig {
  std::size_t d = 64;
  std::size_t k = 32;
  std::size_t r = 8;
  std::size_t r_star = 8;
  /// Unset means alpha = 2r (scaling 2 for plain LoRA).
  std::optional<double> alpha;
  Optimizer optimizer = Optimizer::stiefel;
  /// Euclidean learning rate: A always, B under adam/adamw.
  double lr = kDefaultEuclideanLr;
  /// Manifold step size for B under the stiefel optimizer.
  double stiefel_lr = kDefaultStiefelLr;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::int64_t steps = 2000;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  Variant variant = Variant::lora;
  bool train_a = true;
  bool rslora = false;
  LrSchedule lr_schedule = LrSchedule::constant;
  std::int64_t metrics_every = 100;
  /// Number of adapter-wrapped linear maps; tanh between consecutive ones.
  std::size_t depth = 4;
  std::vector<std::size_t> ranks;     // sweep-rank only
  std::vector<std::uint64_t> seeds;   // sweep-rank only

  double resolved_alpha() const { return alpha.value_or(2.0 * static_cast<double>(r)); }
  BMode b_mode() const { return optimizer == Optimizer::stiefel ? BMode::stiefel : BMode::euclidean; }
  AdapterOptions adapter_options() const;

  /// Throws ConfigError on any out-of-range field.
  void validate() const;
};

/// One layer of the synthetic fine-tuning target: W* = W0 + delta*,
/// where delta* has exact rank r_star.
struct TeacherTask {
  Matrix w0;
  Matrix delta_star;
  Matrix w_star;
  std::size_t r_star = 0;
};

/// delta* = magnitude * U V^T with U, V random Stiefel points.
/// W0 has i.i.d. N(0, 1/k) entries.
TeacherTask make_teacher(std::size_t d, std::size_t k, std::size_t r_star, double magnitude,
                         Rng& rng);

/// Layer 0 maps k -> d, the remaining depth-1 layers map d -> d.
struct TeacherNetwork {
  std::vector<TeacherTask> layers;
};

TeacherNetwork make_teacher_network(const RunConfig& config, double magnitude, Rng& rng);

/// Teacher output: linear maps W*_l with tanh between them.
Matrix teacher_forward(const TeacherNetwork& teacher, const Matrix& x);

struct LossResult {
  double loss;
  Matrix upstream;
};

/// loss = ||pred - target||_F^2 / (2N); upstream = (pred - target) / N.
LossResult loss_and_upstream(const Matrix& pred, const Matrix& target);

struct TrainResult {
  Optimizer optimizer = Optimizer::stiefel;
  std::vector<LoraAdapter> adapters;
  std::vector<MetricsRecord> timeline;
  /// Batch loss at every step, in order.
  std::vector<double> losses;
  /// FNV-1a over the bit patterns of every input batch drawn.
  std::uint64_t batch_digest = 0;
  /// Loss at the last step.
  double final_loss() const { return losses.empty() ? 0.0 : losses.back(); }
};

/// Student network output for a k x N batch.
Matrix network_forward(const std::vector<LoraAdapter>& adapters, const Matrix& x);

struct NetworkGradients {
  double loss = 0.0;
  std::vector<AdapterGradients> layers;
};

/// Forward pass, MSE loss against `target`, and backpropagation through the
/// tanh stack.
NetworkGradients network_gradients(const std::vector<LoraAdapter>& adapters, const Matrix& x,
                                   const Matrix& target);

/// The training loop. Metrics are taken after the update of every step that
/// is a multiple of metrics_every, and after the final step.
/// Numerical failures are rethrown as NumericalError carrying the step.
TrainResult train(const RunConfig& config);
TrainResult train(const RunConfig& config, const TeacherNetwork& teacher);

/// Records of the last recorded step, one per layer.
std::vector<MetricsRecord> final_records(const std::vector<MetricsRecord>& timeline);

/// Layer means over the last recorded step.
MetricsRecord final_layer_mean(const std::vector<MetricsRecord>& timeline);

struct CompareResult {
  TrainResult stiefel;
  TrainResult adamw;
};

/// Same teacher, seeds and batch stream; stiefel (no decay) vs adamw.
CompareResult compare(const RunConfig& config);

struct SweepRun {
  std::size_t rank;
  Optimizer optimizer;
  std::uint64_t seed;
  double eff_rank_dw;  // layer mean at the final step
  double final_loss;
};

struct SweepAggregate {
  std::size_t rank;
  Optimizer optimizer;
  double eff_rank_dw_mean;
};

struct SweepResult {
  std::vector<SweepRun> runs;
  std::vector<SweepAggregate> aggregates;  // rank-major, stiefel before adamw
};

/// compare() for every (rank, seed) pair; seeds defaults to {config.seed}.
/// Runs use up to `workers` threads (0 = hardware concurrency).
SweepResult sweep_rank(const RunConfig& config, unsigned workers = 0);

}  // namespace stiefel_lora
