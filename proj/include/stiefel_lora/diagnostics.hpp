#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "stiefel_lora/adapters.hpp"
#include "stiefel_lora/matrix.hpp"

namespace stiefel_lora {

/// Singular values at or below this are dropped by effective_rank.
inline constexpr double kEffectiveRankEps = 1e-9;

/// exp of the Shannon entropy of the normalized positive singular values.
/// Returns 0 for a (numerically) zero matrix.
double effective_rank(const Matrix& m, double eps = kEffectiveRankEps);

struct CosineStats {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

/// Statistics of the cosines between all r(r-1)/2 unordered column pairs.
/// Requires r >= 2 (ConfigError) and no zero columns (DegenerateError).
CosineStats cosine_stats(const Matrix& b);

/// r x r matrix of column cosines (unit diagonal).
Matrix cosine_matrix(const Matrix& b);

struct MetricsRecord {
  std::int64_t step = 0;
  std::size_t layer = 0;
  double loss = 0.0;
  double ortho_error_b = 0.0;
  double eff_rank_b = 0.0;
  double eff_rank_a = 0.0;
  double eff_rank_dw = 0.0;
  double cos_mean = 0.0;
  double cos_std = 0.0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

/// Reads every metric off the adapter's current A, B and dW = s B A.
/// Rank-1 adapters have no column pairs and report cos_mean = cos_std = 0.
MetricsRecord snapshot(const LoraAdapter& adapter, std::int64_t step, double loss,
                       std::size_t layer);

inline constexpr const char* kMetricsCsvHeader =
    "step,layer,loss,ortho_error_b,eff_rank_b,eff_rank_a,eff_rank_dw,cos_mean,cos_std";

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRecord>& records);
void save_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> read_metrics_csv(std::istream& in);
std::vector<MetricsRecord> load_metrics_csv(const std::string& path);

}  // namespace stiefel_lora
