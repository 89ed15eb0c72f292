#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace stiefel_lora {

/// Stable process exit codes.
enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitNumerical = 2 };

/// metrics.csv, summary.json and checkpoint/layer_<i>/ under out_dir.
int run_train(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed, std::ostream& log);

/// metrics_stiefel.csv, metrics_adamw.csv and comparison.json under out_dir.
int run_compare(const std::string& config_path, const std::string& out_dir,
                std::optional<std::uint64_t> seed, std::ostream& log);

/// rank_sweep.csv (per rank and optimizer) and rank_sweep_runs.csv (per seed).
int run_sweep_rank(const std::string& config_path, const std::string& out_dir,
                   std::optional<std::uint64_t> seed, std::ostream& log);

/// metrics.csv with one snapshot per adapter and cosine_matrix_layer<i>.txt.
/// Accepts an adapter checkpoint or a directory of layer_<i> checkpoints.
int run_diagnose(const std::string& checkpoint_dir, const std::string& out_dir, std::ostream& log);

/// Full command line entry point.
int run_cli(int argc, char** argv);

}  // namespace stiefel_lora
