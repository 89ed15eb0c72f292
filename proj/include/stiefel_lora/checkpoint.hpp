#pragma once

#include <cstdint>
#include <string>

#include "stiefel_lora/adapters.hpp"

namespace stiefel_lora {

/// Training context stored next to the adapter so diagnostics can rebuild
/// the metrics record of the step the checkpoint was taken at.
struct CheckpointInfo {
  std::int64_t step = 0;
  double loss = 0.0;
  std::size_t layer = 0;
};

struct Checkpoint {
  LoraAdapter adapter;
  CheckpointInfo info;
};

/// Writes w0.txt, a.txt, b.txt (matrix text format) and meta.json into `dir`,
/// creating it if needed.
void save_checkpoint(const std::string& dir, const LoraAdapter& adapter,
                     const CheckpointInfo& info);

/// Throws FormatError on a malformed or inconsistent checkpoint.
Checkpoint load_checkpoint(const std::string& dir);

/// True when `dir` holds a single-adapter checkpoint (has meta.json).
bool is_adapter_checkpoint(const std::string& dir);

}  // namespace stiefel_lora
