#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ibp/network.hpp"

namespace ibp {

enum class OptimizerKind { Adam, Sgd };

struct CheckpointMeta {
  int epoch = -1;
  double epsilon = 0;
  double kappa = 1;
  std::uint64_t seed = 0;
};

// Optimizer buffers, in the same order as the parameter payloads
// (per layer: weight then bias).
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Adam;
  std::int64_t step = 0;
  std::vector<Tensor<float>> first_moment;
  std::vector<Tensor<float>> second_moment;
};

struct Checkpoint {
  Network<float> net;
  CheckpointMeta meta;
  std::optional<OptimizerState> optimizer;
};

// Container layout: "IBPC" magic, little-endian u32 format version, a textual
// manifest (network spec and training metadata), then shape-prefixed
// little-endian float32 payloads in layer order (weight, bias per layer),
// followed by optimizer moment payloads when present. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const Network<float>& net,
                     const CheckpointMeta& meta, const OptimizerState* optimizer = nullptr);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace ibp
