#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "chef/backbones.hpp"
#include "chef/bridge.hpp"
#include "chef/config.hpp"

namespace chef {

// Checkpoint format, little-endian:
//   magic "CHEF", u32 version (1), u32 config-echo length, config JSON,
//   u32 tensor count, then per tensor: u32 name length, name bytes,
//   u32 ndim, ndim x u32 dims, f32 payload.
// Frozen backbone tensors live under "frozen/", trainables under "bridge/",
// optimizer moments under "opt/". save(load(x)) is byte-identical.

struct CheckpointBundle {
  Config config;
  std::uint64_t step = 0;
  Backbones backbones;
  BridgeParams params;
  std::vector<AdamState> opt_states;  // for_each_param order
};

void save_checkpoint(const std::string& path, const Config& cfg, const Backbones& bb,
                     const BridgeParams& params, const std::vector<AdamState>& opt_states,
                     std::uint64_t step);

CheckpointBundle load_checkpoint(const std::string& path);

}  // namespace chef
