#pragma once

#include <cstdint>
#include <string>

#include "chef/adam.hpp"

namespace chef {

// Model and backbone dimensions. Defaults are the desk-scale configuration;
// k=4 visual tokens and m=8 [IMG] tokens. V is not configured: it is derived
// from the fixed grammar and echoed into checkpoints.
struct DimsConfig {
  std::size_t e = 64;   // LM embedding width
  std::size_t d = 32;   // visual embedding width
  std::size_t k = 4;    // visual prefix length
  std::size_t m = 8;    // number of [IMG] tokens
  std::size_t L = 16;   // conditioning rows (text-to-image input length)
  std::size_t r = 32;   // conditioning width / query dimension
  std::size_t H = 16;
  std::size_t W = 16;
  std::size_t C = 3;
  std::size_t max_seq = 128;
};

struct TrainingConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 16;
  std::uint64_t seed = 7;
};

struct Config {
  DimsConfig dims;
  AdamHyper optimizer;
  TrainingConfig training;
};

// Tiny configuration used by gradient checks.
Config tiny_config();

// Minimal TOML subset: [section] headers, key = value with integer, float,
// string and boolean values, and # comments. Unknown keys are errors.
Config parse_config_toml(const std::string& text, const std::string& origin);
Config load_config_toml(const std::string& path);

// Deterministic JSON echo (sorted keys) used by the checkpoint format.
std::string config_to_json(const Config& cfg, std::uint64_t vocab_base, std::uint64_t step);
struct ConfigEcho {
  Config config;
  std::uint64_t vocab_base = 0;
  std::uint64_t step = 0;
};
ConfigEcho config_from_json(const std::string& text);

void validate_config(const Config& cfg);

}  // namespace chef
