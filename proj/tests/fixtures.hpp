#pragma once

// Shared, lazily built test fixtures. The tiny backbones take a couple of
// seconds (the stand-in LM still pretrains for its fixed step budget), so
// they are built once per process.

#include <cstdlib>
#include <unistd.h>
#include <filesystem>
#include <string>

#include "chef/backbones.hpp"
#include "chef/bridge.hpp"
#include "chef/config.hpp"

namespace fixtures {

inline const chef::Config& tiny_cfg() {
  static const chef::Config cfg = chef::tiny_config();
  return cfg;
}

inline const chef::Backbones& tiny_backbones() {
  static const chef::Backbones bb = chef::build_backbones(7, tiny_cfg().dims);
  return bb;
}

inline const chef::BridgeParams& tiny_bridge() {
  static const chef::BridgeParams p = chef::init_bridge(7, tiny_cfg().dims);
  return p;
}

// Fresh scratch directory under the system temp dir; wiped on creation.
// Keyed by pid so concurrent test invocations cannot clobber each other.
inline std::string scratch_dir(const std::string& name) {
  namespace fs = std::filesystem;
  fs::path p = fs::temp_directory_path() /
               ("chef-test-" + std::to_string(getpid()) + "-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

inline std::string chef_binary() {
  const char* env = std::getenv("CHEF_BIN");
  return env ? env : "";
}

}  // namespace fixtures
