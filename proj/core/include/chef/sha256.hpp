#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace chef {

// Minimal incremental SHA-256 (FIPS 180-4). Used for determinism and
// frozen-weight checks; not a hot path.
class Sha256 {
 public:
  Sha256();
  void update(const void* data, std::size_t len);
  void update(const std::string& s) { update(s.data(), s.size()); }
  // Finalizes and returns the digest as lowercase hex. The object must not be
  // updated afterwards.
  std::string hex_digest();

 private:
  void process_block(const std::uint8_t* block);

  std::uint32_t h_[8];
  std::uint8_t buffer_[64];
  std::size_t buffer_len_ = 0;
  std::uint64_t total_len_ = 0;
  bool finalized_ = false;
};

std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file_hex(const std::string& path);

}  // namespace chef
