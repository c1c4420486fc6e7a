#pragma once

#include <string>

#include "chef/tensor.hpp"

namespace chef {

// TNSR binary format, little-endian:
//   bytes 0..3   magic "TNSR"
//   bytes 4..7   u32 version (1)
//   bytes 8..11  u32 ndim
//   then ndim x u32 dims, then f32 row-major payload.
// Total size is 12 + 4*ndim + 4*numel bytes; round-trips are bit-exact.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace chef
