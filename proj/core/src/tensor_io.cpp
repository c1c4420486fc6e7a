#include "chef/tensor_io.hpp"

#include <cstring>
#include <fstream>

#include "chef/error.hpp"

namespace chef {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& path, std::size_t offset,
                      const char* what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (is.gcount() != 4)
    throw FormatError(path + ": truncated reading " + what + " at offset " +
                      std::to_string(offset));
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

}  // namespace

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("save_tensor: cannot open " + path + " for writing");
  os.write("TNSR", 4);
  put_u32(os, 1);
  put_u32(os, static_cast<std::uint32_t>(t.ndim()));
  for (std::size_t d : t.shape) put_u32(os, static_cast<std::uint32_t>(d));
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * 4));
  if (!os) throw IoError("save_tensor: write failed for " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_tensor: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, "TNSR", 4) != 0)
    throw FormatError(path + ": bad magic at offset 0 (expected TNSR)");
  const std::uint32_t version = get_u32(is, path, 4, "version");
  if (version != 1)
    throw FormatError(path + ": unsupported version " + std::to_string(version) + " at offset 4");
  const std::uint32_t ndim = get_u32(is, path, 8, "ndim");
  if (ndim == 0 || ndim > 8)
    throw FormatError(path + ": implausible ndim " + std::to_string(ndim) + " at offset 8");
  std::vector<std::size_t> shape(ndim);
  std::size_t numel = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    shape[i] = get_u32(is, path, 12 + 4 * i, "dimension");
    if (shape[i] == 0) throw FormatError(path + ": zero dimension at index " + std::to_string(i));
    numel *= shape[i];
  }
  Tensor t = Tensor::zeros(shape);
  const std::size_t payload_offset = 12 + 4 * static_cast<std::size_t>(ndim);
  is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(numel * 4));
  if (static_cast<std::size_t>(is.gcount()) != numel * 4)
    throw FormatError(path + ": truncated payload at offset " +
                      std::to_string(payload_offset + static_cast<std::size_t>(is.gcount())));
  char extra;
  if (is.read(&extra, 1))
    throw FormatError(path + ": trailing bytes after payload at offset " +
                      std::to_string(payload_offset + numel * 4));
  return t;
}

}  // namespace chef
