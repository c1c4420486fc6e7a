#include "chef/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace chef {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& path, const char* what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (is.gcount() != 4) throw FormatError(path + ": truncated reading " + what);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

void write_tensor_entry(std::ostream& os, const std::string& name, const Tensor& t) {
  put_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(os, static_cast<std::uint32_t>(t.ndim()));
  for (std::size_t d : t.shape) put_u32(os, static_cast<std::uint32_t>(d));
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * 4));
}

}  // namespace

void save_checkpoint(const std::string& path, const Config& cfg, const Backbones& bb,
                     const BridgeParams& params, const std::vector<AdamState>& opt_states,
                     std::uint64_t step) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("save_checkpoint: cannot open " + path + " for writing");

  std::vector<std::pair<std::string, const Tensor*>> entries;
  for_each_tensor(bb, [&](const std::string& name, const Tensor& t) {
    entries.emplace_back("frozen/" + name, &t);
  });
  params.for_each_param([&](const std::string& name, const Tensor& t) {
    entries.emplace_back("bridge/" + name, &t);
  });
  {
    std::size_t i = 0;
    params.for_each_param([&](const std::string& name, const Tensor&) {
      if (i >= opt_states.size())
        throw DimError("save_checkpoint: optimizer state count mismatch");
      entries.emplace_back("opt/" + name + "/m", &opt_states[i].m);
      entries.emplace_back("opt/" + name + "/v", &opt_states[i].v);
      ++i;
    });
    if (i != opt_states.size())
      throw DimError("save_checkpoint: optimizer state count mismatch");
  }

  const std::string echo =
      config_to_json(cfg, static_cast<std::uint64_t>(bb.vocab.base_size()), step);

  os.write("CHEF", 4);
  put_u32(os, 1);
  put_u32(os, static_cast<std::uint32_t>(echo.size()));
  os.write(echo.data(), static_cast<std::streamsize>(echo.size()));
  put_u32(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) write_tensor_entry(os, name, *t);
  if (!os) throw IoError("save_checkpoint: write failed for " + path);
}

CheckpointBundle load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, "CHEF", 4) != 0)
    throw FormatError(path + ": bad magic (expected CHEF)");
  const std::uint32_t version = get_u32(is, path, "version");
  if (version != 1)
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t echo_len = get_u32(is, path, "config length");
  std::string echo(echo_len, '\0');
  is.read(echo.data(), echo_len);
  if (static_cast<std::uint32_t>(is.gcount()) != echo_len)
    throw FormatError(path + ": truncated config echo");

  ConfigEcho parsed = config_from_json(echo);
  validate_config(parsed.config);

  const std::uint32_t count = get_u32(is, path, "tensor count");
  std::map<std::string, Tensor> table;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = get_u32(is, path, "name length");
    if (name_len == 0 || name_len > 4096)
      throw FormatError(path + ": implausible tensor name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (static_cast<std::uint32_t>(is.gcount()) != name_len)
      throw FormatError(path + ": truncated tensor name");
    const std::uint32_t ndim = get_u32(is, path, "tensor ndim");
    if (ndim == 0 || ndim > 8) throw FormatError(path + ": implausible ndim for " + name);
    std::vector<std::size_t> shape(ndim);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      shape[d] = get_u32(is, path, "tensor dim");
      numel *= shape[d];
    }
    Tensor t = Tensor::zeros(shape);
    is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(numel * 4));
    if (static_cast<std::size_t>(is.gcount()) != numel * 4)
      throw FormatError(path + ": truncated payload for " + name);
    table.emplace(std::move(name), std::move(t));
  }

  CheckpointBundle out;
  out.config = parsed.config;
  out.step = parsed.step;
  out.backbones = backbones_skeleton(parsed.config.dims);
  if (static_cast<std::uint64_t>(out.backbones.vocab.base_size()) != parsed.vocab_base)
    throw FormatError(path + ": vocab size " + std::to_string(parsed.vocab_base) +
                      " in config echo does not match grammar vocabulary " +
                      std::to_string(out.backbones.vocab.base_size()));
  out.backbones.seed = parsed.config.training.seed;

  auto take = [&](const std::string& name, Tensor& dst) {
    auto it = table.find(name);
    if (it == table.end()) throw FormatError(path + ": missing tensor " + name);
    if (it->second.shape != dst.shape)
      throw FormatError(path + ": tensor " + name + " has shape " + shape_str(it->second.shape) +
                        ", config expects " + shape_str(dst.shape));
    dst = std::move(it->second);
    table.erase(it);
  };

  for_each_tensor(out.backbones,
                  [&](const std::string& name, Tensor& t) { take("frozen/" + name, t); });
  out.params = init_bridge(0, parsed.config.dims);
  out.params.for_each_param(
      [&](const std::string& name, Tensor& t) { take("bridge/" + name, t); });
  out.params.for_each_param([&](const std::string& name, Tensor& t) {
    AdamState st = AdamState::fresh(t.shape);
    take("opt/" + name + "/m", st.m);
    take("opt/" + name + "/v", st.v);
    st.t = parsed.step;
    out.opt_states.push_back(std::move(st));
  });
  if (!table.empty())
    throw FormatError(path + ": unexpected tensor " + table.begin()->first);
  return out;
}

}  // namespace chef
