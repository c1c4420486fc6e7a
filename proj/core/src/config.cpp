#include "chef/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "chef/error.hpp"

using json = nlohmann::json;

namespace chef {

Config tiny_config() {
  Config cfg;
  cfg.dims.e = 8;
  cfg.dims.d = 4;
  cfg.dims.k = 2;
  cfg.dims.m = 2;
  cfg.dims.L = 2;
  cfg.dims.r = 4;
  cfg.dims.max_seq = 96;
  cfg.training.batch_size = 4;
  return cfg;
}

void validate_config(const Config& cfg) {
  const auto& d = cfg.dims;
  for (std::size_t v : {d.e, d.d, d.k, d.m, d.L, d.r, d.H, d.W, d.C, d.max_seq})
    if (v < 1) throw DimError("config: all dimensions must be >= 1");
  if (d.e % 4 != 0 || d.r % 4 != 0)
    throw DimError("config: e and r must be divisible by the 4 attention heads");
  if (d.max_seq <= d.k + 2 || d.max_seq <= d.m + 1)
    throw DimError("config: max_seq must leave room for the visual prefix and the [IMG] run");
  if (cfg.training.batch_size < 1) throw DimError("config: batch_size must be >= 1");
  if (cfg.optimizer.lr < 0 || cfg.optimizer.eps <= 0)
    throw DimError("config: invalid optimizer hyperparameters");
}

namespace {

struct TomlValue {
  std::string raw;
  std::string origin;
  int line = 0;

  std::string where() const { return origin + ":" + std::to_string(line); }

  double as_double() const {
    try {
      std::size_t pos = 0;
      double v = std::stod(raw, &pos);
      if (pos != raw.size()) throw std::invalid_argument(raw);
      return v;
    } catch (const std::exception&) {
      throw FormatError(where() + ": expected a number, got \"" + raw + "\"");
    }
  }

  std::uint64_t as_uint() const {
    try {
      std::size_t pos = 0;
      unsigned long long v = std::stoull(raw, &pos);
      if (pos != raw.size()) throw std::invalid_argument(raw);
      return v;
    } catch (const std::exception&) {
      throw FormatError(where() + ": expected a non-negative integer, got \"" + raw + "\"");
    }
  }
};

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

Config parse_config_toml(const std::string& text, const std::string& origin) {
  Config cfg;
  std::istringstream is(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw FormatError(origin + ":" + std::to_string(line_no) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "dims" && section != "optimizer" && section != "training")
        throw FormatError(origin + ":" + std::to_string(line_no) + ": unknown section [" +
                          section + "]");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    std::string raw = trim(line.substr(eq + 1));
    if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"')
      raw = raw.substr(1, raw.size() - 2);
    TomlValue v{raw, origin, line_no};

    const std::string full = section.empty() ? key : section + "." + key;
    if (full == "dims.e") cfg.dims.e = v.as_uint();
    else if (full == "dims.d") cfg.dims.d = v.as_uint();
    else if (full == "dims.k") cfg.dims.k = v.as_uint();
    else if (full == "dims.m") cfg.dims.m = v.as_uint();
    else if (full == "dims.L") cfg.dims.L = v.as_uint();
    else if (full == "dims.r") cfg.dims.r = v.as_uint();
    else if (full == "dims.H") cfg.dims.H = v.as_uint();
    else if (full == "dims.W") cfg.dims.W = v.as_uint();
    else if (full == "dims.C") cfg.dims.C = v.as_uint();
    else if (full == "dims.max_seq") cfg.dims.max_seq = v.as_uint();
    else if (full == "optimizer.lr") cfg.optimizer.lr = v.as_double();
    else if (full == "optimizer.beta1") cfg.optimizer.beta1 = v.as_double();
    else if (full == "optimizer.beta2") cfg.optimizer.beta2 = v.as_double();
    else if (full == "optimizer.eps") cfg.optimizer.eps = v.as_double();
    else if (full == "training.steps") cfg.training.steps = v.as_uint();
    else if (full == "training.batch_size") cfg.training.batch_size = v.as_uint();
    else if (full == "training.seed") cfg.training.seed = v.as_uint();
    else
      throw FormatError(origin + ":" + std::to_string(line_no) + ": unknown key \"" + full +
                        "\"");
  }
  validate_config(cfg);
  return cfg;
}

Config load_config_toml(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_config_toml: cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_toml(buf.str(), path);
}

std::string config_to_json(const Config& cfg, std::uint64_t vocab_base, std::uint64_t step) {
  json j;
  j["dims"] = {{"e", cfg.dims.e}, {"d", cfg.dims.d}, {"k", cfg.dims.k},
               {"m", cfg.dims.m}, {"L", cfg.dims.L}, {"r", cfg.dims.r},
               {"H", cfg.dims.H}, {"W", cfg.dims.W}, {"C", cfg.dims.C},
               {"max_seq", cfg.dims.max_seq}};
  j["optimizer"] = {{"lr", cfg.optimizer.lr},
                    {"beta1", cfg.optimizer.beta1},
                    {"beta2", cfg.optimizer.beta2},
                    {"eps", cfg.optimizer.eps}};
  j["training"] = {{"steps", cfg.training.steps},
                   {"batch_size", cfg.training.batch_size},
                   {"seed", cfg.training.seed}};
  j["vocab_base"] = vocab_base;
  j["step"] = step;
  return j.dump();
}

ConfigEcho config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("config echo: malformed JSON: ") + e.what());
  }
  ConfigEcho out;
  try {
    auto& d = j.at("dims");
    out.config.dims.e = d.at("e").get<std::size_t>();
    out.config.dims.d = d.at("d").get<std::size_t>();
    out.config.dims.k = d.at("k").get<std::size_t>();
    out.config.dims.m = d.at("m").get<std::size_t>();
    out.config.dims.L = d.at("L").get<std::size_t>();
    out.config.dims.r = d.at("r").get<std::size_t>();
    out.config.dims.H = d.at("H").get<std::size_t>();
    out.config.dims.W = d.at("W").get<std::size_t>();
    out.config.dims.C = d.at("C").get<std::size_t>();
    out.config.dims.max_seq = d.at("max_seq").get<std::size_t>();
    auto& o = j.at("optimizer");
    out.config.optimizer.lr = o.at("lr").get<double>();
    out.config.optimizer.beta1 = o.at("beta1").get<double>();
    out.config.optimizer.beta2 = o.at("beta2").get<double>();
    out.config.optimizer.eps = o.at("eps").get<double>();
    auto& t = j.at("training");
    out.config.training.steps = t.at("steps").get<std::size_t>();
    out.config.training.batch_size = t.at("batch_size").get<std::size_t>();
    out.config.training.seed = t.at("seed").get<std::uint64_t>();
    out.vocab_base = j.at("vocab_base").get<std::uint64_t>();
    out.step = j.at("step").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("config echo: missing field: ") + e.what());
  }
  return out;
}

}  // namespace chef
