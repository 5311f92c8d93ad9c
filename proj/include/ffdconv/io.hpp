#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ffdconv/autograd.hpp"
#include "ffdconv/errors.hpp"
#include "ffdconv/tensor.hpp"

namespace ffdconv {
namespace io {

// ---- little-endian primitives --------------------------------------------------

namespace detail {

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw IoError("truncated binary stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    v |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += sizeof(U);
  return v;
}

inline void put_f32(std::string& out, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  put_le(out, u);
}

inline void put_f64(std::string& out, double f) {
  std::uint64_t u;
  std::memcpy(&u, &f, 8);
  put_le(out, u);
}

inline float get_f32(const std::string& in, std::size_t& pos) {
  std::uint32_t u = get_le<std::uint32_t>(in, pos);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

inline double get_f64(const std::string& in, std::size_t& pos) {
  std::uint64_t u = get_le<std::uint64_t>(in, pos);
  double f;
  std::memcpy(&f, &u, 8);
  return f;
}

template <typename T>
constexpr std::uint8_t dtype_code() {
  return std::is_same_v<T, float> ? 0 : 1;
}

}  // namespace detail

// ---- FFDT tensor blobs ----------------------------------------------------------
// magic "FFDT" | u8 dtype (0 = f32, 1 = f64) | u8 ndim | ndim x u64 dims (LE)
// | row-major payload (LE)

template <typename T>
std::string encode_tensor(const Tensor<T>& t) {
  std::string out;
  out += "FFDT";
  out.push_back(static_cast<char>(detail::dtype_code<T>()));
  out.push_back(static_cast<char>(t.rank()));
  for (std::size_t d = 0; d < t.rank(); ++d) {
    detail::put_le<std::uint64_t>(out, t.dim(d));
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    if constexpr (std::is_same_v<T, float>) {
      detail::put_f32(out, t[i]);
    } else {
      detail::put_f64(out, t[i]);
    }
  }
  return out;
}

// Decodes one FFDT blob starting at `pos`, advancing it. Stored f32/f64 is
// converted to T if they differ.
template <typename T>
Tensor<T> decode_tensor(const std::string& in, std::size_t& pos) {
  if (pos + 6 > in.size() || in.compare(pos, 4, "FFDT") != 0) {
    throw IoError("missing FFDT magic");
  }
  pos += 4;
  auto dtype = static_cast<std::uint8_t>(in[pos++]);
  auto ndim = static_cast<std::uint8_t>(in[pos++]);
  if (dtype > 1) throw IoError("unknown FFDT dtype code " + std::to_string(dtype));
  Shape shape(ndim);
  for (std::size_t d = 0; d < ndim; ++d) {
    shape[d] = static_cast<std::size_t>(detail::get_le<std::uint64_t>(in, pos));
  }
  Tensor<T> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = dtype == 0 ? static_cast<T>(detail::get_f32(in, pos))
                      : static_cast<T>(detail::get_f64(in, pos));
  }
  return t;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write file: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write: " + path);
}

template <typename T>
void write_tensor(const std::string& path, const Tensor<T>& t) {
  write_file(path, encode_tensor(t));
}

template <typename T>
Tensor<T> read_tensor(const std::string& path) {
  std::string bytes = read_file(path);
  std::size_t pos = 0;
  Tensor<T> t = decode_tensor<T>(bytes, pos);
  if (pos != bytes.size()) throw IoError("trailing bytes after tensor in " + path);
  return t;
}

// ---- flat key=value configs -------------------------------------------------------

using KvMap = std::map<std::string, std::string>;

// Lines of "key=value"; blank lines and lines starting with '#' are skipped.
inline KvMap parse_kv(const std::string& text) {
  KvMap kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos || line[start] == '#') continue;
    std::size_t eq = line.find('=', start);
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + " has no '=': " + line);
    }
    std::string key = line.substr(start, eq - start);
    std::string val = line.substr(eq + 1);
    auto strip = [](std::string& s) {
      std::size_t b = s.find_first_not_of(" \t");
      std::size_t e = s.find_last_not_of(" \t");
      s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
    };
    strip(key);
    strip(val);
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + " has empty key");
    kv[key] = val;
  }
  return kv;
}

inline KvMap read_kv_file(const std::string& path) { return parse_kv(read_file(path)); }

// Serialized sorted by key so identical maps produce identical bytes.
inline std::string format_kv(const KvMap& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

// Compact decimal form with enough digits for config-scale constants.
inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(15) << v;
  return os.str();
}

inline long kv_long(const KvMap& kv, const std::string& key, long fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    long v = std::stol(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not an integer: " + it->second);
  }
}

inline double kv_double(const KvMap& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not a number: " + it->second);
  }
}

inline bool kv_bool(const KvMap& kv, const std::string& key, bool fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const std::string& v = it->second;
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ConfigError("config key '" + key + "' is not a boolean: " + v);
}

inline std::string kv_str(const KvMap& kv, const std::string& key, const std::string& fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

// ---- FFDC checkpoints ---------------------------------------------------------------
// magic "FFDC" | u16 version | u32 config length | config key=value block
// | u32 tensor count | per tensor: u16 name length, name, FFDT blob

inline constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
std::string encode_checkpoint(const KvMap& config, const ParamStore<T>& params) {
  std::string out;
  out += "FFDC";
  detail::put_le<std::uint16_t>(out, kCheckpointVersion);
  std::string cfg = format_kv(config);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.count()));
  for (std::size_t i = 0; i < params.count(); ++i) {
    const auto& p = params.at(i);
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(p.name.size()));
    out += p.name;
    out += encode_tensor(p.value);
  }
  return out;
}

template <typename T>
void save_checkpoint(const std::string& path, const KvMap& config, const ParamStore<T>& params) {
  write_file(path, encode_checkpoint(config, params));
}

inline KvMap read_checkpoint_config(const std::string& path) {
  std::string bytes = read_file(path);
  if (bytes.size() < 10 || bytes.compare(0, 4, "FFDC") != 0) {
    throw IoError("not an FFDC checkpoint: " + path);
  }
  std::size_t pos = 4;
  auto version = detail::get_le<std::uint16_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  }
  auto cfg_len = detail::get_le<std::uint32_t>(bytes, pos);
  if (pos + cfg_len > bytes.size()) throw IoError("truncated checkpoint config: " + path);
  return parse_kv(bytes.substr(pos, cfg_len));
}

// Loads parameters into an existing store; every name/shape must match, which
// pins the checkpoint to the architecture that created it.
template <typename T>
KvMap load_checkpoint(const std::string& path, ParamStore<T>& params) {
  std::string bytes = read_file(path);
  if (bytes.size() < 10 || bytes.compare(0, 4, "FFDC") != 0) {
    throw IoError("not an FFDC checkpoint: " + path);
  }
  std::size_t pos = 4;
  auto version = detail::get_le<std::uint16_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  }
  auto cfg_len = detail::get_le<std::uint32_t>(bytes, pos);
  if (pos + cfg_len > bytes.size()) throw IoError("truncated checkpoint config: " + path);
  KvMap config = parse_kv(bytes.substr(pos, cfg_len));
  pos += cfg_len;
  auto count = detail::get_le<std::uint32_t>(bytes, pos);
  if (count != params.count()) {
    throw IoError("checkpoint has " + std::to_string(count) + " tensors, model expects " +
                  std::to_string(params.count()) + ": " + path);
  }
  for (std::size_t i = 0; i < count; ++i) {
    auto name_len = detail::get_le<std::uint16_t>(bytes, pos);
    if (pos + name_len > bytes.size()) throw IoError("truncated checkpoint name: " + path);
    std::string name = bytes.substr(pos, name_len);
    pos += name_len;
    Tensor<T> value = decode_tensor<T>(bytes, pos);
    Parameter<T>* p = params.find(name);
    if (!p) throw IoError("checkpoint tensor '" + name + "' not in model: " + path);
    if (!p->value.same_shape(value)) {
      throw IoError("checkpoint tensor '" + name + "' has shape " + shape_str(value.shape()) +
                    ", model expects " + shape_str(p->value.shape()) + ": " + path);
    }
    p->value = std::move(value);
  }
  if (pos != bytes.size()) throw IoError("trailing bytes in checkpoint: " + path);
  return config;
}

}  // namespace io
}  // namespace ffdconv
