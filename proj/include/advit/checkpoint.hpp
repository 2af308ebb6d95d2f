#pragma once

// Binary container for models, datasets and perturbation dumps.
//
// Layout, all integers little-endian:
//   magic   "PGRD"  (4 bytes)
//   version u32     (currently 1)
//   kind    u8      (0 = vit model, 1 = cnn model, 2 = dataset, 3 = perturbation)
//   config  u32 byte length, then that many bytes of UTF-8 "key=value\n" lines
//   count   u32     number of tensors
//   per tensor: name length u16, name bytes, ndim u8, each dim u32,
//               payload of numel float64 values
//   crc     u32     CRC-32 (IEEE, reflected) of every byte before it

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "advit/model.hpp"
#include "advit/tensor.hpp"

namespace advit {

enum class CheckpointFault {
  io,
  bad_magic,
  bad_version,
  truncated,
  bad_structure,
  shape_mismatch,
  crc_mismatch,
};

struct CheckpointError : std::runtime_error {
  CheckpointFault fault;
  CheckpointError(CheckpointFault f, const std::string& msg)
      : std::runtime_error(msg), fault(f) {}
};

inline std::uint32_t crc32_ieee(const std::uint8_t* data, std::size_t n,
                                std::uint32_t crc = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc ^= 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

struct Container {
  std::uint8_t kind = 0;
  std::vector<std::pair<std::string, std::string>> config;  // ordered key=value lines
  std::map<std::string, Tensor> tensors;

  std::string config_value(const std::string& key) const {
    for (const auto& [k, v] : config)
      if (k == key) return v;
    throw CheckpointError(CheckpointFault::bad_structure, "container: missing config key " + key);
  }
  bool has_config(const std::string& key) const {
    for (const auto& [k, v] : config)
      if (k == key) return true;
    return false;
  }
};

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_f64(std::vector<std::uint8_t>& b, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(b, bits);
}

struct Reader {
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) {
      throw CheckpointError(CheckpointFault::truncated,
                            "container: truncated file (needed " + std::to_string(n) +
                            " bytes at offset " + std::to_string(pos) + ")");
    }
  }
  std::uint8_t u8() {
    need(1);
    return buf[pos++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(buf[pos]) |
                      static_cast<std::uint16_t>(buf[pos + 1]) << 8;
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
    pos += 8;
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(&buf[pos]), n);
    pos += n;
    return s;
  }
};

}  // namespace detail

constexpr std::uint32_t kContainerVersion = 1;

inline std::vector<std::uint8_t> serialize_container(const Container& c) {
  std::vector<std::uint8_t> b;
  b.push_back('P');
  b.push_back('G');
  b.push_back('R');
  b.push_back('D');
  detail::put_u32(b, kContainerVersion);
  b.push_back(c.kind);
  std::string cfg;
  for (const auto& [k, v] : c.config) cfg += k + "=" + v + "\n";
  detail::put_u32(b, static_cast<std::uint32_t>(cfg.size()));
  b.insert(b.end(), cfg.begin(), cfg.end());
  detail::put_u32(b, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    detail::put_u16(b, static_cast<std::uint16_t>(name.size()));
    b.insert(b.end(), name.begin(), name.end());
    b.push_back(static_cast<std::uint8_t>(t.ndim()));
    for (std::size_t d : t.shape) detail::put_u32(b, static_cast<std::uint32_t>(d));
    for (double v : t.data) detail::put_f64(b, v);
  }
  detail::put_u32(b, crc32_ieee(b.data(), b.size()));
  return b;
}

inline Container parse_container(const std::vector<std::uint8_t>& buf) {
  detail::Reader r{buf};
  if (r.bytes(4) != "PGRD") {
    throw CheckpointError(CheckpointFault::bad_magic, "container: bad magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kContainerVersion) {
    throw CheckpointError(CheckpointFault::bad_version,
                          "container: unsupported version " + std::to_string(version));
  }
  Container c;
  c.kind = r.u8();
  const std::uint32_t cfg_len = r.u32();
  std::istringstream cfg(r.bytes(cfg_len));
  std::string line;
  while (std::getline(cfg, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw CheckpointError(CheckpointFault::bad_structure,
                            "container: malformed config line '" + line + "'");
    }
    c.config.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16();
    std::string name = r.bytes(name_len);
    const std::uint8_t ndim = r.u8();
    Shape shape(ndim);
    for (std::uint8_t d = 0; d < ndim; ++d) shape[d] = r.u32();
    Tensor t(shape);
    for (std::size_t j = 0; j < t.numel(); ++j) t.data[j] = r.f64();
    c.tensors.emplace(std::move(name), std::move(t));
  }
  const std::size_t body_end = r.pos;
  const std::uint32_t stored_crc = r.u32();
  if (r.pos != buf.size()) {
    throw CheckpointError(CheckpointFault::bad_structure,
                          "container: trailing bytes after checksum");
  }
  if (crc32_ieee(buf.data(), body_end) != stored_crc) {
    throw CheckpointError(CheckpointFault::crc_mismatch, "container: checksum mismatch");
  }
  return c;
}

inline void write_container(const std::string& path, const Container& c) {
  std::vector<std::uint8_t> bytes = serialize_container(c);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError(CheckpointFault::io, "cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError(CheckpointFault::io, "write failed: " + path);
}

inline Container read_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointFault::io, "cannot open for reading: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return parse_container(bytes);
}

// ---------------------------------------------------------------------------
// model checkpoints on top of the container

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

inline std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(std::stoull(tok));
  return out;
}

inline void save_checkpoint(const ModelHandle& m, const std::string& path) {
  Container c;
  c.kind = static_cast<std::uint8_t>(m.kind);
  c.config.emplace_back("label", m.label);
  if (m.kind == ModelKind::vit) {
    const ViTConfig& v = m.vit;
    c.config.emplace_back("image_h", std::to_string(v.image_h));
    c.config.emplace_back("image_w", std::to_string(v.image_w));
    c.config.emplace_back("channels", std::to_string(v.channels));
    c.config.emplace_back("patch_size", std::to_string(v.patch_size));
    c.config.emplace_back("embed_dim", std::to_string(v.embed_dim));
    c.config.emplace_back("head_dim", std::to_string(v.head_dim));
    c.config.emplace_back("num_heads", std::to_string(v.num_heads));
    c.config.emplace_back("depth", std::to_string(v.depth));
    c.config.emplace_back("mlp_hidden", std::to_string(v.mlp_hidden));
    c.config.emplace_back("num_classes", std::to_string(v.num_classes));
    c.config.emplace_back("use_class_token", v.use_class_token ? "1" : "0");
  } else {
    const CNNConfig& n = m.cnn;
    c.config.emplace_back("image_h", std::to_string(n.image_h));
    c.config.emplace_back("image_w", std::to_string(n.image_w));
    c.config.emplace_back("channels", std::to_string(n.channels));
    c.config.emplace_back("conv_channels", join_sizes(n.conv_channels));
    c.config.emplace_back("kernel_size", std::to_string(n.kernel_size));
    c.config.emplace_back("pool_after", join_sizes(n.pool_after));
    c.config.emplace_back("num_classes", std::to_string(n.num_classes));
  }
  for (const auto& [name, t] : m.params) c.tensors.emplace(name, t);
  write_container(path, c);
}

inline ModelHandle load_checkpoint(const std::string& path) {
  Container c = read_container(path);
  if (c.kind > 1) {
    throw CheckpointError(CheckpointFault::bad_structure,
                          "checkpoint: kind byte " + std::to_string(c.kind) +
                          " is not a model");
  }
  ModelHandle m;
  m.kind = static_cast<ModelKind>(c.kind);
  m.label = c.config_value("label");
  std::map<std::string, Shape> expected;
  if (m.kind == ModelKind::vit) {
    ViTConfig& v = m.vit;
    v.image_h = std::stoull(c.config_value("image_h"));
    v.image_w = std::stoull(c.config_value("image_w"));
    v.channels = std::stoull(c.config_value("channels"));
    v.patch_size = std::stoull(c.config_value("patch_size"));
    v.embed_dim = std::stoull(c.config_value("embed_dim"));
    v.head_dim = std::stoull(c.config_value("head_dim"));
    v.num_heads = std::stoull(c.config_value("num_heads"));
    v.depth = std::stoull(c.config_value("depth"));
    v.mlp_hidden = std::stoull(c.config_value("mlp_hidden"));
    v.num_classes = std::stoull(c.config_value("num_classes"));
    v.use_class_token = c.config_value("use_class_token") == "1";
    expected = vit_param_shapes(v);
  } else {
    CNNConfig& n = m.cnn;
    n.image_h = std::stoull(c.config_value("image_h"));
    n.image_w = std::stoull(c.config_value("image_w"));
    n.channels = std::stoull(c.config_value("channels"));
    n.conv_channels = split_sizes(c.config_value("conv_channels"));
    n.kernel_size = std::stoull(c.config_value("kernel_size"));
    n.pool_after = split_sizes(c.config_value("pool_after"));
    n.num_classes = std::stoull(c.config_value("num_classes"));
    expected = cnn_param_shapes(n);
  }
  if (c.tensors.size() != expected.size()) {
    throw CheckpointError(CheckpointFault::shape_mismatch,
                          "checkpoint: header declares " + std::to_string(c.tensors.size()) +
                          " tensors, architecture needs " + std::to_string(expected.size()));
  }
  for (const auto& [name, shape] : expected) {
    auto it = c.tensors.find(name);
    if (it == c.tensors.end()) {
      throw CheckpointError(CheckpointFault::shape_mismatch,
                            "checkpoint: missing tensor " + name);
    }
    if (it->second.shape != shape) {
      throw CheckpointError(CheckpointFault::shape_mismatch,
                            "checkpoint: tensor " + name + " has shape " +
                            shape_str(it->second.shape) + ", architecture needs " +
                            shape_str(shape));
    }
  }
  m.params = std::move(c.tensors);
  return m;
}

}  // namespace advit
