#pragma once

// Named-parameter archive.
//
//   "CAEW"                       4 bytes
//   version                      u32 LE
//   entry count                  u32 LE
//   per entry:
//     name length                u16 LE, then UTF-8 name bytes
//     rank                       u8, then rank x u32 LE dims
//     values                     prod(dims) x float32 LE

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "sslgrade/error.hpp"
#include "sslgrade/model.hpp"

namespace sslgrade {

inline constexpr char kCheckpointMagic[4] = {'C', 'A', 'E', 'W'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  bool operator==(const CheckpointEntry&) const = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::vector<CheckpointEntry> entries;

  bool operator==(const Checkpoint&) const = default;
};

namespace detail {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

template <class T>
void put_le(std::string& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>(u & 0xFFu));
    u = static_cast<U>(u >> 8);
  }
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T get_le(const char* what) {
    need(sizeof(T), what);
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }

  std::string get_bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic, 4);
  detail::put_le<std::uint32_t>(out, ckpt.version);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    if (e.name.size() > 0xFFFF) throw FormatError("parameter name too long: " + e.name);
    if (e.dims.size() > 0xFF) throw FormatError("parameter rank too large: " + e.name);
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out += e.name;
    out.push_back(static_cast<char>(e.dims.size()));
    std::size_t count = 1;
    for (auto d : e.dims) {
      detail::put_le<std::uint32_t>(out, d);
      count *= d;
    }
    if (count != e.values.size()) throw FormatError("entry " + e.name + " has inconsistent dims");
    for (float v : e.values) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  detail::Reader in(bytes);
  if (in.get_bytes(4, "magic") != std::string(kCheckpointMagic, 4))
    throw FormatError("not a checkpoint: bad magic bytes");
  Checkpoint ckpt;
  ckpt.version = in.get_le<std::uint32_t>("version");
  if (ckpt.version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(ckpt.version));
  const auto count = in.get_le<std::uint32_t>("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto len = in.get_le<std::uint16_t>("name length");
    e.name = in.get_bytes(len, "name");
    const auto rank = in.get_le<std::uint8_t>("rank");
    std::size_t n = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      e.dims.push_back(in.get_le<std::uint32_t>("dims"));
      n *= e.dims.back();
    }
    e.values.resize(n);
    for (auto& v : e.values) v = std::bit_cast<float>(in.get_le<std::uint32_t>("values"));
    ckpt.entries.push_back(std::move(e));
  }
  if (!in.done()) throw FormatError("trailing bytes after checkpoint entries");
  return ckpt;
}

template <class Real>
Checkpoint make_checkpoint(const ModelGraph<Real>& g) {
  Checkpoint ckpt;
  for (const auto& p : parameters(g)) {
    CheckpointEntry e;
    e.name = p.name;
    for (auto d : p.dims) e.dims.push_back(static_cast<std::uint32_t>(d));
    e.values.assign(p.values.begin(), p.values.end());
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

// Every graph parameter must be present with identical dims, and every entry
// must name a graph parameter.
template <class Real>
void apply_checkpoint(const Checkpoint& ckpt, ModelGraph<Real>& g) {
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : ckpt.entries) by_name[e.name] = &e;
  auto params = parameters(g);
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw FormatError("checkpoint has no entry for parameter " + p.name);
    std::vector<std::uint32_t> dims(p.dims.begin(), p.dims.end());
    if (it->second->dims != dims) throw FormatError("checkpoint entry " + p.name + " has mismatched dims");
  }
  if (by_name.size() != params.size()) {
    for (const auto& e : ckpt.entries) {
      bool known = false;
      for (const auto& p : params) known = known || p.name == e.name;
      if (!known) throw FormatError("checkpoint entry " + e.name + " does not match any graph parameter");
    }
  }
  for (auto& p : params) {
    const auto& src = by_name[p.name]->values;
    std::copy(src.begin(), src.end(), p.values.begin());
  }
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

template <class Real>
void save_checkpoint(const ModelGraph<Real>& g, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(make_checkpoint(g)));
}

template <class Real>
void load_checkpoint(ModelGraph<Real>& g, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path.string());
  apply_checkpoint(decode_checkpoint(read_file_bytes(path)), g);
}

// Architecture sidecar so later stages can rebuild a graph for a checkpoint.
inline nlohmann::json to_json(const CaeConfig& cfg, const ClassifierConfig& head) {
  return {{"input_channels", cfg.input_channels}, {"input_size", cfg.input_size},
          {"stem_channels", cfg.stem_channels},   {"block_channels", cfg.block_channels},
          {"bottleneck_channels", cfg.bottleneck_channels},
          {"bottleneck_convs", cfg.bottleneck_convs},
          {"kernel", cfg.kernel},                 {"down_stride", cfg.down_stride},
          {"dense_hidden", head.hidden},          {"classes", head.classes}};
}

inline std::pair<CaeConfig, ClassifierConfig> architecture_from_json(const nlohmann::json& j) {
  CaeConfig cfg;
  ClassifierConfig head;
  try {
    cfg.input_channels = j.value("input_channels", cfg.input_channels);
    cfg.input_size = j.value("input_size", cfg.input_size);
    cfg.stem_channels = j.value("stem_channels", cfg.stem_channels);
    cfg.block_channels = j.value("block_channels", cfg.block_channels);
    cfg.bottleneck_channels = j.value("bottleneck_channels", cfg.bottleneck_channels);
    cfg.bottleneck_convs = j.value("bottleneck_convs", cfg.bottleneck_convs);
    cfg.kernel = j.value("kernel", cfg.kernel);
    cfg.down_stride = j.value("down_stride", cfg.down_stride);
    head.hidden = j.value("dense_hidden", head.hidden);
    head.classes = j.value("classes", head.classes);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed architecture description: ") + e.what());
  }
  return {cfg, head};
}

inline std::filesystem::path architecture_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".json";
  return p;
}

}  // namespace sslgrade
