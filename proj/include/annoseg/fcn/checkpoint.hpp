#pragma once

// Parameter checkpoints. Layout (all integers little-endian):
//
//   magic      8 bytes  "ANSGCKPT"
//   version    u32      = 1
//   classes    u32
//   in_ch      u32
//   stacks     5 x (u32 convs, u32 width)
//   input      u8       0 = color, 1 = binarized
//   bin_window i32
//   bin_offset i32
//   arrays     u32      count, then per array:
//     name_len u16, name bytes, dtype u8 (1 = f32, 2 = f64),
//     rank u8 (= 4), dims 4 x u32, values (IEEE-754, little-endian)

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

#include "annoseg/error.hpp"
#include "annoseg/fcn/network.hpp"
#include "annoseg/model.hpp"

namespace annoseg::fcn {

inline constexpr std::array<char, 8> kCheckpointMagic{'A', 'N', 'S', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  template <typename U>
  void put(U v) {
    static_assert(std::is_integral_v<U>);
    using UU = std::make_unsigned_t<U>;
    const UU u = static_cast<UU>(v);
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
  }
  void put_f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void put_bytes(const char* p, std::size_t n) { bytes.insert(bytes.end(), p, p + n); }

  std::vector<char> bytes;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> data) : data_(std::move(data)) {}

  template <typename U>
  U get() {
    static_assert(std::is_integral_v<U>);
    need(sizeof(U));
    std::make_unsigned_t<U> u = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      u |= static_cast<std::make_unsigned_t<U>>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(u);
  }
  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw ParseError("checkpoint truncated");
  }
  std::vector<char> data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <typename T>
std::vector<char> encode_checkpoint(const Fcn8sParams<T>& params, const ModelMeta& meta) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  detail::ByteWriter w;
  w.put_bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(params.config.num_classes));
  w.put(static_cast<std::uint32_t>(params.config.in_channels));
  for (const auto& s : params.config.stacks) {
    w.put(static_cast<std::uint32_t>(s.convs));
    w.put(static_cast<std::uint32_t>(s.width));
  }
  w.put(static_cast<std::uint8_t>(meta.input));
  w.put(static_cast<std::int32_t>(meta.binarize.window));
  w.put(static_cast<std::int32_t>(meta.binarize.offset));
  const auto tensors = params.named_tensors();
  w.put(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.put(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put(static_cast<std::uint8_t>(std::is_same_v<T, float> ? 1 : 2));
    w.put(static_cast<std::uint8_t>(4));
    for (int d : {t->n(), t->c(), t->h(), t->w()}) w.put(static_cast<std::uint32_t>(d));
    for (T v : t->values()) {
      if constexpr (std::is_same_v<T, float>) w.put_f32(v);
      else w.put_f64(v);
    }
  }
  return std::move(w.bytes);
}

template <typename T>
struct Checkpoint {
  Fcn8sParams<T> params;
  ModelMeta meta;
};

template <typename T>
Checkpoint<T> decode_checkpoint(std::vector<char> bytes) {
  detail::ByteReader r(std::move(bytes));
  if (r.get_string(kCheckpointMagic.size()) != std::string(kCheckpointMagic.data(), kCheckpointMagic.size()))
    throw ParseError("not an annoseg checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw ParseError(annoseg::detail::concat("unsupported checkpoint version ", version));

  NetworkConfig cfg;
  cfg.num_classes = static_cast<int>(r.get<std::uint32_t>());
  cfg.in_channels = static_cast<int>(r.get<std::uint32_t>());
  for (auto& s : cfg.stacks) {
    s.convs = static_cast<int>(r.get<std::uint32_t>());
    s.width = static_cast<int>(r.get<std::uint32_t>());
  }
  try {
    cfg.validate();
  } catch (const ValidationError& e) {
    throw ParseError(std::string("checkpoint network config invalid: ") + e.what());
  }
  Checkpoint<T> ck{make_params<T>(cfg), {}};
  const auto mode = r.get<std::uint8_t>();
  if (mode > 1) throw ParseError("checkpoint input mode invalid");
  ck.meta.input = static_cast<InputMode>(mode);
  ck.meta.binarize.window = r.get<std::int32_t>();
  ck.meta.binarize.offset = r.get<std::int32_t>();

  auto tensors = ck.params.named_tensors();
  const auto count = r.get<std::uint32_t>();
  if (count != tensors.size())
    throw ParseError(annoseg::detail::concat("checkpoint has ", count, " arrays, network needs ", tensors.size()));
  for (auto& [name, t] : tensors) {
    const auto stored = r.get_string(r.get<std::uint16_t>());
    if (stored != name) throw ParseError("checkpoint array '" + stored + "' where '" + name + "' was expected");
    const auto dtype = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint8_t>();
    if ((dtype != 1 && dtype != 2) || rank != 4) throw ParseError("checkpoint array '" + name + "' has bad dtype/rank");
    Shape s;
    s.n = static_cast<int>(r.get<std::uint32_t>());
    s.c = static_cast<int>(r.get<std::uint32_t>());
    s.h = static_cast<int>(r.get<std::uint32_t>());
    s.w = static_cast<int>(r.get<std::uint32_t>());
    if (s != t->shape()) throw ParseError("checkpoint array '" + name + "' has the wrong shape");
    for (auto& v : t->values()) v = static_cast<T>(dtype == 1 ? static_cast<double>(r.get_f32()) : r.get_f64());
  }
  if (!r.done()) throw ParseError("trailing bytes after checkpoint arrays");
  return ck;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Fcn8sParams<T>& params, const ModelMeta& meta) {
  const auto bytes = encode_checkpoint(params, meta);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw RuntimeFailure("short write on checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint<T>(std::move(bytes));
}

}  // namespace annoseg::fcn
