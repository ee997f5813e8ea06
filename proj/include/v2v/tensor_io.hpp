#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "v2v/tensor.hpp"

namespace v2v {

/// Named parameter tensors. std::map keeps names unique and sorted, which
/// makes checkpoint output deterministic.
using ParamMap = std::map<std::string, Tensor>;

namespace detail {

inline constexpr char kTensorMagic[4] = {'V', '2', 'V', 'T'};
inline constexpr char kCheckpointMagic[4] = {'V', '2', 'V', 'C'};
inline constexpr std::uint8_t kFormatVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  void f32s(std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(float));
    } else {
      for (float f : values) u32(std::bit_cast<std::uint32_t>(f));
    }
  }
  const std::vector<char>& buffer() const noexcept { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<char>& buf, std::string source) : buf_(buf), source_(std::move(source)) {}

  std::size_t remaining() const noexcept { return buf_.size() - pos_; }

  void need(std::size_t n, ErrorCode code = ErrorCode::TruncatedPayload) const {
    if (remaining() < n) throw Error(code, source_ + ": unexpected end of file");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf_[pos_++]) << (8 * i));
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[pos_++])) << (8 * i);
    return v;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    std::string_view s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void f32s(std::span<float> out) {
    need(out.size() * sizeof(float));
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), buf_.data() + pos_, out.size() * sizeof(float));
      pos_ += out.size() * sizeof(float);
    } else {
      for (float& f : out) f = std::bit_cast<float>(u32());
    }
  }
  const std::string& source() const noexcept { return source_; }

 private:
  const std::vector<char>& buf_;
  std::size_t pos_ = 0;
  std::string source_;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

inline void write_dims(ByteWriter& w, const Shape& shape) {
  for (auto d : shape.dims()) w.u32(static_cast<std::uint32_t>(d));
}

inline Shape read_dims(ByteReader& r, std::size_t ndim) {
  if (ndim == 0 || ndim > Shape::kMaxRank)
    throw Error(ErrorCode::InvalidDims, r.source() + ": ndim " + std::to_string(ndim) + " outside 1..5");
  std::vector<std::int64_t> dims(ndim);
  for (auto& d : dims) d = r.u32();
  return Shape(dims);
}

inline bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    if (c < 0x80) extra = 0;
    else if ((c >> 5) == 0x6) extra = 1;
    else if ((c >> 4) == 0xE) extra = 2;
    else if ((c >> 3) == 0x1E) extra = 3;
    else return false;
    if (i + extra >= s.size() && extra > 0) return false;
    for (std::size_t k = 1; k <= extra; ++k)
      if ((static_cast<unsigned char>(s[i + k]) >> 6) != 0x2) return false;
    i += extra + 1;
  }
  return true;
}

inline void check_magic(ByteReader& r, const char (&magic)[4]) {
  if (r.remaining() < 4) throw Error(ErrorCode::BadMagic, r.source() + ": file too short for magic");
  if (r.bytes(4) != std::string_view(magic, 4)) throw Error(ErrorCode::BadMagic, r.source());
}

}  // namespace detail

inline std::vector<char> encode_tensor(const Tensor& t) {
  detail::ByteWriter w;
  w.bytes(detail::kTensorMagic, 4);
  w.u8(detail::kFormatVersion);
  w.u8(detail::kDtypeF32);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  w.u8(0);
  detail::write_dims(w, t.shape());
  w.f32s(t.values());
  return w.buffer();
}

inline Tensor decode_tensor(const std::vector<char>& bytes, const std::string& source = "<memory>") {
  detail::ByteReader r(bytes, source);
  detail::check_magic(r, detail::kTensorMagic);
  r.need(4, ErrorCode::TruncatedPayload);
  const auto version = r.u8();
  if (version != detail::kFormatVersion)
    throw Error(ErrorCode::UnsupportedVersion, source + ": version " + std::to_string(version));
  const auto dtype = r.u8();
  if (dtype != detail::kDtypeF32)
    throw Error(ErrorCode::UnsupportedVersion, source + ": dtype " + std::to_string(dtype));
  const auto ndim = r.u8();
  r.u8();  // reserved
  Shape shape = detail::read_dims(r, ndim);
  const auto payload = static_cast<std::size_t>(shape.numel()) * sizeof(float);
  if (r.remaining() < payload)
    throw Error(ErrorCode::TruncatedPayload, source + ": header " + shape.str() + " needs " +
                                                 std::to_string(payload) + " payload bytes, found " +
                                                 std::to_string(r.remaining()));
  if (r.remaining() > payload)
    throw Error(ErrorCode::DimsPayloadMismatch,
                source + ": " + std::to_string(r.remaining() - payload) + " trailing bytes after payload");
  Tensor t(shape);
  r.f32s(t.values());
  return t;
}

inline void tensor_write(const Tensor& t, const std::filesystem::path& path) {
  detail::write_file(path, encode_tensor(t));
}

inline Tensor tensor_read(const std::filesystem::path& path) {
  return decode_tensor(detail::read_file(path), path.string());
}

inline std::vector<char> encode_checkpoint(const ParamMap& entries) {
  detail::ByteWriter w;
  w.bytes(detail::kCheckpointMagic, 4);
  w.u8(detail::kFormatVersion);
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    if (name.empty() || name.size() > 0xFFFF || !detail::valid_utf8(name))
      throw Error(ErrorCode::InvalidDims, "entry name must be 1..65535 bytes of UTF-8: '" + name.substr(0, 32) + "'");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(t.rank()));
    detail::write_dims(w, t.shape());
    w.f32s(t.values());
  }
  return w.buffer();
}

inline ParamMap decode_checkpoint(const std::vector<char>& bytes, const std::string& source = "<memory>") {
  detail::ByteReader r(bytes, source);
  detail::check_magic(r, detail::kCheckpointMagic);
  const auto version = r.u8();
  if (version != detail::kFormatVersion)
    throw Error(ErrorCode::UnsupportedVersion, source + ": version " + std::to_string(version));
  const auto count = r.u32();
  ParamMap out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.u16();
    std::string name(r.bytes(len));
    const auto ndim = r.u8();
    Tensor t(detail::read_dims(r, ndim));
    r.f32s(t.values());
    if (!out.emplace(name, std::move(t)).second)
      throw Error(ErrorCode::DuplicateName, source + ": entry '" + name + "' appears twice");
  }
  if (r.remaining() != 0)
    throw Error(ErrorCode::DimsPayloadMismatch, source + ": trailing bytes after last entry");
  return out;
}

inline void checkpoint_save(const ParamMap& entries, const std::filesystem::path& path) {
  detail::write_file(path, encode_checkpoint(entries));
}

/// Entry list form; rejects repeated names instead of silently keeping one.
inline void checkpoint_save(const std::vector<std::pair<std::string, Tensor>>& entries,
                            const std::filesystem::path& path) {
  ParamMap map;
  for (const auto& [name, t] : entries)
    if (!map.emplace(name, t).second) throw Error(ErrorCode::DuplicateName, "entry '" + name + "' given twice");
  checkpoint_save(map, path);
}

inline ParamMap checkpoint_load(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path), path.string());
}

}  // namespace v2v
