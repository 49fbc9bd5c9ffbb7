#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qss/error.hpp"

namespace qss {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

inline std::string to_hex(ByteView b) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(b.size() * 2);
  for (auto v : b) {
    out.push_back(kDigits[v >> 4]);
    out.push_back(kDigits[v & 0xf]);
  }
  return out;
}

inline Bytes from_hex(std::string_view hex) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw ConfigError("invalid hex digit");
  };
  if (hex.size() % 2 != 0) throw ConfigError("odd-length hex string");
  Bytes out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
  return out;
}

// Overwrite before release so erased material does not linger in freed memory.
inline void secure_wipe(Bytes& b) {
  volatile std::uint8_t* p = b.data();
  for (std::size_t i = 0; i < b.size(); ++i) p[i] = 0;
  b.clear();
  b.shrink_to_fit();
}

// Bit string in big-endian bit order: bit 0 is the most significant bit of byte 0.
class BitString {
 public:
  BitString() = default;
  explicit BitString(std::size_t nbits) : bytes_((nbits + 7) / 8, 0), nbits_(nbits) {}

  static BitString from_bytes(ByteView b) {
    BitString s;
    s.bytes_.assign(b.begin(), b.end());
    s.nbits_ = b.size() * 8;
    return s;
  }
  static BitString from_bytes(ByteView b, std::size_t nbits) {
    if (nbits > b.size() * 8) throw ConfigError("bit length exceeds byte buffer");
    BitString s;
    s.bytes_.assign(b.begin(), b.begin() + static_cast<std::ptrdiff_t>((nbits + 7) / 8));
    s.nbits_ = nbits;
    s.clear_tail();
    return s;
  }
  // Convenience for tests: {1,0,1,1}.
  static BitString from_bits(std::initializer_list<int> bits) {
    BitString s(bits.size());
    std::size_t i = 0;
    for (int v : bits) s.set(i++, v != 0);
    return s;
  }

  std::size_t size() const { return nbits_; }
  bool empty() const { return nbits_ == 0; }
  const Bytes& bytes() const { return bytes_; }
  std::size_t byte_size() const { return bytes_.size(); }

  bool get(std::size_t i) const { return (bytes_[i / 8] >> (7 - i % 8)) & 1u; }
  void set(std::size_t i, bool v) {
    auto mask = static_cast<std::uint8_t>(1u << (7 - i % 8));
    if (v)
      bytes_[i / 8] |= mask;
    else
      bytes_[i / 8] &= static_cast<std::uint8_t>(~mask);
  }

  void push_back(bool v) {
    if (nbits_ % 8 == 0) bytes_.push_back(0);
    ++nbits_;
    set(nbits_ - 1, v);
  }

  void append(const BitString& other) {
    if (nbits_ % 8 == 0) {
      bytes_.insert(bytes_.end(), other.bytes_.begin(), other.bytes_.end());
      nbits_ += other.nbits_;
      return;
    }
    for (std::size_t i = 0; i < other.nbits_; ++i) push_back(other.get(i));
  }

  BitString slice(std::size_t start, std::size_t len) const {
    if (start + len > nbits_) throw ConfigError("bit slice out of range");
    BitString out(len);
    if (start % 8 == 0) {
      std::copy_n(bytes_.begin() + static_cast<std::ptrdiff_t>(start / 8), out.bytes_.size(), out.bytes_.begin());
      out.clear_tail();
      return out;
    }
    const unsigned shift = start % 8;
    const std::size_t base = start / 8;
    for (std::size_t k = 0; k < out.bytes_.size(); ++k) {
      unsigned hi = bytes_[base + k];
      unsigned lo = base + k + 1 < bytes_.size() ? bytes_[base + k + 1] : 0u;
      out.bytes_[k] = static_cast<std::uint8_t>((hi << shift) | (lo >> (8 - shift)));
    }
    out.clear_tail();
    return out;
  }

  BitString& operator^=(const BitString& other) {
    if (other.nbits_ != nbits_) throw ConfigError("xor of bit strings with different lengths");
    for (std::size_t i = 0; i < bytes_.size(); ++i) bytes_[i] ^= other.bytes_[i];
    return *this;
  }
  friend BitString operator^(BitString a, const BitString& b) { return a ^= b; }

  bool is_zero() const {
    return std::all_of(bytes_.begin(), bytes_.end(), [](std::uint8_t v) { return v == 0; });
  }

  // Big-endian 64-bit words with zero padding; bit i lives in word i/64 at position 63 - i%64.
  std::vector<std::uint64_t> to_words() const {
    std::vector<std::uint64_t> w((nbits_ + 63) / 64 + 1, 0);
    for (std::size_t i = 0; i < bytes_.size(); ++i)
      w[i / 8] |= static_cast<std::uint64_t>(bytes_[i]) << (56 - 8 * (i % 8));
    return w;
  }
  static BitString from_words(const std::vector<std::uint64_t>& w, std::size_t nbits) {
    BitString out(nbits);
    for (std::size_t i = 0; i < out.bytes_.size(); ++i)
      out.bytes_[i] = static_cast<std::uint8_t>(w[i / 8] >> (56 - 8 * (i % 8)));
    out.clear_tail();
    return out;
  }

  std::string to_string() const {
    std::string s;
    s.reserve(nbits_);
    for (std::size_t i = 0; i < nbits_; ++i) s.push_back(get(i) ? '1' : '0');
    return s;
  }

  void wipe() {
    secure_wipe(bytes_);
    nbits_ = 0;
  }

  friend bool operator==(const BitString& a, const BitString& b) {
    return a.nbits_ == b.nbits_ && a.bytes_ == b.bytes_;
  }

 private:
  void clear_tail() {
    if (nbits_ % 8 != 0 && !bytes_.empty())
      bytes_.back() &= static_cast<std::uint8_t>(0xffu << (8 - nbits_ % 8));
  }

  Bytes bytes_;
  std::size_t nbits_ = 0;
};

// Big-endian serializer used by every wire and file format in the library.
class ByteWriter {
 public:
  ByteWriter& u8(std::uint8_t v) {
    buf_.push_back(v);
    return *this;
  }
  ByteWriter& u16(std::uint16_t v) { return be(v, 2); }
  ByteWriter& u32(std::uint32_t v) { return be(v, 4); }
  ByteWriter& u64(std::uint64_t v) { return be(v, 8); }
  ByteWriter& raw(ByteView b) {
    buf_.insert(buf_.end(), b.begin(), b.end());
    return *this;
  }
  // u32 length prefix followed by the bytes.
  ByteWriter& blob(ByteView b) {
    u32(static_cast<std::uint32_t>(b.size()));
    return raw(b);
  }
  ByteWriter& str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
    return *this;
  }

  const Bytes& bytes() const { return buf_; }
  Bytes take() { return std::move(buf_); }

 private:
  ByteWriter& be(std::uint64_t v, int n) {
    for (int i = n - 1; i >= 0; --i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    return *this;
  }
  Bytes buf_;
};

class ByteReader {
 public:
  explicit ByteReader(ByteView b) : data_(b) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(be(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(be(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(be(4)); }
  std::uint64_t u64() { return be(8); }
  Bytes raw(std::size_t n) {
    need(n);
    Bytes out(data_.begin() + static_cast<std::ptrdiff_t>(pos_),
              data_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }
  Bytes blob() { return raw(u32()); }
  std::string str() {
    auto b = blob();
    return std::string(b.begin(), b.end());
  }

  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw ProtocolError("truncated message");
  }
  std::uint64_t be(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v = v << 8 | data_[pos_++];
    return v;
  }
  ByteView data_;
  std::size_t pos_ = 0;
};

}  // namespace qss
