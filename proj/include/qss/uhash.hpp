#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "qss/bytes.hpp"
#include "qss/error.hpp"
#include "qss/field.hpp"
#include "qss/random.hpp"

namespace qss {

enum class HashScheme : std::uint8_t { PolyEval = 1, Toeplitz = 2 };

inline std::string to_string(HashScheme s) { return s == HashScheme::PolyEval ? "polyeval" : "toeplitz"; }
inline HashScheme parse_hash_scheme(const std::string& s) {
  if (s == "polyeval") return HashScheme::PolyEval;
  if (s == "toeplitz") return HashScheme::Toeplitz;
  throw ConfigError("unknown hash scheme: " + s);
}

// k-bit authentication tag. Serialized as ceil(k/8) bytes, big-endian bit order.
struct MacTag {
  BitString bits;

  std::size_t k() const { return bits.size(); }
  Bytes serialize() const { return bits.bytes(); }
  static MacTag deserialize(ByteView b, std::size_t k) { return MacTag{BitString::from_bytes(b, k)}; }
  std::string hex() const { return to_hex(bits.bytes()); }

  friend bool operator==(const MacTag& a, const MacTag& b) { return a.bits == b.bits; }
};

// Polynomial-evaluation hash u(R, D) = sum_i D_i R^i over F_{q_u}, with 2^k >= q_u >= 2^k / k.
class PolyHashFamily {
 public:
  PolyHashFamily(std::size_t k, BigInt q_u) : k_(k), field_(PrimeFieldConfig::general(std::move(q_u))) {
    const BigInt two_k = BigInt(1) << static_cast<mp_bitcnt_t>(k);
    if (field_->modulus() > two_k || field_->modulus() * static_cast<unsigned long>(k) < two_k)
      throw ConfigError("hash field size outside [2^k/k, 2^k]");
  }

  // q_u is the largest prime not exceeding 2^k. Families are cached per k.
  static const PolyHashFamily& standard(std::size_t k) {
    static std::mutex mu;
    static std::map<std::size_t, std::unique_ptr<PolyHashFamily>> cache;
    std::lock_guard lock(mu);
    auto& slot = cache[k];
    if (!slot) {
      if (k < 2) throw ConfigError("tag length must be at least 2 bits");
      slot = std::make_unique<PolyHashFamily>(k, bigint::largest_prime_at_most(BigInt(1) << static_cast<mp_bitcnt_t>(k)));
    }
    return *slot;
  }

  std::size_t k() const { return k_; }
  const PrimeFieldConfig& field() const { return *field_; }
  // floor(log2 q_u) - 1 bits per message block.
  std::size_t block_bits() const { return field_->bits() - 2; }

  // sum_{i=1..l} blocks[i-1] * R^i, evaluated Horner-style.
  FieldElement hash_blocks(const FieldElement& r, const std::vector<FieldElement>& blocks) const {
    FieldElement acc = FieldElement::zero(*field_);
    for (std::size_t i = blocks.size(); i-- > 0;) {
      acc += blocks[i];
      acc *= r;
    }
    return acc;
  }

  // Message bits in block_bits() chunks (last zero-padded), then the 64-bit bit length split the same way.
  std::vector<FieldElement> frame(ByteView message) const {
    const std::size_t w = block_bits();
    if (w == 0) throw ConfigError("hash field too small to carry message blocks");
    std::vector<FieldElement> out;
    BitString bits = BitString::from_bytes(message);
    for (std::size_t start = 0; start < bits.size(); start += w) {
      std::size_t len = std::min(w, bits.size() - start);
      BigInt v = bigint::from_bits(bits.slice(start, len));
      v <<= static_cast<mp_bitcnt_t>(w - len);
      out.emplace_back(*field_, std::move(v));
    }
    BitString length = bigint::to_bits(BigInt(static_cast<unsigned long>(bits.size())), 64);
    for (std::size_t start = 0; start < 64; start += w) {
      std::size_t len = std::min(w, 64 - start);
      BigInt v = bigint::from_bits(length.slice(start, len));
      v <<= static_cast<mp_bitcnt_t>(w - len);
      out.emplace_back(*field_, std::move(v));
    }
    return out;
  }

  MacTag encode(const FieldElement& v) const { return MacTag{bigint::to_bits(v.value(), k_)}; }

  // Seed bits of width k read as an integer and folded into the field (bias <= (2^k - q_u) / 2^k).
  FieldElement key_from_bits(const BitString& bits) const {
    return FieldElement(*field_, bigint::from_bits(bits));
  }

 private:
  std::size_t k_;
  FieldPtr field_;
};

// tag[i] = XOR_j T[i][j] m[j] with T[i][j] = seed[i - j + n - 1].
inline BitString toeplitz_multiply(const BitString& seed, const BitString& message, std::size_t k) {
  const std::size_t n = message.size();
  if (k == 0) throw ConfigError("tag length must be positive");
  if (seed.size() != k + n - 1 || (n == 0 && seed.size() != k - 1))
    throw ConfigError("toeplitz seed length must be k + |message| - 1");
  const std::size_t tag_words = (k + 63) / 64;
  std::vector<std::uint64_t> tag(tag_words + 1, 0);
  if (n == 0) return BitString(k);
  std::vector<std::uint64_t> s = seed.to_words();
  s.resize(s.size() + tag_words + 1, 0);
  const auto& mb = message.bytes();
  for (std::size_t byte = 0; byte < mb.size(); ++byte) {
    if (mb[byte] == 0) continue;
    for (unsigned b = 0; b < 8; ++b) {
      if (((mb[byte] >> (7 - b)) & 1u) == 0) continue;
      const std::size_t j = byte * 8 + b;
      if (j >= n) break;
      // Row i picks seed bit (n - 1 - j) + i, so message bit j contributes the window at offset n - 1 - j.
      const std::size_t off = n - 1 - j;
      const std::size_t w0 = off / 64;
      const unsigned sh = off % 64;
      for (std::size_t t = 0; t < tag_words; ++t) {
        std::uint64_t v = s[w0 + t] << sh;
        if (sh != 0) v |= s[w0 + t + 1] >> (64 - sh);
        tag[t] ^= v;
      }
    }
  }
  return BitString::from_words(tag, k);
}

// The random key R_MAC of the verification MAC. Binds to one datum: the first tag consumes it.
class MacSeed {
 public:
  static MacSeed draw_polyeval(std::size_t k, RandomSource& rng) {
    const auto& fam = PolyHashFamily::standard(k);
    BigInt r = bigint::uniform_below(fam.field().modulus(), rng);
    return MacSeed(HashScheme::PolyEval, k, 0, bigint::to_bits(r, k), false);
  }
  static MacSeed draw_toeplitz(std::size_t k, std::size_t message_bits, RandomSource& rng) {
    std::size_t len = message_bits == 0 ? k - 1 : k + message_bits - 1;
    return MacSeed(HashScheme::Toeplitz, k, message_bits, rng.bits(len), false);
  }
  static MacSeed draw(HashScheme scheme, std::size_t k, std::size_t message_bits, RandomSource& rng) {
    return scheme == HashScheme::PolyEval ? draw_polyeval(k, rng) : draw_toeplitz(k, message_bits, rng);
  }
  static MacSeed restore(HashScheme scheme, std::size_t k, std::size_t message_bits, BitString bits, bool consumed) {
    return MacSeed(scheme, k, message_bits, std::move(bits), consumed);
  }

  HashScheme scheme() const { return scheme_; }
  std::size_t k() const { return k_; }
  std::size_t message_bits() const { return message_bits_; }
  const BitString& bits() const { return bits_; }
  bool consumed() const { return consumed_; }
  std::size_t byte_size() const { return bits_.byte_size(); }

  void mark_consumed() {
    if (consumed_) throw SingleUseViolation("MAC seed already bound to a datum");
    consumed_ = true;
  }

  void wipe() { bits_.wipe(); }

 private:
  MacSeed(HashScheme scheme, std::size_t k, std::size_t message_bits, BitString bits, bool consumed)
      : scheme_(scheme), k_(k), message_bits_(message_bits), bits_(std::move(bits)), consumed_(consumed) {}

  HashScheme scheme_;
  std::size_t k_;
  std::size_t message_bits_;
  BitString bits_;
  bool consumed_;
};

namespace detail {

inline MacTag evaluate(const MacSeed& seed, ByteView message) {
  if (seed.scheme() == HashScheme::PolyEval) {
    const auto& fam = PolyHashFamily::standard(seed.k());
    FieldElement r(fam.field(), bigint::from_bits(seed.bits()));
    return fam.encode(fam.hash_blocks(r, fam.frame(message)));
  }
  if (message.size() * 8 != seed.message_bits())
    throw ConfigError("message length differs from the length the toeplitz seed was drawn for");
  return MacTag{toeplitz_multiply(seed.bits(), BitString::from_bytes(message), seed.k())};
}

}  // namespace detail

inline MacTag au2_hash(MacSeed& seed, ByteView message) {
  if (seed.scheme() != HashScheme::PolyEval) throw ConfigError("au2_hash needs a polynomial-evaluation seed");
  seed.mark_consumed();
  return detail::evaluate(seed, message);
}

inline MacTag toeplitz_hash(MacSeed& seed, const BitString& message) {
  if (seed.scheme() != HashScheme::Toeplitz) throw ConfigError("toeplitz_hash needs a toeplitz seed");
  if (seed.bits().size() != (message.empty() ? seed.k() - 1 : seed.k() + message.size() - 1))
    throw ConfigError("toeplitz seed length must be k + |message| - 1");
  seed.mark_consumed();
  return MacTag{toeplitz_multiply(seed.bits(), message, seed.k())};
}

// Tags a datum with a fresh seed and binds the seed to it.
inline MacTag mac_tag(MacSeed& seed, ByteView message) {
  if (seed.consumed()) throw SingleUseViolation("MAC seed already bound to a datum");
  MacTag t = detail::evaluate(seed, message);
  seed.mark_consumed();
  return t;
}

// Recomputes a tag with a seed already bound by mac_tag, for verification of that same record.
inline MacTag recompute_tag(const MacSeed& seed, ByteView message) {
  if (!seed.consumed()) throw ProtocolError("seed has not been bound to a datum yet");
  return detail::evaluate(seed, message);
}

// One-time Wegman-Carter key: a hash seed followed by a k-bit pad for the tag.
class WcKey {
 public:
  static std::size_t key_bits(HashScheme scheme, std::size_t k, std::size_t message_bits) {
    std::size_t seed = scheme == HashScheme::PolyEval ? k : (message_bits == 0 ? k - 1 : k + message_bits - 1);
    return seed + k;
  }

  WcKey(HashScheme scheme, std::size_t k, std::size_t message_bits, const BitString& key)
      : scheme_(scheme), k_(k), message_bits_(message_bits) {
    if (key.size() != key_bits(scheme, k, message_bits)) throw ConfigError("wegman-carter key has the wrong length");
    seed_ = key.slice(0, key.size() - k);
    pad_ = key.slice(key.size() - k, k);
  }

  HashScheme scheme() const { return scheme_; }
  std::size_t k() const { return k_; }
  bool consumed() const { return consumed_; }
  const BitString& pad() const { return pad_; }

  MacTag universal_hash(ByteView message) const {
    if (scheme_ == HashScheme::PolyEval) {
      const auto& fam = PolyHashFamily::standard(k_);
      return fam.encode(fam.hash_blocks(fam.key_from_bits(seed_), fam.frame(message)));
    }
    if (message.size() * 8 != message_bits_) throw ConfigError("message length differs from the key's");
    return MacTag{toeplitz_multiply(seed_, BitString::from_bytes(message), k_)};
  }

  void mark_consumed() {
    if (consumed_) throw SingleUseViolation("wegman-carter key reused");
    consumed_ = true;
  }

 private:
  HashScheme scheme_;
  std::size_t k_;
  std::size_t message_bits_;
  BitString seed_;
  BitString pad_;
  bool consumed_ = false;
};

inline MacTag wc_tag(WcKey& key, ByteView message) {
  key.mark_consumed();
  MacTag h = key.universal_hash(message);
  return MacTag{h.bits ^ key.pad()};
}

inline bool wc_verify(const WcKey& key, ByteView message, const MacTag& tag) {
  if (tag.k() != key.k()) return false;
  MacTag h = key.universal_hash(message);
  return (h.bits ^ key.pad()) == tag.bits;
}

using Digest512 = std::array<std::uint8_t, 64>;

inline Digest512 cr_hash(ByteView message) {
  Digest512 out{};
  unsigned len = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha512(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), message.data(), message.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), out.data(), &len) != 1 || len != out.size())
    throw Error("SHA-512 computation failed");
  return out;
}

}  // namespace qss
