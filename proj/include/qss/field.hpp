#pragma once

#include <gmpxx.h>

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qss/bytes.hpp"
#include "qss/error.hpp"
#include "qss/random.hpp"

namespace qss {

using BigInt = mpz_class;

namespace bigint {

inline std::size_t bit_length(const BigInt& x) {
  return sgn(x) == 0 ? 0 : mpz_sizeinbase(x.get_mpz_t(), 2);
}

inline BigInt from_bytes(ByteView b) {
  BigInt out;
  if (!b.empty()) mpz_import(out.get_mpz_t(), b.size(), 1, 1, 1, 0, b.data());
  return out;
}

inline BigInt from_bits(const BitString& bits) {
  BigInt out = from_bytes(bits.bytes());
  std::size_t pad = bits.byte_size() * 8 - bits.size();
  if (pad != 0) out >>= static_cast<mp_bitcnt_t>(pad);
  return out;
}

// Fixed-width big-endian encoding; throws if the value does not fit.
inline Bytes to_bytes(const BigInt& x, std::size_t width) {
  if (sgn(x) < 0) throw ConfigError("cannot encode a negative integer");
  std::size_t need = (bit_length(x) + 7) / 8;
  if (need > width) throw ConfigError("integer does not fit the requested width");
  Bytes out(width, 0);
  if (need != 0) {
    std::size_t written = 0;
    mpz_export(out.data() + (width - need), &written, 1, 1, 1, 0, x.get_mpz_t());
  }
  return out;
}

inline BitString to_bits(const BigInt& x, std::size_t nbits) {
  if (bit_length(x) > nbits) throw ConfigError("integer does not fit the requested bit width");
  std::size_t width = (nbits + 7) / 8;
  BigInt shifted = x << static_cast<mp_bitcnt_t>(width * 8 - nbits);
  return BitString::from_bytes(to_bytes(shifted, width), nbits);
}

// Accepts decimal or 0x-prefixed hex.
inline BigInt parse(std::string_view text) {
  std::string s(text);
  BigInt out;
  int rc = (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X'))
               ? out.set_str(s.substr(2), 16)
               : out.set_str(s, 10);
  if (rc != 0) throw ConfigError("malformed integer literal: " + s);
  return out;
}

inline std::string to_hex(const BigInt& x) { return x.get_str(16); }

// Miller-Rabin with 50 rounds: error probability below 4^-50 = 2^-100.
inline bool is_probable_prime(const BigInt& n) {
  return mpz_probab_prime_p(n.get_mpz_t(), 50) > 0;
}

// Left-to-right square-and-multiply.
inline BigInt mod_exp(const BigInt& base, const BigInt& exponent, const BigInt& modulus) {
  if (modulus <= 1) throw ConfigError("modulus must exceed 1");
  if (sgn(exponent) < 0) throw ConfigError("negative exponent");
  BigInt b = base % modulus;
  if (sgn(b) < 0) b += modulus;
  BigInt result = 1;
  for (std::size_t i = bit_length(exponent); i-- > 0;) {
    result = result * result % modulus;
    if (mpz_tstbit(exponent.get_mpz_t(), i) != 0) result = result * b % modulus;
  }
  return result;
}

inline BigInt largest_prime_at_most(BigInt n) {
  if (n < 2) throw ConfigError("no prime at most the given bound");
  if (n == 2) return n;
  if (mpz_even_p(n.get_mpz_t()) != 0) n -= 1;
  while (!is_probable_prime(n)) n -= 2;
  return n;
}

// Uniform in [0, bound) by rejection on bit_length(bound - 1) bits.
inline BigInt uniform_below(const BigInt& bound, RandomSource& rng) {
  if (bound <= 0) throw ConfigError("empty sampling range");
  if (bound == 1) return 0;
  std::size_t nbits = bit_length(BigInt(bound - 1));
  for (;;) {
    BigInt v = from_bits(rng.bits(nbits));
    if (v < bound) return v;
  }
}

}  // namespace bigint

// Prime modulus q together with the reduction strategy used for it.
class PrimeFieldConfig {
 public:
  enum class Kind { Mersenne, General };

  static std::shared_ptr<const PrimeFieldConfig> mersenne(unsigned exponent) {
    BigInt q = (BigInt(1) << exponent) - 1;
    return std::shared_ptr<const PrimeFieldConfig>(new PrimeFieldConfig(std::move(q), Kind::Mersenne, exponent));
  }

  // Forces the division-based path even if q happens to be a Mersenne number.
  static std::shared_ptr<const PrimeFieldConfig> general(BigInt q) {
    return std::shared_ptr<const PrimeFieldConfig>(new PrimeFieldConfig(std::move(q), Kind::General, 0));
  }

  // Picks the Mersenne path automatically when q = 2^m - 1.
  static std::shared_ptr<const PrimeFieldConfig> from_modulus(BigInt q) {
    BigInt plus_one = q + 1;
    if (q > 2 && mpz_popcount(plus_one.get_mpz_t()) == 1)
      return mersenne(static_cast<unsigned>(bigint::bit_length(plus_one) - 1));
    return general(std::move(q));
  }

  const BigInt& modulus() const { return q_; }
  Kind kind() const { return kind_; }
  unsigned mersenne_exponent() const { return exponent_; }
  // m, the bit length of q.
  std::size_t bits() const { return bits_; }
  std::size_t byte_width() const { return (bits_ + 7) / 8; }
  // Widest block that always lies below q.
  std::size_t block_bits() const { return bits_ - 1; }

  // Canonical residue of a non-negative integer, in place.
  void reduce(BigInt& x) const {
    if (kind_ == Kind::Mersenne)
      reduce_mersenne(x);
    else
      reduce_general(x);
  }

  void reduce_general(BigInt& x) const {
    mpz_mod(x.get_mpz_t(), x.get_mpz_t(), q_.get_mpz_t());
  }

  // Shift-and-add: 2^m = 1 (mod q).
  void reduce_mersenne(BigInt& x) const {
    if (sgn(x) < 0) {
      reduce_general(x);
      return;
    }
    thread_local BigInt hi;
    while (bigint::bit_length(x) > exponent_) {
      mpz_tdiv_q_2exp(hi.get_mpz_t(), x.get_mpz_t(), exponent_);
      mpz_tdiv_r_2exp(x.get_mpz_t(), x.get_mpz_t(), exponent_);
      mpz_add(x.get_mpz_t(), x.get_mpz_t(), hi.get_mpz_t());
    }
    if (x >= q_) x -= q_;
  }

  std::string describe() const {
    if (kind_ == Kind::Mersenne) return "mersenne(2^" + std::to_string(exponent_) + "-1)";
    return "general(" + std::to_string(bits_) + "-bit)";
  }

  friend bool operator==(const PrimeFieldConfig& a, const PrimeFieldConfig& b) { return a.q_ == b.q_; }

 private:
  PrimeFieldConfig(BigInt q, Kind kind, unsigned exponent)
      : q_(std::move(q)), kind_(kind), exponent_(exponent), bits_(bigint::bit_length(q_)) {
    if (q_ < 2 || !bigint::is_probable_prime(q_)) throw ConfigError("field modulus is not prime: " + q_.get_str());
  }

  BigInt q_;
  Kind kind_;
  unsigned exponent_;
  std::size_t bits_;
};

using FieldPtr = std::shared_ptr<const PrimeFieldConfig>;

// Residue in [0, q). Holds a non-owning pointer; the field config must outlive the element.
class FieldElement {
 public:
  FieldElement() = default;
  FieldElement(const PrimeFieldConfig& field, BigInt value) : value_(std::move(value)), field_(&field) {
    if (sgn(value_) < 0 || value_ >= field.modulus()) field.reduce_general(value_);
  }
  FieldElement(const PrimeFieldConfig& field, long value) : FieldElement(field, BigInt(value)) {}

  static FieldElement zero(const PrimeFieldConfig& f) { return FieldElement(f, 0L); }
  static FieldElement one(const PrimeFieldConfig& f) { return FieldElement(f, 1L); }
  static FieldElement random(const PrimeFieldConfig& f, RandomSource& rng) {
    return FieldElement(f, bigint::uniform_below(f.modulus(), rng));
  }
  static FieldElement from_bytes(const PrimeFieldConfig& f, ByteView b) { return FieldElement(f, bigint::from_bytes(b)); }

  const BigInt& value() const { return value_; }
  const PrimeFieldConfig& field() const {
    if (field_ == nullptr) throw ConfigError("field element without a field");
    return *field_;
  }
  bool is_zero() const { return sgn(value_) == 0; }
  Bytes to_bytes() const { return bigint::to_bytes(value_, field().byte_width()); }

  FieldElement& operator+=(const FieldElement& o) {
    check(o);
    value_ += o.value_;
    if (value_ >= field_->modulus()) value_ -= field_->modulus();
    return *this;
  }
  FieldElement& operator-=(const FieldElement& o) {
    check(o);
    value_ -= o.value_;
    if (sgn(value_) < 0) value_ += field_->modulus();
    return *this;
  }
  FieldElement& operator*=(const FieldElement& o) {
    check(o);
    value_ *= o.value_;
    field_->reduce(value_);
    return *this;
  }
  friend FieldElement operator+(FieldElement a, const FieldElement& b) { return a += b; }
  friend FieldElement operator-(FieldElement a, const FieldElement& b) { return a -= b; }
  friend FieldElement operator*(FieldElement a, const FieldElement& b) { return a *= b; }
  FieldElement operator-() const { return zero(field()) - *this; }

  FieldElement pow(const BigInt& e) const {
    return FieldElement(field(), bigint::mod_exp(value_, e, field().modulus()));
  }
  FieldElement inverse() const {
    if (is_zero()) throw ProtocolError("inverse of zero");
    BigInt inv;
    mpz_invert(inv.get_mpz_t(), value_.get_mpz_t(), field().modulus().get_mpz_t());
    return FieldElement(field(), inv);
  }

  friend bool operator==(const FieldElement& a, const FieldElement& b) {
    return a.value_ == b.value_ && (a.field_ == b.field_ || (a.field_ && b.field_ && *a.field_ == *b.field_));
  }

 private:
  void check(const FieldElement& o) const {
    if (field_ == nullptr || o.field_ == nullptr) throw ConfigError("field element without a field");
    if (field_ != o.field_ && !(*field_ == *o.field_)) throw ConfigError("field mismatch");
  }

  BigInt value_;
  const PrimeFieldConfig* field_ = nullptr;
};

// Coefficients are stored constant term first.
class Polynomial {
 public:
  Polynomial(const PrimeFieldConfig& field, std::vector<FieldElement> coefficients, std::size_t degree_bound)
      : field_(&field), coeffs_(std::move(coefficients)), degree_bound_(degree_bound) {
    if (coeffs_.empty()) coeffs_.push_back(FieldElement::zero(field));
    for (const auto& c : coeffs_)
      if (!(c.field() == field)) throw ConfigError("polynomial coefficient from another field");
    if (effective_degree() > degree_bound_) throw ConfigError("polynomial exceeds its degree bound");
  }
  Polynomial(const PrimeFieldConfig& field, std::vector<FieldElement> coefficients)
      : Polynomial(field, coefficients, coefficients.empty() ? 0 : coefficients.size() - 1) {}

  const PrimeFieldConfig& field() const { return *field_; }
  const std::vector<FieldElement>& coefficients() const { return coeffs_; }
  std::size_t degree_bound() const { return degree_bound_; }
  std::size_t effective_degree() const {
    for (std::size_t i = coeffs_.size(); i-- > 1;)
      if (!coeffs_[i].is_zero()) return i;
    return 0;
  }

  // Horner evaluation.
  FieldElement operator()(const FieldElement& x) const {
    if (!(x.field() == *field_)) throw ConfigError("evaluation point from another field");
    FieldElement acc = coeffs_.back();
    for (std::size_t i = coeffs_.size() - 1; i-- > 0;) {
      acc *= x;
      acc += coeffs_[i];
    }
    return acc;
  }
  FieldElement operator()(long x) const { return (*this)(FieldElement(*field_, x)); }

 private:
  const PrimeFieldConfig* field_;
  std::vector<FieldElement> coeffs_;
  std::size_t degree_bound_;
};

inline FieldElement poly_eval(const Polynomial& p, const FieldElement& x) { return p(x); }

// Degree-`degree` polynomial with the given constant term and uniform higher coefficients.
inline Polynomial random_polynomial(std::size_t degree, const FieldElement& constant_term, RandomSource& rng) {
  const auto& f = constant_term.field();
  std::vector<FieldElement> c;
  c.reserve(degree + 1);
  c.push_back(constant_term);
  for (std::size_t i = 0; i < degree; ++i) c.push_back(FieldElement::random(f, rng));
  return Polynomial(f, std::move(c), degree);
}

// Weights w_j with f(0) = sum_j w_j f(x_j) for every f of degree < |xs|.
inline std::vector<FieldElement> lagrange_coefficients_at_zero(const std::vector<FieldElement>& xs) {
  if (xs.empty()) throw ProtocolError("interpolation needs at least one point");
  const auto& f = xs.front().field();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].is_zero()) throw ProtocolError("interpolation index 0 is reserved for the secret");
    for (std::size_t j = 0; j < i; ++j)
      if (xs[i] == xs[j]) throw ProtocolError("duplicate interpolation index");
  }
  std::vector<FieldElement> w;
  w.reserve(xs.size());
  for (std::size_t j = 0; j < xs.size(); ++j) {
    FieldElement num = FieldElement::one(f), den = FieldElement::one(f);
    for (std::size_t m = 0; m < xs.size(); ++m) {
      if (m == j) continue;
      num *= xs[m];
      den *= xs[m] - xs[j];
    }
    w.push_back(num * den.inverse());
  }
  return w;
}

inline FieldElement lagrange_at_zero(const std::vector<std::pair<FieldElement, FieldElement>>& points) {
  std::vector<FieldElement> xs;
  xs.reserve(points.size());
  for (const auto& [x, y] : points) xs.push_back(x);
  auto w = lagrange_coefficients_at_zero(xs);
  FieldElement acc = FieldElement::zero(points.front().second.field());
  for (std::size_t j = 0; j < points.size(); ++j) acc += w[j] * points[j].second;
  return acc;
}

inline BigInt mod_exp(const BigInt& base, const BigInt& exponent, const BigInt& modulus) {
  return bigint::mod_exp(base, exponent, modulus);
}

}  // namespace qss
