#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <string_view>

#include "qss/bytes.hpp"
#include "qss/error.hpp"

namespace qss {

// Pull-based supply of uniform random bits. Implementations throw KeySupplyError when exhausted.
class RandomSource {
 public:
  virtual ~RandomSource() = default;
  virtual BitString bits(std::size_t n) = 0;

  Bytes bytes(std::size_t n) { return bits(n * 8).bytes(); }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stable across platforms, unlike std::hash.
inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(parent ^ splitmix64(h));
}

// Deterministic entropy for the simulator. Stands in for the physical RNG of a QKD node.
class SeededRandom final : public RandomSource {
 public:
  explicit SeededRandom(std::uint64_t seed) : engine_(seed) {}

  BitString bits(std::size_t n) override {
    std::vector<std::uint64_t> words((n + 63) / 64 + 1, 0);
    for (std::size_t i = 0; i < (n + 63) / 64; ++i) words[i] = engine_();
    return BitString::from_words(words, n);
  }

 private:
  std::mt19937_64 engine_;
};

// Replays a fixed bit sequence; used to pin polynomial coefficients in tests.
class ScriptedRandom final : public RandomSource {
 public:
  ScriptedRandom() = default;
  void push(const BitString& b) {
    for (std::size_t i = 0; i < b.size(); ++i) queue_.push_back(b.get(i));
  }
  // Appends `value` as a `width`-bit big-endian integer.
  void push_value(std::uint64_t value, std::size_t width) {
    for (std::size_t i = 0; i < width; ++i) queue_.push_back((value >> (width - 1 - i)) & 1u);
  }
  std::size_t remaining() const { return queue_.size(); }

  BitString bits(std::size_t n) override {
    if (queue_.size() < n) throw KeySupplyError("scripted randomness exhausted");
    BitString out(n);
    for (std::size_t i = 0; i < n; ++i) {
      out.set(i, queue_.front());
      queue_.pop_front();
    }
    return out;
  }

 private:
  std::deque<bool> queue_;
};

// Caps how many bits may be drawn from an underlying source.
class BudgetedRandom final : public RandomSource {
 public:
  BudgetedRandom(RandomSource& inner, std::size_t budget_bits) : inner_(inner), budget_(budget_bits) {}

  BitString bits(std::size_t n) override {
    if (n > budget_) throw KeySupplyError("random budget exhausted");
    budget_ -= n;
    return inner_.bits(n);
  }
  std::size_t remaining() const { return budget_; }

 private:
  RandomSource& inner_;
  std::size_t budget_;
};

}  // namespace qss
