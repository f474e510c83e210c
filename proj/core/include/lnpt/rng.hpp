#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace lnpt {

// Derives an independent 64-bit seed for one concern ("init", "batch-order",
// "hutchinson", ...) from the master seed. Streams for different labels never
// share draws, so enabling one feature cannot shift another's randomness.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label);

// Seeded generator for one concern.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t master, std::string_view label) : engine_(derive_seed(master, label)) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  // +1 or -1 with equal probability.
  double rademacher() { return (engine_() >> 63) ? 1.0 : -1.0; }
  std::uint64_t next() { return engine_(); }
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// FNV-1a over raw bytes; used for parameter checksums and label hashing.
std::uint64_t fnv1a(std::span<const std::byte> bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

template <typename T>
std::uint64_t checksum(std::span<const T> values) {
  return fnv1a(std::as_bytes(values));
}

}  // namespace lnpt
