#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace lm {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Hashes a key tuple (seed, stream, counter, ...) into one 64-bit seed, so
/// every consumer gets an independent stream regardless of call order.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> key) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (std::uint64_t k : key) h = mix64(h ^ mix64(k));
  return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::initializer_list<std::uint64_t> key) { return Rng(derive_seed(key)); }

/// Stream tags for derive_seed.
enum class Stream : std::uint64_t {
  init = 1,
  batch_order = 2,
  reparam = 3,
  shapes = 4,
};

}  // namespace lm
