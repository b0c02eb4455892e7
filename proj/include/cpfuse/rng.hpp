#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "tensor.hpp"

namespace cpfuse {

using Rng = std::mt19937_64;

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// FNV-1a, stable across platforms and runs (std::hash is not).
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}
}  // namespace detail

/// Independent stream for (master seed, label, index).
inline Rng derive_rng(std::uint64_t master, std::string_view label, std::uint64_t index) {
  std::uint64_t h = detail::splitmix64(master);
  h = detail::splitmix64(h ^ detail::fnv1a(label));
  h = detail::splitmix64(h ^ index);
  std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

/// Child stream drawn from a parent generator.
inline Rng split_rng(Rng& parent) { return Rng(parent()); }

inline Matrix randn(Index rows, Index cols, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix M(rows, cols);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r) M(r, c) = dist(rng);
  return M;
}

inline Matrix rand_abs_normal(Index rows, Index cols, Rng& rng) {
  return randn(rows, cols, rng).cwiseAbs();
}

}  // namespace cpfuse
