#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace smk {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to decorrelate derived seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derives an independent generator for a named purpose ("data", "init",
/// "shuffle", ...) so that changing one stream never perturbs the others.
inline Rng named_stream(std::uint64_t seed, std::string_view name,
                        std::uint64_t index = 0) {
  return Rng(mix64(mix64(seed) ^ fnv1a(name) ^ mix64(index + 0x51ed2701ULL)));
}

}  // namespace smk
