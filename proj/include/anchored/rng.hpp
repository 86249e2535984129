#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace anchored {

using Rng = std::mt19937_64;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a, constexpr so purpose tags hash at compile time.
constexpr std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Independent stream derived from (master seed, purpose tag, indices).
/// Every consumer of randomness gets its own stream; no stream is shared.
inline Rng substream(std::uint64_t seed, std::string_view tag, std::uint64_t i = 0,
                     std::uint64_t j = 0) {
  std::uint64_t s = detail::splitmix64(seed);
  s = detail::splitmix64(s ^ detail::hash_tag(tag));
  s = detail::splitmix64(s ^ i);
  s = detail::splitmix64(s ^ (j * 0x632be59bd9b4e019ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32),
                    static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j)};
  return Rng(seq);
}

}  // namespace anchored
