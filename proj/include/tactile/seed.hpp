#pragma once

// Seed derivation tree. Every random stream in an experiment is keyed by a
// path of labels below the run seed, e.g. run -> "env" -> "agent" -> "init":
//
//   derive_seed(derive_seed(derive_seed(run, "env"), "agent"), "init")
//
// so adding a consumer never perturbs the streams of its siblings.

#include <cstdint>
#include <string_view>

namespace tactile {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline constexpr std::uint64_t derive_seed(std::uint64_t parent, std::string_view label) {
  return splitmix64(parent ^ fnv1a64(label));
}

inline constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
  return splitmix64(parent + 0x632be59bd9b4e019ULL * (index + 1));
}

}  // namespace tactile
