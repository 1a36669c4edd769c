#ifndef DIFFAD_RNG_HPP
#define DIFFAD_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>

namespace diffad {

// splitmix64 finalizer; good avalanche for seed derivation.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Seed for the named substream of a root seed. Streams are keyed by
// (root, name, index) so work scheduled across threads in any order still
// draws identical randomness per logical unit (window, iteration, path).
inline std::uint64_t substream_seed(std::uint64_t root, std::string_view name,
                                    std::uint64_t index = 0) {
  return mix64(mix64(root ^ fnv1a(name)) + index);
}

inline std::mt19937_64 make_rng(std::uint64_t root, std::string_view name,
                                std::uint64_t index = 0) {
  return std::mt19937_64(substream_seed(root, name, index));
}

}  // namespace diffad

#endif
