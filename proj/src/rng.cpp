#include "proxie/rng.hpp"

namespace proxie {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return mix64(mix64(master) ^ mix64(index + 0x9E3779B97F4A7C15ULL));
}

Rng substream(std::uint64_t master, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(derive_seed(master, index)),
                    static_cast<std::uint32_t>(derive_seed(master, index) >> 32)};
  return Rng(seq);
}

}  // namespace proxie
