#pragma once

#include <cstdint>
#include <random>

namespace proxie {

using Rng = std::mt19937_64;

// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

// Seed of substream `index` under `master`. Stable across releases: the
// replication seed contract of the benchmark depends on it.
//   derive_seed(m, i) = mix64(mix64(m) ^ mix64(i + 0x9E3779B97F4A7C15))
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

// Generator for substream `index`; replication r always sees the same
// stream regardless of which thread runs it.
Rng substream(std::uint64_t master, std::uint64_t index);

}  // namespace proxie
