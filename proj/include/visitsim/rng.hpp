#pragma once

// Counter-based stream splitting. Every (seed, counter) pair maps to an
// independent generator state, so results never depend on which worker
// thread draws which subject or replication.

#include <cmath>
#include <cstdint>
#include <random>

namespace visitsim {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of substream `counter` under `parent`.
inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t counter) {
  return splitmix64(splitmix64(parent) ^ splitmix64(counter + 0x632be59bd9b4e019ULL));
}

using Engine = std::mt19937_64;

inline Engine make_engine(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32)};
  return Engine(seq);
}

/// Uniform draw strictly inside (0,1).
inline double open_unit(Engine& eng) {
  return (static_cast<double>(eng() >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace visitsim
