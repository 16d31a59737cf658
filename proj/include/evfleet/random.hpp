#pragma once

#include <cstdint>
#include <vector>

namespace evfleet {

// splitmix64 step. Used to expand one master seed into per-replication seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// seed_i is the i-th splitmix64 output starting from state = master.
inline std::vector<std::uint64_t> expand_seeds(std::uint64_t master, std::size_t count) {
  std::vector<std::uint64_t> out;
  out.reserve(count);
  std::uint64_t state = master;
  for (std::size_t i = 0; i < count; ++i) out.push_back(splitmix64(state));
  return out;
}

}  // namespace evfleet
