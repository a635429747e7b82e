#pragma once

#include <cstdint>

namespace colson {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent seed for (stream, index) under a base seed.
//   streams: 0 init, 1 sampling, 2 noise, 3 warm-start worlds,
//            4 warm-start base, 5 exploration worlds, 6 policy noise
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(base ^ (stream * 0x632be59bd9b4e019ULL)) + index);
}

}  // namespace colson
