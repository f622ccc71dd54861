#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace momtl {

// splitmix64 finalizer; good enough to decorrelate derived seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// One root seed fans out into independent per-purpose streams so that,
// e.g., changing the batch size does not perturb model initialization.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose,
                                 std::uint64_t index = 0) {
  std::uint64_t h = splitmix64(root ^ 0x6d6f6d746cULL);  // "momtl"
  for (unsigned char c : purpose) h = splitmix64(h ^ c);
  return splitmix64(h ^ index);
}

inline std::mt19937_64 make_stream(std::uint64_t root, std::string_view purpose,
                                   std::uint64_t index = 0) {
  return std::mt19937_64(derive_seed(root, purpose, index));
}

}  // namespace momtl
