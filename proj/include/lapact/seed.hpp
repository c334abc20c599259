#pragma once

#include <cstdint>
#include <string_view>

namespace lapact {

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a, 64 bit.
constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  return mix64(base ^ mix64(salt));
}

// Seed for per-clip, per-epoch resampling: independent of scheduling order.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::string_view clip_id,
                                    std::uint64_t epoch) {
  return derive_seed(derive_seed(base, fnv1a(clip_id)), epoch);
}

} // namespace lapact
