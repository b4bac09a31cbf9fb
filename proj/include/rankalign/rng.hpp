#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace rankalign {

using Rng = std::mt19937_64;

/// Independent stream per (seed, tag) so adding a consumer never perturbs the
/// draws of another.
inline Rng make_rng(std::uint64_t seed, std::string_view tag,
                    std::uint64_t index = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h),
                    static_cast<std::uint32_t>(h >> 32),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

}  // namespace rankalign
