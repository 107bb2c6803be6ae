#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace sba {

using RandomStream = std::mt19937_64;

// Independent stream keyed by (seed, tag, index). Different tags never share
// a state sequence, so consuming one stream cannot shift another.
RandomStream make_stream(std::uint64_t seed, std::uint64_t tag = 0,
                         std::uint64_t index = 0);

std::uint64_t mix_seed(std::uint64_t seed, std::string_view name);

// Per-run seeds, one per source of randomness.
struct Seeds {
  std::uint64_t init = 1;
  std::uint64_t shuffle = 2;
  std::uint64_t scheduler = 3;
  std::uint64_t noise = 4;
  std::uint64_t mask = 5;
  std::uint64_t split = 6;

  static Seeds derive(std::uint64_t master);
};

}  // namespace sba
