#include "sba/rng.hpp"

namespace sba {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

RandomStream make_stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return RandomStream(seq);
}

std::uint64_t mix_seed(std::uint64_t seed, std::string_view name) {
  // FNV-1a over the name, folded into the seed.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(seed ^ splitmix64(h));
}

Seeds Seeds::derive(std::uint64_t master) {
  return Seeds{mix_seed(master, "init"),  mix_seed(master, "shuffle"),
               mix_seed(master, "scheduler"), mix_seed(master, "noise"),
               mix_seed(master, "mask"),  mix_seed(master, "split")};
}

}  // namespace sba
