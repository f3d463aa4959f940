#pragma once

#include <cstdint>
#include <random>

#include "covsteer/types.hpp"

namespace covsteer {

/// splitmix64 mixing step; used to derive independent stream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Standard-normal stream. Streams derived from the same (seed, stream_id)
/// pair are identical; distinct stream ids give statistically independent
/// sequences, so per-sample streams can be consumed in any order.
class GaussianStream {
 public:
  GaussianStream(std::uint64_t seed, std::uint64_t stream_id)
      : engine_(splitmix64(seed ^ splitmix64(stream_id))) {}

  double next() { return normal_(engine_); }

  Vec vector(int k) {
    Vec v(k);
    for (int i = 0; i < k; ++i) v(i) = normal_(engine_);
    return v;
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

}  // namespace covsteer
