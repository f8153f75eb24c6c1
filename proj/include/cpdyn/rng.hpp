#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace cpdyn {

// Derives an independent stream seed from a base seed and a purpose tag
// ("init", "observations", ...). Streams for distinct tags never collide
// in practice, so every consumer of randomness can own its own stream.
uint64_t derive_seed(uint64_t base, std::string_view purpose);

// Seeded random stream with pinned transforms. std::mt19937_64 is fully
// specified by the standard and the uniform/normal transforms below are
// hand-rolled, so identical seeds give identical draws on every platform.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0, 1]; safe as a log() argument.
  double uniform01_open() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  double normal(double mean = 0.0, double stddev = 1.0);

  // Uniform integer in [0, n), n > 0. Rejection sampling, unbiased.
  int64_t below(int64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[i], v[below(i + 1)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cpdyn
