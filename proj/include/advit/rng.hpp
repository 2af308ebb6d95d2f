#pragma once

// Splittable counter-based PRNG.
//
// The generator is frozen so that sampled patch subsets and generated data
// stay reproducible across versions and platforms:
//
//   mix64(z): the SplitMix64 finalizer
//     z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//     z ^= z >> 27; z *= 0x94D049BB133111EB;
//     z ^= z >> 31;
//   master(seed):      key = mix64(seed + 0x9E3779B97F4A7C15), counter = 0
//   split(key k):      child.key = mix64(key + mix64(k ^ 0xD1B54A32D192ED03)),
//                      child.counter = 0, lineage = parent lineage + [k]
//   next_u64():        mix64(key + (++counter) * 0x9E3779B97F4A7C15)
//
// Splitting reads only the key, never the counter, so a child stream is the
// same no matter how much the parent (or any sibling) has been consumed.
// Each stream is single-owner; share work across threads by splitting.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace advit {

class RngStream {
 public:
  RngStream() : RngStream(0) {}

  explicit RngStream(std::uint64_t master_seed)
      : key_(mix64(master_seed + kGolden)) {}

  RngStream split(std::uint64_t key) const {
    RngStream child;
    child.key_ = mix64(key_ + mix64(key ^ 0xD1B54A32D192ED03ULL));
    child.counter_ = 0;
    child.lineage_ = lineage_;
    child.lineage_.push_back(key);
    return child;
  }

  std::uint64_t next_u64() {
    ++counter_;
    return mix64(key_ + counter_ * kGolden);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). Multiply-shift map; bias is O(n / 2^64).
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Box-Muller; consumes exactly two draws per call.
  double next_normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = 1.0 - next_double();  // (0, 1], keeps log finite
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586476925287 * u2);
  }

  // First `count` of a Fisher-Yates shuffle of [0, n): a uniform sample
  // without replacement, returned sorted.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t j = i + static_cast<std::size_t>(next_below(n - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    return idx;
  }

  const std::vector<std::uint64_t>& lineage() const { return lineage_; }
  std::uint64_t key() const { return key_; }

  static std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  std::vector<std::uint64_t> lineage_;
};

}  // namespace advit
