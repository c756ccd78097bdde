#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace richiv {

// SplitMix64 finalizer. Used to derive independent substream seeds.
std::uint64_t splitmix64(std::uint64_t x);

// Seed of substream `index` under `master`: two SplitMix64 rounds over the
// pair, so neighbouring (master, index) pairs land far apart.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

// Deterministic random stream. std::mt19937_64 is bit-specified by the
// standard; the distribution transforms below are ours so that draws do not
// depend on the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on the open interval (0, 1), 53 bits of resolution.
  double uniform();
  // Standard normal by inverse CDF of one uniform draw.
  double normal();
  // Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace richiv
