#pragma once

#include <cstdint>
#include <string_view>

namespace cavsim {

// splitmix64 step; used both as a stand-alone mixer and to seed the
// main generator.
std::uint64_t splitmix64(std::uint64_t& state);

// Deterministically derives an independent stream seed from a master seed,
// a stream name, and an index.  The same (master, name, index) triple always
// yields the same seed on every platform, which keeps multi-threaded
// ensemble runs reproducible: each trace gets its own derived seed and the
// schedule of threads cannot change the numbers.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream,
                          std::uint64_t index);

// Small self-contained generator (xoshiro256** core) with the samplers the
// simulator needs.  Hand-rolled normal/Poisson transforms keep results
// bit-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  double uniform01();              // in [0, 1)
  double normal();                 // standard normal (Box-Muller, cached pair)
  double normal(double mu, double sigma) { return mu + sigma * normal(); }
  // Poisson sample; inversion-by-search for small means, PTRS transformed
  // rejection for large ones.
  std::int64_t poisson(double mean);

 private:
  std::uint64_t s_[4];
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace cavsim
