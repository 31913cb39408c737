#pragma once

#include <cstdint>
#include <random>

namespace patchtime {

/// Seeded random stream with portable variate generation.
///
/// Only the raw 64-bit engine output is taken from the standard library;
/// uniforms, exponentials and normals are derived here so that sequences
/// are identical across standard library implementations.
class Rng {
public:
  explicit Rng(std::uint64_t seed);

  /// Independent stream for (seed, index), e.g. one per simulation batch.
  static Rng substream(std::uint64_t seed, std::uint64_t index);

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on (0, 1], 53 bits.
  double uniform_open0();
  /// Uniform on [0, 1), 53 bits.
  double uniform();
  /// Uniform integer on [0, bound).
  std::uint64_t uniform_index(std::uint64_t bound);
  double exponential(double rate);
  double normal(double mean, double stddev);

private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

} // namespace patchtime
