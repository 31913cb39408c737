#include "patchtime/rng.hpp"

#include <cmath>
#include <numbers>

namespace patchtime {

namespace {

// splitmix64 finaliser; spreads nearby seeds before they reach the engine.
std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

} // namespace

Rng::Rng(std::uint64_t seed) : engine_(mix(seed)) {}

Rng Rng::substream(std::uint64_t seed, std::uint64_t index) {
  return Rng(mix(seed) ^ mix(index + 0x632be59bd9b4e019ULL));
}

double Rng::uniform_open0() {
  return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_index(std::uint64_t bound) {
  // Rejection sampling keeps the draw unbiased for any bound.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t v;
  do {
    v = engine_();
  } while (v >= limit);
  return v % bound;
}

double Rng::exponential(double rate) {
  return -std::log(uniform_open0()) / rate;
}

double Rng::normal(double mean, double stddev) {
  if (has_spare_) {
    has_spare_ = false;
    return mean + stddev * spare_;
  }
  const double r = std::sqrt(-2.0 * std::log(uniform_open0()));
  const double theta = 2.0 * std::numbers::pi * uniform();
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return mean + stddev * r * std::cos(theta);
}

} // namespace patchtime
