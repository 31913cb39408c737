#pragma once

#include "patchtime/distributions.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace patchtime {

class PtaError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct Location {
  std::string id;
  std::optional<double> rate; ///< exponential exit rate (1/s); none for branch points and end
  bool is_initial = false;
  bool is_end = false;
  bool is_branch_point = false;
  bool operator==(const Location&) const = default;
};

/// Edge may not fire before `clock` has reached `bound`.
struct ClockGuard {
  std::string clock;
  double bound = 0.0;
  bool operator==(const ClockGuard&) const = default;
};

struct Edge {
  std::string from;
  std::string to;
  std::optional<std::int64_t> weight; ///< only on edges leaving a branch point
  std::optional<ClockGuard> guard;
  std::optional<std::string> reset;
  bool operator==(const Edge&) const = default;
};

/// Route model: a chain of exponential phase locations from `init` to `end`.
struct Pta {
  std::vector<Location> locations;
  std::vector<Edge> edges;
  std::vector<std::string> clocks;
  std::string end_location;
  bool operator==(const Pta&) const = default;

  const Location* find(const std::string& id) const;
};

inline constexpr int kDefaultWeightDigits = 4;

/// Rounds each alpha to `digits` decimals, scales to integers and divides by
/// the gcd, e.g. (0.4938, 0.5062) -> (2469, 2531).
std::vector<std::int64_t> alpha_to_integer_weights(std::span<const double> alphas,
                                                   int digits = kDefaultWeightDigits);

struct BuildOptions {
  /// Rate of the initial location; its 1 s mean delay is part of every run.
  double initial_rate = 1.0;
  int weight_digits = kDefaultWeightDigits;
};

/// One chain segment per patch: hyper-Erlang patches enter through a branch
/// point with weighted edges into m chains; Erlang+c patches reset a patch
/// clock on entry and guard the first phase exit with clock >= c.
Pta build_pta(std::span<const PatchDistribution> patch_dists, const BuildOptions& opts = {});

/// Human-readable invariant violations; empty when the model is valid.
std::vector<std::string> validate(const Pta& pta);

/// Expected time from init to end by dynamic programming over the chain.
/// nullopt when a guard's clock value at the guarded location is not
/// structurally known.
std::optional<double> analytic_mean_time(const Pta& pta);

void to_json(nlohmann::json& j, const Pta& pta);
void from_json(const nlohmann::json& j, Pta& pta);

} // namespace patchtime
