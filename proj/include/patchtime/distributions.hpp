#pragma once

#include "patchtime/rng.hpp"

#include "json.hpp"

#include <string>
#include <variant>
#include <vector>

namespace patchtime {

/// Sum of k exponential phases with rate lambda.
struct ErlangParams {
  int k = 1;
  double lambda = 1.0;
  bool operator==(const ErlangParams&) const = default;
};

struct HyperErlangBranch {
  double alpha = 1.0;
  int k = 1;
  double lambda = 1.0;
  bool operator==(const HyperErlangBranch&) const = default;
};

/// Mixture of Erlang branches; branch i is taken with probability alpha_i.
struct HyperErlangParams {
  std::vector<HyperErlangBranch> branches;
  bool operator==(const HyperErlangParams&) const = default;
};

/// Erlang shifted right by a constant delay c.
struct ErlangPlusCParams {
  int k = 1;
  double lambda = 1.0;
  double c = 0.0;
  bool operator==(const ErlangPlusCParams&) const = default;
};

using PatchDistribution = std::variant<ErlangParams, HyperErlangParams, ErlangPlusCParams>;

/// Throws std::invalid_argument describing the first violated invariant.
void check_params(const PatchDistribution& dist);

double pdf(const PatchDistribution& dist, double t);
/// -infinity outside the support.
double log_pdf(const PatchDistribution& dist, double t);
double cdf(const PatchDistribution& dist, double t);
double mean(const PatchDistribution& dist);
/// k for Erlang and Erlang+c; sum of alpha_i k_i for hyper-Erlang.
double expected_phases(const PatchDistribution& dist);
/// Draw order: branch choice first, then k exponential phases.
double sample(const PatchDistribution& dist, Rng& rng);

/// "erlang", "hyper_erlang" or "erlang_plus_c".
std::string family_tag(const PatchDistribution& dist);
std::string describe(const PatchDistribution& dist);

/// Erlang log-density with precomputed log-gamma, used in hot loops.
double erlang_log_pdf(int k, double lambda, double t);
/// Regularised lower incomplete gamma P(k, x) for integer k.
double erlang_cdf(int k, double lambda, double t);

void to_json(nlohmann::json& j, const PatchDistribution& dist);
void from_json(const nlohmann::json& j, PatchDistribution& dist);

} // namespace patchtime
