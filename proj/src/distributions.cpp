#include "patchtime/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace patchtime {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

template <class... Ts> struct overloaded : Ts... { using Ts::operator()...; };
template <class... Ts> overloaded(Ts...) -> overloaded<Ts...>;

void check_erlang(int k, double lambda, const char* what) {
  if (k < 1)
    throw std::invalid_argument(std::string(what) + ": shape k must be >= 1");
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument(std::string(what) + ": rate lambda must be positive");
}

// log of sum_{j in [lo, hi)} x^j e^{-x} / j!, hi may be "infinite" (-1).
double poisson_terms_sum(double x, int lo, int hi) {
  double total = 0.0;
  double log_term = lo * std::log(x) - x - std::lgamma(lo + 1.0);
  for (int j = lo; hi < 0 || j < hi; ++j) {
    const double term = std::exp(log_term);
    total += term;
    // Past the mode the terms shrink geometrically.
    if (hi < 0 && j > x && term < total * 1e-17) break;
    log_term += std::log(x) - std::log(j + 1.0);
  }
  return total;
}

} // namespace

double erlang_log_pdf(int k, double lambda, double t) {
  if (t < 0.0) return kNegInf;
  if (t == 0.0) return k == 1 ? std::log(lambda) : kNegInf;
  return k * std::log(lambda) + (k - 1) * std::log(t) - lambda * t - std::lgamma(static_cast<double>(k));
}

double erlang_cdf(int k, double lambda, double t) {
  if (t <= 0.0) return 0.0;
  const double x = lambda * t;
  if (!std::isfinite(x)) return 1.0;
  // P(k, x) = Pr[Poisson(x) >= k]; sum whichever tail is smaller for accuracy.
  if (x < k) return std::min(1.0, poisson_terms_sum(x, k, -1));
  return std::max(0.0, 1.0 - poisson_terms_sum(x, 0, k));
}

void check_params(const PatchDistribution& dist) {
  std::visit(overloaded{
                 [](const ErlangParams& p) { check_erlang(p.k, p.lambda, "Erlang"); },
                 [](const HyperErlangParams& p) {
                   if (p.branches.empty())
                     throw std::invalid_argument("hyper-Erlang: needs at least one branch");
                   double total = 0.0;
                   for (const auto& b : p.branches) {
                     check_erlang(b.k, b.lambda, "hyper-Erlang branch");
                     if (!(b.alpha >= 0.0 && b.alpha <= 1.0))
                       throw std::invalid_argument("hyper-Erlang: alpha outside [0,1]");
                     total += b.alpha;
                   }
                   if (std::abs(total - 1.0) > 1e-12)
                     throw std::invalid_argument("hyper-Erlang: alphas do not sum to 1");
                 },
                 [](const ErlangPlusCParams& p) {
                   check_erlang(p.k, p.lambda, "Erlang+c");
                   if (!(p.c >= 0.0) || !std::isfinite(p.c))
                     throw std::invalid_argument("Erlang+c: constant c must be >= 0");
                 }},
             dist);
}

double log_pdf(const PatchDistribution& dist, double t) {
  return std::visit(
      overloaded{[t](const ErlangParams& p) { return erlang_log_pdf(p.k, p.lambda, t); },
                 [t](const HyperErlangParams& p) {
                   double hi = kNegInf;
                   std::vector<double> terms;
                   terms.reserve(p.branches.size());
                   for (const auto& b : p.branches) {
                     const double v = b.alpha > 0.0
                                          ? std::log(b.alpha) + erlang_log_pdf(b.k, b.lambda, t)
                                          : kNegInf;
                     terms.push_back(v);
                     hi = std::max(hi, v);
                   }
                   if (hi == kNegInf) return kNegInf;
                   double s = 0.0;
                   for (double v : terms) s += std::exp(v - hi);
                   return hi + std::log(s);
                 },
                 [t](const ErlangPlusCParams& p) {
                   return t < p.c ? kNegInf : erlang_log_pdf(p.k, p.lambda, t - p.c);
                 }},
      dist);
}

double pdf(const PatchDistribution& dist, double t) { return std::exp(log_pdf(dist, t)); }

double cdf(const PatchDistribution& dist, double t) {
  return std::visit(overloaded{[t](const ErlangParams& p) { return erlang_cdf(p.k, p.lambda, t); },
                               [t](const HyperErlangParams& p) {
                                 double s = 0.0;
                                 for (const auto& b : p.branches)
                                   s += b.alpha * erlang_cdf(b.k, b.lambda, t);
                                 return std::min(1.0, s);
                               },
                               [t](const ErlangPlusCParams& p) {
                                 return erlang_cdf(p.k, p.lambda, t - p.c);
                               }},
                    dist);
}

double mean(const PatchDistribution& dist) {
  return std::visit(overloaded{[](const ErlangParams& p) { return p.k / p.lambda; },
                               [](const HyperErlangParams& p) {
                                 double s = 0.0;
                                 for (const auto& b : p.branches) s += b.alpha * b.k / b.lambda;
                                 return s;
                               },
                               [](const ErlangPlusCParams& p) { return p.c + p.k / p.lambda; }},
                    dist);
}

double expected_phases(const PatchDistribution& dist) {
  return std::visit(overloaded{[](const ErlangParams& p) { return static_cast<double>(p.k); },
                               [](const HyperErlangParams& p) {
                                 double s = 0.0;
                                 for (const auto& b : p.branches) s += b.alpha * b.k;
                                 return s;
                               },
                               [](const ErlangPlusCParams& p) { return static_cast<double>(p.k); }},
                    dist);
}

namespace {
double sample_erlang(int k, double lambda, Rng& rng) {
  double s = 0.0;
  for (int i = 0; i < k; ++i) s += rng.exponential(lambda);
  return s;
}
} // namespace

double sample(const PatchDistribution& dist, Rng& rng) {
  return std::visit(overloaded{[&rng](const ErlangParams& p) { return sample_erlang(p.k, p.lambda, rng); },
                               [&rng](const HyperErlangParams& p) {
                                 const double u = rng.uniform();
                                 double acc = 0.0;
                                 std::size_t chosen = p.branches.size() - 1;
                                 for (std::size_t i = 0; i < p.branches.size(); ++i) {
                                   acc += p.branches[i].alpha;
                                   if (u < acc) {
                                     chosen = i;
                                     break;
                                   }
                                 }
                                 const auto& b = p.branches[chosen];
                                 return sample_erlang(b.k, b.lambda, rng);
                               },
                               [&rng](const ErlangPlusCParams& p) {
                                 return p.c + sample_erlang(p.k, p.lambda, rng);
                               }},
                    dist);
}

std::string family_tag(const PatchDistribution& dist) {
  return std::visit(overloaded{[](const ErlangParams&) { return std::string("erlang"); },
                               [](const HyperErlangParams&) { return std::string("hyper_erlang"); },
                               [](const ErlangPlusCParams&) { return std::string("erlang_plus_c"); }},
                    dist);
}

std::string describe(const PatchDistribution& dist) {
  std::ostringstream os;
  os.precision(17);
  std::visit(overloaded{[&os](const ErlangParams& p) { os << "Erlang(k=" << p.k << ", lambda=" << p.lambda << ")"; },
                        [&os](const HyperErlangParams& p) {
                          os << "HyperErlang(";
                          for (std::size_t i = 0; i < p.branches.size(); ++i) {
                            const auto& b = p.branches[i];
                            os << (i ? "; " : "") << "alpha=" << b.alpha << " k=" << b.k
                               << " lambda=" << b.lambda;
                          }
                          os << ")";
                        },
                        [&os](const ErlangPlusCParams& p) {
                          os << "ErlangPlusC(k=" << p.k << ", lambda=" << p.lambda << ", c=" << p.c << ")";
                        }},
             dist);
  return os.str();
}

void to_json(nlohmann::json& j, const PatchDistribution& dist) {
  std::visit(overloaded{[&j](const ErlangParams& p) {
                          j = {{"family", "erlang"}, {"k", p.k}, {"lambda", p.lambda}};
                        },
                        [&j](const HyperErlangParams& p) {
                          auto branches = nlohmann::json::array();
                          for (const auto& b : p.branches)
                            branches.push_back({{"alpha", b.alpha}, {"k", b.k}, {"lambda", b.lambda}});
                          j = {{"family", "hyper_erlang"}, {"branches", branches}};
                        },
                        [&j](const ErlangPlusCParams& p) {
                          j = {{"family", "erlang_plus_c"}, {"k", p.k}, {"lambda", p.lambda}, {"c", p.c}};
                        }},
             dist);
}

void from_json(const nlohmann::json& j, PatchDistribution& dist) {
  const auto family = j.at("family").get<std::string>();
  if (family == "erlang") {
    dist = ErlangParams{j.at("k").get<int>(), j.at("lambda").get<double>()};
  } else if (family == "erlang_plus_c") {
    dist = ErlangPlusCParams{j.at("k").get<int>(), j.at("lambda").get<double>(), j.at("c").get<double>()};
  } else if (family == "hyper_erlang") {
    HyperErlangParams p;
    for (const auto& b : j.at("branches"))
      p.branches.push_back({b.at("alpha").get<double>(), b.at("k").get<int>(), b.at("lambda").get<double>()});
    dist = std::move(p);
  } else {
    throw std::invalid_argument("unknown distribution family '" + family + "'");
  }
  check_params(dist);
}

} // namespace patchtime
