#include "patchtime/pta.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

using namespace patchtime;

namespace {

const Edge* edge(const Pta& pta, const std::string& from, const std::string& to) {
  for (const auto& e : pta.edges)
    if (e.from == from && e.to == to) return &e;
  return nullptr;
}

bool mentions(const std::vector<std::string>& v, const std::string& needle) {
  return std::any_of(v.begin(), v.end(), [&](const std::string& s) { return s.find(needle) != std::string::npos; });
}

} // namespace

TEST(Weights, ReferenceRatio) {
  const std::vector<double> a{0.4938, 0.5062};
  EXPECT_EQ(alpha_to_integer_weights(a), (std::vector<std::int64_t>{2469, 2531}));
}

TEST(Weights, GcdReduction) {
  EXPECT_EQ(alpha_to_integer_weights(std::vector<double>{0.5, 0.5}), (std::vector<std::int64_t>{1, 1}));
  EXPECT_EQ(alpha_to_integer_weights(std::vector<double>{0.25, 0.25, 0.5}), (std::vector<std::int64_t>{1, 1, 2}));
  EXPECT_EQ(alpha_to_integer_weights(std::vector<double>{0.3, 0.7}), (std::vector<std::int64_t>{3, 7}));
}

TEST(Weights, RoundingToZeroOrBadSumIsAnError) {
  EXPECT_THROW(alpha_to_integer_weights(std::vector<double>{0.99999, 0.00001}), PtaError);
  EXPECT_THROW(alpha_to_integer_weights(std::vector<double>{0.5, 0.4}), PtaError);
}

TEST(Build, HyperErlangPatchStructure) {
  const std::vector<PatchDistribution> d{HyperErlangParams{{{0.4938, 2, 0.02}, {0.5062, 3, 0.04}}}};
  const auto pta = build_pta(d);
  EXPECT_TRUE(validate(pta).empty());
  EXPECT_TRUE(pta.find("init")->is_initial);
  EXPECT_EQ(pta.find("init")->rate, 1.0);
  EXPECT_TRUE(pta.find("p0_bp")->is_branch_point);
  EXPECT_EQ(edge(pta, "p0_bp", "p0_b0_s0")->weight, 2469);
  EXPECT_EQ(edge(pta, "p0_bp", "p0_b1_s0")->weight, 2531);
  EXPECT_EQ(pta.find("p0_b1_s2")->rate, 0.04);
  EXPECT_TRUE(edge(pta, "p0_b0_s1", "end"));
  EXPECT_TRUE(edge(pta, "p0_b1_s2", "end"));
  EXPECT_EQ(pta.end_location, "end");
  EXPECT_TRUE(pta.clocks.empty());
  // init, branch point, 5 phases, end
  EXPECT_EQ(pta.locations.size(), 8u);
}

TEST(Build, ErlangPlusCPatchResetsAndGuardsItsClock) {
  const std::vector<PatchDistribution> d{ErlangParams{2, 0.1}, ErlangPlusCParams{3, 0.05, 100.0}};
  const auto pta = build_pta(d);
  EXPECT_TRUE(validate(pta).empty());
  EXPECT_EQ(pta.clocks, std::vector<std::string>{"x1"});
  const auto* entry = edge(pta, "p0_s1", "p1_s0");
  ASSERT_TRUE(entry);
  EXPECT_EQ(entry->reset, "x1");
  const auto* first = edge(pta, "p1_s0", "p1_s1");
  ASSERT_TRUE(first);
  ASSERT_TRUE(first->guard);
  EXPECT_EQ(first->guard->clock, "x1");
  EXPECT_EQ(first->guard->bound, 100.0);
  EXPECT_FALSE(edge(pta, "p1_s1", "p1_s2")->guard);
}

TEST(Build, SinglePhaseErlangPlusCGuardsTheExit) {
  const std::vector<PatchDistribution> d{ErlangPlusCParams{1, 0.5, 40.0}};
  const auto pta = build_pta(d);
  EXPECT_TRUE(validate(pta).empty());
  EXPECT_EQ(edge(pta, "init", "p0_s0")->reset, "x0");
  EXPECT_EQ(edge(pta, "p0_s0", "end")->guard->bound, 40.0);
}

TEST(Build, HyperErlangAfterErlangPlusC) {
  const std::vector<PatchDistribution> d{ErlangPlusCParams{1, 0.5, 40.0},
                                         HyperErlangParams{{{0.5, 1, 0.1}, {0.5, 2, 0.2}}}};
  const auto pta = build_pta(d);
  EXPECT_TRUE(validate(pta).empty());
  EXPECT_TRUE(edge(pta, "p0_s0", "p1_bp")->guard);
}

TEST(Validate, DetectsBrokenModels) {
  const std::vector<PatchDistribution> d{HyperErlangParams{{{0.5, 1, 0.1}, {0.5, 2, 0.2}}},
                                         ErlangPlusCParams{2, 0.1, 10.0}};
  const auto good = build_pta(d);
  ASSERT_TRUE(validate(good).empty());

  auto zero = good;
  for (auto& e : zero.edges)
    if (e.weight) e.weight = 0;
  EXPECT_TRUE(mentions(validate(zero), "weight"));

  auto no_end = good;
  no_end.locations.erase(std::remove_if(no_end.locations.begin(), no_end.locations.end(),
                                        [](const Location& l) { return l.is_end; }),
                         no_end.locations.end());
  EXPECT_FALSE(validate(no_end).empty());

  auto undeclared = good;
  undeclared.clocks.clear();
  EXPECT_TRUE(mentions(validate(undeclared), "x1"));

  auto cycle = good;
  cycle.edges.push_back({"p1_s1", "p1_s0", std::nullopt, std::nullopt, std::nullopt});
  EXPECT_FALSE(validate(cycle).empty());

  auto bad_rate = good;
  for (auto& l : bad_rate.locations)
    if (l.id == "p1_s0") l.rate = -1.0;
  EXPECT_TRUE(mentions(validate(bad_rate), "p1_s0"));

  auto two_initial = good;
  for (auto& l : two_initial.locations)
    if (l.id == "p1_s0") l.is_initial = true;
  EXPECT_TRUE(mentions(validate(two_initial), "p1_s0"));
}

TEST(AnalyticMean, EqualsOnePlusPatchMeans) {
  const std::vector<PatchDistribution> d{ErlangParams{4, 0.1}, HyperErlangParams{{{0.3, 2, 0.05}, {0.7, 3, 0.2}}},
                                         ErlangPlusCParams{3, 0.05, 100.0}, ErlangPlusCParams{1, 0.2, 30.0}};
  double expected = 1.0;
  for (const auto& x : d) expected += mean(x);
  const auto m = analytic_mean_time(build_pta(d));
  ASSERT_TRUE(m);
  EXPECT_NEAR(*m, expected, 1e-9);
}

TEST(AnalyticMean, IncludesRoundedWeights) {
  const std::vector<PatchDistribution> d{HyperErlangParams{{{0.123456, 1, 0.1}, {0.876544, 1, 0.01}}}};
  const auto m = analytic_mean_time(build_pta(d));
  EXPECT_NEAR(*m, 1.0 + 0.1235 * 10.0 + 0.8765 * 100.0, 1e-9);
}

TEST(PtaJson, RoundTrip) {
  const std::vector<PatchDistribution> d{HyperErlangParams{{{0.5, 1, 0.1}, {0.5, 2, 0.2}}},
                                         ErlangPlusCParams{2, 0.1, 10.0}};
  const auto pta = build_pta(d);
  const nlohmann::json j = pta;
  EXPECT_EQ(j.get<Pta>(), pta);
}

TEST(Build, RejectsInvalidDistributions) {
  EXPECT_THROW(build_pta(std::vector<PatchDistribution>{}), PtaError);
  EXPECT_THROW(build_pta(std::vector<PatchDistribution>{ErlangParams{0, 1.0}}), std::exception);
}
