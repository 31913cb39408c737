#include "patchtime/distributions.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace patchtime;

namespace {

const PatchDistribution kErlang = ErlangParams{3, 0.05};
const PatchDistribution kHyper = HyperErlangParams{{{0.4938, 2, 0.02}, {0.5062, 5, 0.04}}};
const PatchDistribution kShifted = ErlangPlusCParams{3, 0.05, 100.0};

double simpson(const PatchDistribution& d, double a, double b, int n) {
  const double h = (b - a) / n;
  double s = pdf(d, a) + pdf(d, b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * pdf(d, a + i * h);
  return s * h / 3.0;
}

double ks_statistic(std::vector<double> x, const PatchDistribution& d) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double D = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double F = cdf(d, x[i]);
    D = std::max({D, F - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - F});
  }
  return D;
}

} // namespace

TEST(Distributions, ErlangMatchesReferenceValues) {
  EXPECT_NEAR(pdf(kErlang, 50.0), 0.012825781034984187, 1e-15);
  EXPECT_NEAR(cdf(kErlang, 50.0), 0.45618688411667048, 1e-14);
  EXPECT_NEAR(erlang_cdf(5, 0.1, 60.0), 0.71494349968336878, 1e-14);
  EXPECT_NEAR(erlang_cdf(200, 2.0, 90.0), 0.074858034984159582, 1e-12);
  EXPECT_DOUBLE_EQ(mean(kErlang), 60.0);
  EXPECT_DOUBLE_EQ(expected_phases(kErlang), 3.0);
}

TEST(Distributions, HyperErlangMatchesReferenceValues) {
  EXPECT_NEAR(pdf(kHyper, 120.0), 0.005835953110235866, 1e-15);
  EXPECT_NEAR(cdf(kHyper, 120.0), 0.60660963277805646, 1e-14);
  EXPECT_NEAR(mean(kHyper), 0.4938 * 100.0 + 0.5062 * 125.0, 1e-12);
  EXPECT_NEAR(expected_phases(kHyper), 0.4938 * 2 + 0.5062 * 5, 1e-12);
}

TEST(Distributions, ErlangPlusCIsShiftedErlang) {
  EXPECT_NEAR(pdf(kShifted, 150.0), 0.012825781034984187, 1e-15);
  EXPECT_NEAR(log_pdf(kShifted, 150.0), -4.3562979903656262, 1e-12);
  EXPECT_EQ(pdf(kShifted, 99.0), 0.0);
  EXPECT_EQ(log_pdf(kShifted, 100.0), -INFINITY);
  EXPECT_EQ(cdf(kShifted, 100.0), 0.0);
  EXPECT_DOUBLE_EQ(mean(kShifted), 160.0);
}

TEST(Distributions, DensitiesIntegrateToOne) {
  EXPECT_NEAR(simpson(kErlang, 0.0, 2000.0, 20000), 1.0, 1e-8);
  EXPECT_NEAR(simpson(kHyper, 0.0, 4000.0, 40000), 1.0, 1e-8);
  EXPECT_NEAR(simpson(kShifted, 100.0, 2100.0, 20000), 1.0, 1e-8);
}

TEST(Distributions, CdfDerivativeIsPdf) {
  for (const auto& d : {kErlang, kHyper, kShifted}) {
    for (double t : {105.0, 130.0, 180.0, 300.0}) {
      const double h = 1e-3;
      const double deriv = (cdf(d, t + h) - cdf(d, t - h)) / (2 * h);
      EXPECT_NEAR(deriv, pdf(d, t), 1e-8) << describe(d) << " at " << t;
    }
  }
}

TEST(Distributions, SamplersPassKolmogorovSmirnov) {
  constexpr std::size_t n = 20000;
  const double critical = 1.63 / std::sqrt(static_cast<double>(n)); // 1% level
  std::uint64_t seed = 11;
  for (const auto& d : {kErlang, kHyper, kShifted}) {
    EXPECT_LT(ks_statistic(fixtures::draw(d, n, seed++), d), critical) << describe(d);
  }
}

TEST(Distributions, SampleMeanMatchesMean) {
  for (const auto& d : {kErlang, kHyper, kShifted}) {
    const auto x = fixtures::draw(d, 100000, 5);
    double s = 0.0, s2 = 0.0;
    for (double v : x) {
      s += v;
      s2 += v * v;
    }
    const double n = static_cast<double>(x.size());
    const double m = s / n;
    const double se = std::sqrt((s2 / n - m * m) / n);
    EXPECT_LT(std::abs(m - mean(d)), 3.0 * se) << describe(d);
  }
}

TEST(Distributions, InvalidParametersAreRejected) {
  EXPECT_THROW(check_params(ErlangParams{0, 1.0}), std::invalid_argument);
  EXPECT_THROW(check_params(ErlangParams{2, 0.0}), std::invalid_argument);
  EXPECT_THROW(check_params(ErlangPlusCParams{2, 1.0, -1.0}), std::invalid_argument);
  EXPECT_THROW(check_params(HyperErlangParams{{{0.5, 1, 1.0}, {0.4, 2, 1.0}}}), std::invalid_argument);
  EXPECT_THROW(check_params(HyperErlangParams{}), std::invalid_argument);
  EXPECT_NO_THROW(check_params(kHyper));
}

TEST(Distributions, JsonRoundTrip) {
  for (const auto& d : {kErlang, kHyper, kShifted}) {
    const nlohmann::json j = d;
    EXPECT_EQ(j.get<PatchDistribution>(), d);
    EXPECT_EQ(j.at("family").get<std::string>(), family_tag(d));
  }
}

TEST(Distributions, SamplingIsDeterministicPerSeed) {
  EXPECT_EQ(fixtures::draw(kHyper, 100, 3), fixtures::draw(kHyper, 100, 3));
  EXPECT_NE(fixtures::draw(kHyper, 100, 3), fixtures::draw(kHyper, 100, 4));
}
