#include "patchtime/uppaal.hpp"

#include <gtest/gtest.h>

#include <regex>

using namespace patchtime;

namespace {

Pta mixed_model() {
  std::vector<PatchDistribution> d;
  for (int p = 0; p < 10; ++p) {
    if (p % 3 == 0)
      d.push_back(HyperErlangParams{{{0.4938, 2 + p % 2, 0.02 + 0.001 * p}, {0.5062, 3, 0.04}}});
    else if (p % 3 == 1)
      d.push_back(ErlangPlusCParams{1 + p % 4, 0.05, 60.0 + p + 0.125});
    else
      d.push_back(ErlangParams{4, 0.1 / 3.0});
  }
  return build_pta(d);
}

const std::vector<Query> kQueries{Query::reach_by(1620.0), Query::later_than(1980.0)};

} // namespace

TEST(UppaalExport, RoundTripsMixedModel) {
  const auto pta = mixed_model();
  const auto xml = export_xml(pta, kQueries);
  EXPECT_EQ(import_xml(xml), pta);
}

TEST(UppaalExport, DeterministicBytes) {
  EXPECT_EQ(export_xml(mixed_model(), kQueries), export_xml(mixed_model(), kQueries));
}

TEST(UppaalExport, ContainsExpectedElements) {
  const auto xml = export_xml(mixed_model(), kQueries);
  EXPECT_NE(xml.find("<branchpoint id=\"p0_bp\""), std::string::npos);
  EXPECT_NE(xml.find("<label kind=\"exponentialrate\""), std::string::npos);
  EXPECT_NE(xml.find("<label kind=\"probability\""), std::string::npos);
  EXPECT_NE(xml.find("x1 &gt;= 61.125"), std::string::npos);
  EXPECT_NE(xml.find("x1 = 0"), std::string::npos);
  EXPECT_NE(xml.find("Pr[&lt;=1620] (&lt;&gt; Process.end)"), std::string::npos);
  EXPECT_NE(xml.find("<system>system Process;</system>"), std::string::npos);
  EXPECT_NE(xml.find("<location id=\"end\""), std::string::npos);
  EXPECT_NE(xml.find("clock x1, x4, x7;"), std::string::npos);
}

TEST(UppaalExport, QueryFile) {
  EXPECT_EQ(export_queries(kQueries), "Pr[<=1620] (<> Process.end)\nPr[<=1980] (<> Process.end)\n");
}

TEST(UppaalImport, RejectsChannels) {
  auto xml = export_xml(mixed_model(), kQueries);
  xml = std::regex_replace(xml, std::regex("<declaration>clock"), "<declaration>chan go; clock");
  try {
    import_xml(xml);
    FAIL() << "expected UppaalImportError";
  } catch (const UppaalImportError& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos);
  }
}

TEST(UppaalImport, RejectsOtherUnsupportedFeatures) {
  const auto xml = export_xml(mixed_model(), kQueries);
  const auto with_invariant = std::regex_replace(
      xml, std::regex("(<location id=\"end\"[^>]*>)"), "$1<label kind=\"invariant\">x1 &lt;= 5</label>");
  EXPECT_THROW(import_xml(with_invariant), UppaalImportError);
  const auto with_sync = std::regex_replace(xml, std::regex("<target ref=\"end\"/>"),
                                            "<target ref=\"end\"/><label kind=\"synchronisation\">go!</label>");
  EXPECT_THROW(import_xml(with_sync), UppaalImportError);
  const auto committed = std::regex_replace(xml, std::regex("(<location id=\"end\"[^>]*>)"), "$1<committed/>");
  EXPECT_THROW(import_xml(committed), UppaalImportError);
}

TEST(UppaalImport, ZeroWeightViolatesInvariants) {
  auto xml = export_xml(mixed_model(), kQueries);
  xml = std::regex_replace(xml, std::regex(">2469<"), ">0<", std::regex_constants::format_first_only);
  try {
    import_xml(xml);
    FAIL() << "expected UppaalImportError";
  } catch (const UppaalImportError& e) {
    EXPECT_NE(std::string(e.what()).find("weight"), std::string::npos);
  }
}

TEST(UppaalImport, MalformedXml) {
  EXPECT_THROW(import_xml("<nta><template>"), UppaalImportError);
  EXPECT_THROW(import_xml("<other/>"), UppaalImportError);
}
