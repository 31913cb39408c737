#include "patchtime/fitting.hpp"
#include "patchtime/format.hpp"
#include "patchtime/ingest.hpp"
#include "patchtime/pipeline.hpp"
#include "patchtime/pta.hpp"
#include "patchtime/smc.hpp"
#include "patchtime/uppaal.hpp"

#include "test_support.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>

using namespace patchtime;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = PATCHTIME_SOURCE_DIR;
const fs::path kGolden = kSource / "tests" / "golden";

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;
  std::function<Outcome()> check;
};

std::string fmt(double v, int d = 4) { return format_decimals(v, d); }

// ------------------------------------------------------------ fixtures

const std::vector<Query> kOnTimeQueries{Query::reach_by(1620.0), Query::later_than(1980.0)};

Pta reference_hyper_erlang() {
  return build_pta(std::vector<PatchDistribution>{HyperErlangParams{{{0.4938, 2, 0.02}, {0.5062, 3, 0.04}}},
                                                  HyperErlangParams{{{0.3, 1, 0.05}, {0.7, 2, 0.025}}}});
}

Pta reference_erlang_plus_c() {
  return build_pta(
      std::vector<PatchDistribution>{ErlangPlusCParams{3, 0.05, 100.0}, ErlangPlusCParams{2, 0.04, 62.5}});
}

std::vector<PatchDistribution> mixed_patches() {
  std::vector<PatchDistribution> d;
  for (int p = 0; p < 10; ++p) {
    if (p % 3 == 0)
      d.push_back(HyperErlangParams{{{0.4938, 2 + p % 2, 0.02 + 0.001 * p}, {0.5062, 3, 0.04}}});
    else if (p % 3 == 1)
      d.push_back(ErlangPlusCParams{1 + p % 4, 0.05, 60.0 + p});
    else
      d.push_back(ErlangParams{4, 0.1 / 3.0});
  }
  return d;
}

// Route with alternating limit-affected patches and synthetic crossings.
struct SyntheticRoute {
  RouteSpec route;
  IngestOutput ingested;
  std::size_t fast_fixes_in_affected = 0;
};

SyntheticRoute synthetic_route(std::uint64_t seed) {
  SyntheticRoute s;
  s.route = fixtures::straight_route({900, 1300, 1100, 1600, 1000, 1200}, {true, false, true, true, false, true}, 1500);
  SyntheticOptions o;
  o.n_journeys = 300;
  o.seed = seed;
  o.headway = 120.0;
  const auto fixes = generate_synthetic_trace(s.route, default_truth(s.route), o);
  for (const auto& a : assign_patches(fixes, s.route))
    if (a.patch && s.route.patches[*a.patch].limit_affected && a.fix.speed_mph > kSpeedLimitMph)
      ++s.fast_fixes_in_affected;
  const std::vector<Scenario> both{Scenario::baseline, Scenario::speed_limited};
  s.ingested = ingest_stage(s.route, fixes, fixtures::whole_window(), both);
  return s;
}

Pta route_model(const IngestOutput& in, Scenario scenario, Family family) {
  const std::vector<Family> families{family};
  return build_stage(fit_stage(in.samples, scenario, families, {}), family);
}

// ------------------------------------------------------------ criteria

Outcome integer_weights() {
  const std::vector<double> alphas{0.4938, 0.5062};
  const auto w = alpha_to_integer_weights(alphas);
  const bool ok = w == std::vector<std::int64_t>{2469, 2531};
  return {ok, "weights " + std::to_string(w.at(0)) + ":" + std::to_string(w.at(1))};
}

Outcome speed_limit_transform() {
  Rng rng(2024);
  std::size_t mismatches = 0;
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> speeds(rng.uniform_index(40));
    for (auto& s : speeds) s = 45.0 * rng.uniform();
    const double base = 30.0 + 600.0 * rng.uniform();
    double oracle = base;
    for (double s : speeds) oracle += s > 20.0 ? (s - 20.0) / 20.0 * 5.0 : 0.0;
    const double got = apply_speed_limit(speeds, base);
    const double err = std::abs(got - oracle);
    worst = std::max(worst, err / oracle);
    if (err > 4.0 * std::numeric_limits<double>::epsilon() * oracle) ++mismatches;
  }
  // Non-affected patches keep their duration.
  const auto route = fixtures::straight_route({1000}, {false});
  const std::vector<Crossing> c{{{1, 123.0, "v", 0.0, Scenario::baseline}, {35.0, 40.0}}};
  const bool identity = speed_limited_samples(c, route).at(0).duration == 123.0;
  return {mismatches == 0 && identity,
          std::to_string(mismatches) + " mismatches, worst relative error " + format_double(worst)};
}

Outcome outlier_cleaning() {
  // 724 ordinary crossings, 8 below the floor and 10 far above the threshold.
  std::vector<CrossingSample> s;
  for (int i = 0; i < 724; ++i) s.push_back({1, 120.0 + (i % 61), "v" + std::to_string(i), 0.0, Scenario::baseline});
  for (int i = 0; i < 8; ++i) s.push_back({1, 5.0 + 3.0 * i, "fast" + std::to_string(i), 0.0, Scenario::baseline});
  for (int i = 0; i < 10; ++i) s.push_back({1, 3000.0 + 50.0 * i, "slow" + std::to_string(i), 0.0, Scenario::baseline});

  // Independent count of violators from the uncleaned statistics.
  std::vector<double> x;
  for (const auto& c : s) x.push_back(c.duration);
  std::vector<double> sorted = x;
  std::sort(sorted.begin(), sorted.end());
  const double median = 0.5 * (sorted[370] + sorted[371]);
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  const double upper = median + 3.0 * std::sqrt(ss / static_cast<double>(x.size() - 1));
  const auto violators = std::count_if(x.begin(), x.end(), [&](double v) { return v < 30.0 || v > upper; });

  const auto r = clean_outliers(s);
  return {s.size() == 742 && violators == 18 && r.kept.size() == 724 && r.discarded.size() == 18,
          "742 samples, " + std::to_string(violators) + " violators, kept " + std::to_string(r.kept.size())};
}

long double ll_oracle(const std::vector<double>& x, int k, long double lambda, long double c) {
  long double s = 0.0L;
  for (double v : x)
    s += k * std::log(lambda) + (k - 1) * std::log(static_cast<long double>(v) - c) -
         lambda * (static_cast<long double>(v) - c) - std::lgamma(static_cast<long double>(k));
  return s;
}

Outcome erlang_plus_c_gradient_check() {
  const auto x = fixtures::draw(ErlangPlusCParams{3, 0.05, 100.0}, 500, 17);
  const double lo = *std::min_element(x.begin(), x.end());
  Rng rng(99);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int k = 1 + static_cast<int>(rng.uniform_index(8));
    const long double lambda = 0.005L + 0.3L * rng.uniform();
    const long double c = 0.95L * lo * rng.uniform();
    const auto g = erlang_plus_c_gradient(x, k, static_cast<double>(lambda), static_cast<double>(c));
    const long double hl = 1e-7L * lambda, hc = 1e-7L * lo;
    const long double dl = (ll_oracle(x, k, lambda + hl, c) - ll_oracle(x, k, lambda - hl, c)) / (2 * hl);
    const long double dc = (ll_oracle(x, k, lambda, c + hc) - ll_oracle(x, k, lambda, c - hc)) / (2 * hc);
    worst = std::max(worst, static_cast<double>(std::abs((g[0] - dl) / dl)));
    worst = std::max(worst, static_cast<double>(std::abs((g[1] - dc) / dc)));
  }
  return {worst <= 1e-5, "worst relative error " + format_double(worst) + " over 100 points"};
}

Outcome erlang_plus_c_recovery() {
  int correct_k = 0;
  int within = 0;
  std::string ks;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto x = fixtures::draw(ErlangPlusCParams{3, 0.05, 100.0}, 500, seed);
    const auto p = std::get<ErlangPlusCParams>(fit_erlang_plus_c(x).dist);
    ks += std::to_string(p.k);
    if (p.k != 3) continue;
    ++correct_k;
    if (std::abs(p.lambda - 0.05) <= 0.15 * 0.05 && std::abs(p.c - 100.0) <= 0.05 * 100.0) ++within;
  }
  return {correct_k >= 18 && within == correct_k,
          "k=3 in " + std::to_string(correct_k) + "/20 seeds (fitted k: " + ks + "), " + std::to_string(within) +
              " of those within tolerance"};
}

Outcome em_monotonicity() {
  double worst_drop = 0.0;
  std::size_t iterations = 0;
  for (std::uint64_t v = 0; v < 10; ++v) {
    const auto x = fixtures::draw(fixtures::bimodal_truth(v), 500, 100 + v);
    for (int m : {2, 3}) {
      std::vector<double> trace;
      em_hyper_erlang(x, hyper_erlang_initial(x, m), {}, &trace);
      iterations += trace.size() - 1;
      for (std::size_t i = 1; i < trace.size(); ++i) worst_drop = std::max(worst_drop, trace[i - 1] - trace[i]);
    }
  }
  return {worst_drop <= 1e-9, std::to_string(iterations) + " EM iterations, largest decrease " +
                                  format_double(worst_drop)};
}

Outcome model_nesting() {
  std::vector<std::vector<double>> fixtures;
  for (std::uint64_t v = 0; v < 10; ++v) fixtures.push_back(fixtures::draw(fixtures::bimodal_truth(v), 500, 100 + v));
  fixtures.push_back(fixtures::draw(ErlangParams{6, 0.05}, 400, 1));
  fixtures.push_back(fixtures::draw(ErlangPlusCParams{3, 0.05, 100.0}, 400, 2));
  fixtures.push_back(fixtures::draw(ErlangPlusCParams{1, 0.02, 40.0}, 400, 3));
  int violations = 0;
  std::string first;
  for (std::size_t i = 0; i < fixtures.size(); ++i) {
    const auto& x = fixtures[i];
    const double he1 = fit_hyper_erlang(x, 1).log_likelihood;
    const double he2 = fit_hyper_erlang(x, 2).log_likelihood;
    const double he3 = fit_hyper_erlang(x, 3).log_likelihood;
    const double er = fit_erlang(x).log_likelihood;
    const double ec = fit_erlang_plus_c(x).log_likelihood;
    const bool ok = he3 >= he2 - 0.5 && he2 >= he1 - 0.5 && ec >= er - 1e-6;
    if (!ok && first.empty())
      first = "; fixture " + std::to_string(i) + ": HE1 " + fmt(he1) + " HE2 " + fmt(he2) + " HE3 " + fmt(he3) +
              " Erlang " + fmt(er) + " Erlang+c " + fmt(ec);
    violations += !ok;
  }
  return {violations == 0,
          std::to_string(fixtures.size()) + " fixtures, " + std::to_string(violations) + " ordering violations" + first};
}

Outcome smc_coverage() {
  constexpr double kTruth = 0.70111367532794168; // Exp(1) + Erlang(5, 0.1) <= 60 by quadrature
  const auto pta = build_pta(std::vector<PatchDistribution>{ErlangParams{5, 0.1}});
  int covered = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    SmcOptions o;
    o.seed = 1000 + seed;
    o.fixed_runs = 4096;
    const auto e = estimate_probability(pta, Query::reach_by(60.0), o);
    covered += e.ci_low <= kTruth && kTruth <= e.ci_high;
  }
  return {covered >= 174, std::to_string(covered) + "/200 intervals contain the truth"};
}

Outcome mean_additivity() {
  const auto patches = mixed_patches();
  double truth = 1.0;
  for (const auto& d : patches) truth += mean(d);
  const auto e = estimate_mean(build_pta(patches), SmcOptions{});
  return {e.ci_low <= truth && truth <= e.ci_high,
          "closed form " + fmt(truth, 3) + ", estimate " + fmt(e.point, 3) + " in [" + fmt(e.ci_low, 3) + ", " +
              fmt(e.ci_high, 3) + "] from " + std::to_string(e.runs) + " runs"};
}

Outcome tail_ordering() {
  int heavier = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto s = synthetic_route(seed);
    SmcOptions o;
    o.seed = seed;
    const auto he = simulate_times(CompiledPta(route_model(s.ingested, Scenario::baseline, Family::hyper_erlang_2)),
                                   200000, o);
    const auto ec = simulate_times(CompiledPta(route_model(s.ingested, Scenario::baseline, Family::erlang_plus_c)),
                                   200000, o);
    const double qhe = fixtures::quantile(he, 0.995), qec = fixtures::quantile(ec, 0.995);
    heavier += qhe > qec;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + ": HE " + fmt(qhe, 1) +
              " vs Erlang+c " + fmt(qec, 1);
  }
  return {heavier == 3, "99.5th percentiles " + detail};
}

Outcome scenario_sign() {
  const auto s = synthetic_route(7);
  SmcOptions o;
  o.seed = 7;
  JourneyRow row{"all_day", static_cast<double>(s.route.timetable_duration), {}};
  for (Scenario sc : {Scenario::baseline, Scenario::speed_limited}) {
    ScenarioAnalysis a;
    a.scenario = sc;
    a.mean = estimate_mean(route_model(s.ingested, sc, Family::hyper_erlang_2), o);
    row.analyses.push_back(a);
  }
  const std::vector<JourneyRow> rows{row};
  const auto csv = journey_means_csv(rows, {7, "0"});
  std::istringstream in(csv);
  std::string header, line;
  std::getline(in, header);
  std::getline(in, line);
  const auto h = split(header, ','), v = split(line, ',');
  const auto col = static_cast<std::size_t>(std::find(h.begin(), h.end(), "difference_s") - h.begin());
  const double diff = col < v.size() ? std::stod(v[col]) : -1.0;
  const double base = row.analyses[0].mean.point, lim = row.analyses[1].mean.point;
  return {s.fast_fixes_in_affected > 0 && lim > base && diff > 0.0,
          std::to_string(s.fast_fixes_in_affected) + " fixes above 20 mph in affected patches; baseline " +
              fmt(base, 2) + " s, speed-limited " + fmt(lim, 2) + " s, Difference " + fmt(diff, 2)};
}

Outcome uppaal_goldens() {
  bool ok = true;
  std::string detail;
  for (const auto& [name, pta] : {std::pair{"two_patch_hyper_erlang.xml", reference_hyper_erlang()},
                                  std::pair{"two_patch_erlang_plus_c.xml", reference_erlang_plus_c()}}) {
    const auto xml = export_xml(pta, kOnTimeQueries);
    const bool same = fs::exists(kGolden / name) && read_file(kGolden / name) == xml;
    bool round_trip = false;
    try {
      round_trip = import_xml(xml) == pta;
    } catch (const std::exception&) {
    }
    ok = ok && same && round_trip;
    detail += std::string(detail.empty() ? "" : "; ") + name + (same ? " matches" : " differs") +
              (round_trip ? ", round-trips" : ", round-trip failed");
  }
  return {ok, detail};
}

Outcome query_rendering() {
  const auto pta = build_pta(std::vector<PatchDistribution>{ErlangParams{20, 20.0 / 1500.0}});
  SmcOptions o;
  o.fixed_runs = 1024;
  const auto report = on_time_report(pta, 1680.0, 60.0, 300.0, o);
  const auto formula = query_formula(Query::reach_by(report.early_deadline));
  return {formula == "Pr[<=1620] (<> Process.end)" && report.late_deadline == 1980.0, formula};
}

Outcome end_to_end_determinism() {
  const auto dir = fixtures::temp_dir("acceptance_e2e");
  const auto route_path = kSource / "configs" / "route_100.json";
  const auto route = load_route(route_path);
  SyntheticOptions so;
  so.n_journeys = 300;
  so.seed = 11;
  so.headway = 120.0;
  std::ostringstream trace;
  write_avl_csv(trace, generate_synthetic_trace(route, default_truth(route), so));
  write_file(dir / "trace.csv", trace.str());

  auto cfg = config_from_json({{"route", route_path.string()}, {"avl", {(dir / "trace.csv").string()}}}, dir);
  cfg.smc.seed = 5;
  std::vector<std::string> names[2];
  for (int i = 0; i < 2; ++i) {
    cfg.out_dir = dir / ("run" + std::to_string(i));
    const auto r = run_pipeline(cfg);
    if (r.exit_code != 0) return {false, "pipeline failed: " + r.error};
    names[i] = r.files;
    names[i].push_back("MANIFEST");
  }
  if (names[0] != names[1]) return {false, "different report file sets"};
  std::size_t differing = 0;
  for (const auto& f : names[0]) differing += read_file(dir / "run0" / f) != read_file(dir / "run1" / f);
  std::size_t on_disk = 0;
  for (const auto& e : fs::directory_iterator(dir / "run1")) on_disk += e.is_regular_file();
  return {differing == 0 && on_disk == names[1].size(),
          std::to_string(names[0].size()) + " files compared, " + std::to_string(differing) + " differ"};
}

void write_goldens(const fs::path& dir) {
  fs::create_directories(dir);
  write_file(dir / "two_patch_hyper_erlang.xml", export_xml(reference_hyper_erlang(), kOnTimeQueries));
  write_file(dir / "two_patch_erlang_plus_c.xml", export_xml(reference_erlang_plus_c(), kOnTimeQueries));
  const auto sim = build_pta(std::vector<PatchDistribution>{HyperErlangParams{{{0.4938, 8, 0.01}, {0.5062, 6, 0.005}}},
                                                            ErlangPlusCParams{3, 0.02, 300.0}});
  write_file(dir / "simulate_model.json", nlohmann::json(sim).dump(2) + "\n");
}

} // namespace

int main(int argc, char** argv) {
  if (argc == 3 && std::strcmp(argv[1], "--write-goldens") == 0) {
    write_goldens(argv[2]);
    return 0;
  }

  const std::vector<Criterion> criteria{
      {1, "integer weight conversion (0.4938, 0.5062) -> (2469, 2531)", 0.001, integer_weights},
      {2, "speed-limit transform against one-line oracle, 10^4 cases", 1.0, speed_limit_transform},
      {3, "outlier cleaning keeps 724 of 742", 1.0, outlier_cleaning},
      {4, "Erlang+c gradient against central differences", 1.0, erlang_plus_c_gradient_check},
      {5, "Erlang+c synthetic recovery over 20 seeds", 30.0, erlang_plus_c_recovery},
      {6, "hyper-Erlang EM log-likelihood is nondecreasing", 30.0, em_monotonicity},
      {7, "model nesting of log-likelihoods", 60.0, model_nesting},
      {8, "SMC 90% interval coverage over 200 seeds", 120.0, smc_coverage},
      {9, "simulated mean journey time covers closed-form mean", 30.0, mean_additivity},
      {10, "hyper-Erlang model has the heavier right tail", 120.0, tail_ordering},
      {11, "speed-limited mean exceeds baseline mean", 120.0, scenario_sign},
      {12, "UPPAAL XML golden files and import round-trip", 1.0, uppaal_goldens},
      {13, "query rendering for timetable 1680 s, early margin 60 s", 1.0, query_rendering},
      {14, "pipeline reports are byte-identical across runs", 180.0, end_to_end_determinism},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.limit_seconds;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << "  AC" << (c.id < 10 ? "0" : "") << c.id << "  " << c.name << "  ["
              << format_decimals(secs, 3) << " s, limit " << format_double(c.limit_seconds) << " s] " << o.detail
              << (in_time ? "" : " (time limit exceeded)") << "\n";
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failures)) << "/" << criteria.size()
            << " acceptance criteria passed\n";
  return failures == 0 ? 0 : 1;
}
