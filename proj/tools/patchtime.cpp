#include "patchtime/format.hpp"
#include "patchtime/pipeline.hpp"
#include "patchtime/uppaal.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace patchtime;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct SmcFlags {
  double confidence = 0.90;
  double half_width = 0.0005;
  std::uint64_t max_runs = 10'000'000;
  std::uint64_t seed = 0;
  std::uint64_t batch = 1024;
  std::uint64_t runs = 0;
  unsigned workers = 0;

  void attach(CLI::App* app) {
    app->add_option("--confidence", confidence, "Confidence level of intervals")->check(CLI::Range(0.0, 1.0));
    app->add_option("--half-width", half_width, "Target interval half-width for probabilities");
    app->add_option("--max-runs", max_runs, "Upper bound on simulation runs");
    app->add_option("--seed", seed, "Random seed");
    app->add_option("--batch", batch, "Runs per batch");
    app->add_option("--runs", runs, "Run exactly this many simulations (no width-based stopping)");
    app->add_option("--workers", workers, "Simulation threads (0 = all cores)");
  }

  SmcOptions options() const {
    SmcOptions o;
    o.confidence = confidence;
    o.half_width = half_width;
    o.max_runs = max_runs;
    o.seed = seed;
    o.batch = batch;
    o.workers = workers;
    if (runs > 0) o.fixed_runs = runs;
    return o;
  }
};

RouteSpec route_or_config_error(const fs::path& p) {
  try {
    return load_route(p);
  } catch (const IngestError& e) {
    throw ConfigError(e.what());
  }
}

Pta load_model(const fs::path& p) {
  const auto text = read_file(p);
  Pta pta;
  try {
    pta = json::parse(text).get<Pta>();
  } catch (const std::exception& e) {
    throw ConfigError("invalid model file " + p.string() + ": " + e.what());
  }
  if (const auto v = validate(pta); !v.empty()) {
    std::string msg = "invalid model file " + p.string() + ":";
    for (const auto& s : v) msg += "\n  " + s;
    throw ConfigError(msg);
  }
  return pta;
}

TimeWindow parse_window(const std::string& text) {
  if (text.empty()) return whole_day_window();
  const auto parts = split(text, '-');
  if (parts.size() != 2) throw ConfigError("window must look like HH:MM:SS-HH:MM:SS, got '" + text + "'");
  const auto a = parse_timestamp(parts[0]);
  const auto b = parse_timestamp(parts[1]);
  if (!a || !b || !(*b > *a)) throw ConfigError("invalid window '" + text + "'");
  return {*a, *b, "window"};
}

std::vector<Family> parse_families(const std::vector<std::string>& names, const std::string& model_family) {
  std::vector<Family> out;
  try {
    for (const auto& n : names) out.push_back(family_from_string(n));
    if (!model_family.empty()) {
      const auto mf = family_from_string(model_family);
      if (std::find(out.begin(), out.end(), mf) == out.end()) out.push_back(mf);
    }
  } catch (const FitError& e) {
    throw ConfigError(e.what());
  }
  return out;
}

Scenario parse_scenario(const std::string& s) {
  try {
    return scenario_from_string(s);
  } catch (const IngestError& e) {
    throw ConfigError(e.what());
  }
}

std::vector<Query> parse_queries(const std::vector<std::string>& texts) {
  std::vector<Query> out;
  for (const auto& t : texts) {
    try {
      out.push_back(parse_query(t));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  return out;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patch travel-time fitting, route automata and on-time analysis"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic AVL trace for a route");
  std::string synth_route, synth_out, synth_truth;
  SyntheticOptions synth_opts;
  synth_opts.n_journeys = 300;
  synth->add_option("--route", synth_route, "Route file")->required();
  synth->add_option("--out", synth_out, "Output AVL CSV")->required();
  synth->add_option("--truth", synth_truth, "JSON array of per-patch distributions (default: built-in)");
  synth->add_option("--journeys", synth_opts.n_journeys, "Number of journeys");
  synth->add_option("--seed", synth_opts.seed, "Random seed");
  synth->add_option("--fix-interval", synth_opts.fix_interval, "Seconds between fixes");
  synth->add_option("--headway", synth_opts.headway, "Seconds between departures");
  synth->add_option("--speed-noise", synth_opts.speed_noise_mph, "Speed noise standard deviation (mph)");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Extract and clean patch crossing samples");
  std::string ing_route, ing_out, ing_window;
  std::vector<std::string> ing_avl, ing_scenarios{"baseline", "speed_limited"};
  CleaningOptions ing_clean;
  double ing_snap = kDefaultSnapRadius, ing_gap = kDefaultGapThreshold;
  ingest->add_option("--route", ing_route, "Route file")->required();
  ingest->add_option("--avl", ing_avl, "AVL CSV file(s)")->required();
  ingest->add_option("--out", ing_out, "Output crossings CSV")->required();
  ingest->add_option("--window", ing_window, "Time window HH:MM:SS-HH:MM:SS");
  ingest->add_option("--scenario", ing_scenarios, "Scenarios to emit");
  ingest->add_option("--floor", ing_clean.floor_seconds, "Minimum plausible crossing time (s)");
  ingest->add_option("--sd-multiplier", ing_clean.sd_multiplier, "Outlier threshold in standard deviations");
  ingest->add_option("--snap-radius", ing_snap, "Maximum distance from the route (m)");
  ingest->add_option("--gap", ing_gap, "Connection-loss gap threshold (s)");

  // fit
  auto* fit = app.add_subcommand("fit", "Fit distribution families to crossing samples");
  std::string fit_samples, fit_out, fit_scenario = "baseline", fit_model_family = "hyper_erlang_2";
  std::vector<std::string> fit_families{"erlang", "hyper_erlang_2", "hyper_erlang_3", "erlang_plus_c"};
  fit->add_option("--samples", fit_samples, "Crossings CSV")->required();
  fit->add_option("--out", fit_out, "Output prefix; writes <prefix>.csv and <prefix>.json")->required();
  fit->add_option("--scenario", fit_scenario, "Scenario to fit");
  fit->add_option("--families", fit_families, "Families to tabulate");
  fit->add_option("--model-family", fit_model_family, "Family later used for the route model");

  // build-pta
  auto* build = app.add_subcommand("build-pta", "Build the route automaton from a fit table");
  std::string build_fits, build_out, build_family = "hyper_erlang_2";
  build->add_option("--fits", build_fits, "Fit table JSON")->required();
  build->add_option("--out", build_out, "Output model JSON")->required();
  build->add_option("--family", build_family, "Family column to use");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Estimate query values by simulation");
  std::string sim_model, sim_hist_out;
  std::vector<std::string> sim_queries;
  double sim_bin = 30.0;
  SmcFlags sim_flags;
  simulate->add_option("--model", sim_model, "Model JSON")->required();
  simulate->add_option("--query", sim_queries, "prob<=D, prob>D, mean or hist")->required();
  simulate->add_option("--bin-width", sim_bin, "Histogram bin width (s)");
  simulate->add_option("--hist-out", sim_hist_out, "Histogram CSV path (default: stdout)");
  sim_flags.attach(simulate);

  // export-uppaal
  auto* exp = app.add_subcommand("export-uppaal", "Write the model as UPPAAL .xml and .q files");
  std::string exp_model, exp_out;
  std::vector<std::string> exp_queries;
  double exp_timetable = 0.0, exp_early = 60.0, exp_late = 300.0;
  exp->add_option("--model", exp_model, "Model JSON")->required();
  exp->add_option("--out", exp_out, "Output prefix; writes <prefix>.xml and <prefix>.q")->required();
  exp->add_option("--query", exp_queries, "Additional queries (prob<=D or prob>D)");
  exp->add_option("--timetable", exp_timetable, "Timetabled duration (s); adds on-time queries");
  exp->add_option("--early-margin", exp_early, "Early margin (s)");
  exp->add_option("--late-margin", exp_late, "Late margin (s)");

  // report
  auto* report = app.add_subcommand("report", "Journey-time and on-time reports for built models");
  std::string rep_baseline, rep_limited, rep_out, rep_window = "all_day";
  double rep_timetable = 0.0;
  AnalysisOptions rep_analysis;
  SmcFlags rep_flags;
  report->add_option("--baseline", rep_baseline, "Baseline model JSON");
  report->add_option("--speed-limited", rep_limited, "Speed-limited model JSON");
  report->add_option("--timetable", rep_timetable, "Timetabled duration (s)")->required();
  report->add_option("--out", rep_out, "Output directory");
  report->add_option("--window", rep_window, "Window label used in file names");
  report->add_option("--early-margin", rep_analysis.early_margin, "Early margin (s)");
  report->add_option("--late-margin", rep_analysis.late_margin, "Late margin (s)");
  report->add_option("--hist-runs", rep_analysis.histogram_runs, "Runs for the journey histogram");
  report->add_option("--bin-width", rep_analysis.histogram_bin_width, "Histogram bin width (s)");
  rep_flags.attach(report);

  // run
  auto* run = app.add_subcommand("run", "Run the full pipeline from a config file");
  std::string run_config, run_out;
  std::vector<std::string> run_scenarios;
  std::optional<std::uint64_t> run_seed;
  std::optional<unsigned> run_workers;
  run->add_option("--config", run_config, "Pipeline config JSON")->required();
  run->add_option("--out", run_out, "Output directory (overrides config and $" + std::string(kOutDirEnv) + ")");
  run->add_option("--scenario", run_scenarios, "Scenarios to run (overrides config)");
  run->add_option("--seed", run_seed, "Random seed (overrides config)");
  run->add_option("--workers", run_workers, "Simulation threads (overrides config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*synth) {
      const auto route = route_or_config_error(synth_route);
      std::vector<PatchDistribution> truth;
      if (synth_truth.empty()) {
        truth = default_truth(route);
      } else {
        try {
          truth = json::parse(read_file(synth_truth)).get<std::vector<PatchDistribution>>();
        } catch (const json::exception& e) {
          throw ConfigError("invalid truth file " + synth_truth + ": " + e.what());
        }
      }
      std::vector<AvlFix> fixes;
      try {
        fixes = generate_synthetic_trace(route, truth, synth_opts);
      } catch (const IngestError& e) {
        throw ConfigError(e.what());
      }
      std::ostringstream os;
      write_avl_csv(os, fixes);
      write_file(synth_out, os.str());
      std::cerr << "wrote " << fixes.size() << " fixes for " << synth_opts.n_journeys << " journeys to " << synth_out
                << "\n";
    } else if (*ingest) {
      const auto route = route_or_config_error(ing_route);
      std::vector<fs::path> paths(ing_avl.begin(), ing_avl.end());
      std::size_t skipped = 0;
      const auto fixes = read_avl_files(paths, route.route_id, &skipped);
      std::vector<Scenario> scenarios;
      for (const auto& s : ing_scenarios) scenarios.push_back(parse_scenario(s));
      const auto out = ingest_stage(route, fixes, parse_window(ing_window), scenarios, ing_clean, ing_snap, ing_gap);
      std::ostringstream os;
      write_crossings_csv(os, out.samples);
      write_file(ing_out, os.str());
      const auto& st = out.summary;
      std::cerr << "fixes " << st.fixes << " (skipped rows " << skipped << ", unassigned " << st.unassigned_fixes
                << "), crossings " << st.extraction.kept << ", partial " << st.extraction.partial << ", gaps "
                << st.extraction.gap << ", regressions " << st.extraction.regression << ", outliers discarded "
                << st.discarded << (st.small_group_warning ? ", warning: group with fewer than two samples" : "")
                << "\n";
    } else if (*fit) {
      std::ifstream in(fit_samples);
      if (!in) throw ConfigError("cannot read " + fit_samples);
      std::vector<CrossingSample> samples;
      try {
        samples = read_crossings_csv(in);
      } catch (const IngestError& e) {
        throw ConfigError("invalid crossings file " + fit_samples + ": " + e.what());
      }
      const auto families = parse_families(fit_families, fit_model_family);
      const auto table = fit_stage(samples, parse_scenario(fit_scenario), families, FitOptions{});
      std::ostringstream csv;
      write_model_selection_csv(csv, table);
      write_file(fit_out + ".csv", csv.str());
      write_file(fit_out + ".json", model_selection_to_json(table).dump(2) + "\n");
      std::cout << csv.str();
    } else if (*build) {
      ModelSelectionTable table;
      try {
        table = model_selection_from_json(json::parse(read_file(build_fits)));
      } catch (const std::exception& e) {
        if (dynamic_cast<const ConfigError*>(&e)) throw;
        throw ConfigError("invalid fit table " + build_fits + ": " + e.what());
      }
      Family family;
      try {
        family = family_from_string(build_family);
      } catch (const FitError& e) {
        throw ConfigError(e.what());
      }
      const auto pta = build_stage(table, family);
      write_file(build_out, json(pta).dump(2) + "\n");
      const auto mean = analytic_mean_time(pta);
      std::cerr << "model with " << pta.locations.size() << " locations, " << pta.edges.size() << " edges";
      if (mean) std::cerr << ", analytic mean " << format_decimals(*mean, 2) << " s";
      std::cerr << "\n";
    } else if (*simulate) {
      const auto pta = load_model(sim_model);
      const auto opts = sim_flags.options();
      for (const auto& q : parse_queries(sim_queries)) {
        switch (q.kind) {
        case QueryKind::prob_reach_by_deadline:
          std::cout << estimate_line(q, estimate_probability(pta, q, opts)) << "\n";
          break;
        case QueryKind::mean_time_to_end:
          std::cout << estimate_line(q, estimate_mean(pta, opts)) << "\n";
          break;
        case QueryKind::histogram: {
          const std::uint64_t n = opts.fixed_runs.value_or(100'000);
          const auto csv = histogram_csv(journey_histogram(pta, n, sim_bin, opts));
          if (sim_hist_out.empty())
            std::cout << csv;
          else
            write_file(sim_hist_out, csv);
          break;
        }
        }
      }
    } else if (*exp) {
      const auto pta = load_model(exp_model);
      std::vector<Query> queries;
      if (exp_timetable > 0.0) {
        if (exp_early >= exp_timetable || exp_late >= exp_timetable)
          throw ConfigError("margins must be smaller than the timetabled duration");
        queries.push_back(Query::reach_by(exp_timetable - exp_early));
        queries.push_back(Query::later_than(exp_timetable + exp_late));
      }
      for (const auto& q : parse_queries(exp_queries)) {
        if (q.kind != QueryKind::prob_reach_by_deadline)
          throw ConfigError("only probability queries can be exported");
        queries.push_back(q);
      }
      write_file(exp_out + ".xml", export_xml(pta, queries));
      write_file(exp_out + ".q", export_queries(queries));
      std::cout << export_queries(queries);
    } else if (*report) {
      if (rep_baseline.empty() && rep_limited.empty()) throw ConfigError("report needs --baseline and/or --speed-limited");
      const fs::path out_dir = rep_out.empty() ? fs::path(std::getenv(kOutDirEnv) ? std::getenv(kOutDirEnv) : ".")
                                               : fs::path(rep_out);
      fs::create_directories(out_dir);
      const auto opts = rep_flags.options();
      std::string hashed;
      JourneyRow row{rep_window, rep_timetable, {}};
      for (const auto& [path, scenario] :
           {std::pair{rep_baseline, Scenario::baseline}, std::pair{rep_limited, Scenario::speed_limited}}) {
        if (path.empty()) continue;
        hashed += read_file(path);
        auto a = analyse_model(load_model(path), scenario, rep_timetable, rep_analysis, opts);
        write_file(out_dir / ("histogram_" + rep_window + "_" + to_string(scenario) + ".csv"), histogram_csv(a.histogram));
        row.analyses.push_back(std::move(a));
      }
      const ReportStamp stamp{opts.seed, fnv1a_hex(hashed)};
      const std::vector<JourneyRow> rows{row};
      const auto means = journey_means_csv(rows, stamp);
      write_file(out_dir / "journey_means.csv", means);
      write_file(out_dir / "on_time.csv", on_time_csv(rows, stamp));
      std::cout << means;
    } else if (*run) {
      auto cfg = load_config(run_config);
      if (!run_out.empty())
        cfg.out_dir = run_out;
      else if (cfg.out_dir.empty())
        cfg.out_dir = std::getenv(kOutDirEnv) ? std::getenv(kOutDirEnv) : "patchtime_out";
      if (!run_scenarios.empty()) {
        cfg.scenarios.clear();
        for (const auto& s : run_scenarios) cfg.scenarios.push_back(parse_scenario(s));
      }
      if (run_seed) cfg.smc.seed = *run_seed;
      if (run_workers) cfg.smc.workers = *run_workers;
      const auto result = run_pipeline(cfg);
      if (result.exit_code != kExitOk) {
        std::cerr << "error: " << result.error << "\n";
        return result.exit_code;
      }
      std::cerr << "wrote " << result.files.size() << " report files to " << cfg.out_dir.string() << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IngestError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitAnalysis;
  }
  return kExitOk;
}
