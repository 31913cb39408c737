#include "patchtime/pipeline.hpp"

#include "patchtime/format.hpp"
#include "patchtime/uppaal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

namespace patchtime {

namespace fs = std::filesystem;
using nlohmann::json;

// ------------------------------------------------------------------ config

TimeWindow whole_day_window() { return {0.0, kOperatingDayStart + 86400.0, "all_day"}; }

namespace {

const std::set<std::string> kConfigKeys{"route",   "avl",      "windows",  "direction",   "families",
                                        "model_family", "fit", "smc",     "cleaning",    "analysis",
                                        "snap_radius",  "gap_threshold",  "out_dir",     "scenarios"};

template <class T>
void read_opt(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

double parse_clock(const json& v, const std::string& what) {
  if (v.is_number()) return v.get<double>();
  const auto t = parse_timestamp(v.get<std::string>());
  if (!t) throw ConfigError(what + ": malformed time '" + v.get<std::string>() + "'");
  return *t;
}

fs::path resolve(const fs::path& p, const fs::path& base) { return p.is_absolute() ? p : base / p; }

} // namespace

PipelineConfig config_from_json(const json& j, const fs::path& base_dir) {
  PipelineConfig cfg;
  try {
    check_keys(j, kConfigKeys, "config");
    if (!j.contains("route")) throw ConfigError("config: missing 'route'");
    cfg.route = resolve(j.at("route").get<std::string>(), base_dir);
    if (!j.contains("avl")) throw ConfigError("config: missing 'avl'");
    for (const auto& p : j.at("avl")) cfg.avl.push_back(resolve(p.get<std::string>(), base_dir));
    if (cfg.avl.empty()) throw ConfigError("config: 'avl' lists no files");

    if (j.contains("windows")) {
      for (const auto& w : j.at("windows")) {
        check_keys(w, {"label", "start", "end"}, "config.windows");
        TimeWindow tw;
        tw.label = w.at("label").get<std::string>();
        tw.start = parse_clock(w.at("start"), "window " + tw.label);
        tw.end = parse_clock(w.at("end"), "window " + tw.label);
        if (!std::regex_match(tw.label, std::regex(R"([A-Za-z0-9_-]+)")))
          throw ConfigError("window label '" + tw.label + "' must use letters, digits, '_' or '-'");
        if (!(tw.end > tw.start)) throw ConfigError("window " + tw.label + ": end must follow start");
        cfg.windows.push_back(tw);
      }
    }
    if (cfg.windows.empty()) cfg.windows.push_back(whole_day_window());
    std::set<std::string> labels;
    for (const auto& w : cfg.windows)
      if (!labels.insert(w.label).second) throw ConfigError("duplicate window label '" + w.label + "'");

    if (j.contains("direction")) {
      const auto d = j.at("direction").get<std::string>();
      if (d == "forward") cfg.direction = Direction::forward;
      else if (d == "reverse") cfg.direction = Direction::reverse;
      else throw ConfigError("config: direction must be 'forward' or 'reverse'");
    }
    if (j.contains("families")) {
      cfg.families.clear();
      for (const auto& f : j.at("families")) cfg.families.push_back(family_from_string(f.get<std::string>()));
      if (cfg.families.empty()) throw ConfigError("config: 'families' is empty");
    }
    if (j.contains("model_family")) cfg.model_family = family_from_string(j.at("model_family").get<std::string>());
    if (std::find(cfg.families.begin(), cfg.families.end(), cfg.model_family) == cfg.families.end())
      cfg.families.push_back(cfg.model_family);

    if (j.contains("fit")) {
      const auto& f = j.at("fit");
      check_keys(f, {"l", "line_search_steps", "max_iterations", "tol", "k_max", "em_max_iterations", "em_tol"},
                 "config.fit");
      read_opt(f, "l", cfg.fit.l);
      read_opt(f, "line_search_steps", cfg.fit.line_search_steps);
      read_opt(f, "max_iterations", cfg.fit.max_iterations);
      read_opt(f, "tol", cfg.fit.tol);
      read_opt(f, "k_max", cfg.fit.k_max);
      read_opt(f, "em_max_iterations", cfg.fit.em_max_iterations);
      read_opt(f, "em_tol", cfg.fit.em_tol);
    }
    if (j.contains("smc")) {
      const auto& s = j.at("smc");
      check_keys(s, {"confidence", "half_width", "max_runs", "seed", "batch", "mean_rel_half_width", "fixed_runs",
                     "workers"},
                 "config.smc");
      read_opt(s, "confidence", cfg.smc.confidence);
      read_opt(s, "half_width", cfg.smc.half_width);
      read_opt(s, "max_runs", cfg.smc.max_runs);
      read_opt(s, "seed", cfg.smc.seed);
      read_opt(s, "batch", cfg.smc.batch);
      read_opt(s, "mean_rel_half_width", cfg.smc.mean_rel_half_width);
      read_opt(s, "workers", cfg.smc.workers);
      if (s.contains("fixed_runs") && !s.at("fixed_runs").is_null())
        cfg.smc.fixed_runs = s.at("fixed_runs").get<std::uint64_t>();
    }
    if (!(cfg.smc.confidence > 0.0 && cfg.smc.confidence < 1.0)) throw ConfigError("smc.confidence must be in (0, 1)");
    if (!(cfg.smc.half_width > 0.0)) throw ConfigError("smc.half_width must be positive");
    if (cfg.smc.batch == 0) throw ConfigError("smc.batch must be positive");

    if (j.contains("cleaning")) {
      const auto& c = j.at("cleaning");
      check_keys(c, {"floor_seconds", "sd_multiplier"}, "config.cleaning");
      read_opt(c, "floor_seconds", cfg.cleaning.floor_seconds);
      read_opt(c, "sd_multiplier", cfg.cleaning.sd_multiplier);
    }
    if (j.contains("analysis")) {
      const auto& a = j.at("analysis");
      check_keys(a, {"early_margin", "late_margin", "histogram_runs", "histogram_bin_width"}, "config.analysis");
      read_opt(a, "early_margin", cfg.analysis.early_margin);
      read_opt(a, "late_margin", cfg.analysis.late_margin);
      read_opt(a, "histogram_runs", cfg.analysis.histogram_runs);
      read_opt(a, "histogram_bin_width", cfg.analysis.histogram_bin_width);
    }
    if (!(cfg.analysis.histogram_bin_width > 0.0)) throw ConfigError("analysis.histogram_bin_width must be positive");
    read_opt(j, "snap_radius", cfg.snap_radius);
    read_opt(j, "gap_threshold", cfg.gap_threshold);
    if (j.contains("out_dir")) cfg.out_dir = resolve(j.at("out_dir").get<std::string>(), base_dir);
    if (j.contains("scenarios")) {
      cfg.scenarios.clear();
      for (const auto& s : j.at("scenarios")) {
        const auto sc = scenario_from_string(s.get<std::string>());
        if (std::find(cfg.scenarios.begin(), cfg.scenarios.end(), sc) == cfg.scenarios.end())
          cfg.scenarios.push_back(sc);
      }
    }
    if (cfg.scenarios.empty()) throw ConfigError("config: at least one scenario is required");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const IngestError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const FitError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

json config_to_json(const PipelineConfig& cfg) {
  json j;
  j["route"] = cfg.route.string();
  j["avl"] = json::array();
  for (const auto& p : cfg.avl) j["avl"].push_back(p.string());
  j["windows"] = json::array();
  for (const auto& w : cfg.windows)
    j["windows"].push_back({{"label", w.label}, {"start", w.start}, {"end", w.end}});
  if (cfg.direction) j["direction"] = to_string(*cfg.direction);
  j["families"] = json::array();
  for (auto f : cfg.families) j["families"].push_back(to_string(f));
  j["model_family"] = to_string(cfg.model_family);
  j["fit"] = {{"l", cfg.fit.l},
              {"line_search_steps", cfg.fit.line_search_steps},
              {"max_iterations", cfg.fit.max_iterations},
              {"tol", cfg.fit.tol},
              {"k_max", cfg.fit.k_max},
              {"em_max_iterations", cfg.fit.em_max_iterations},
              {"em_tol", cfg.fit.em_tol}};
  j["smc"] = {{"confidence", cfg.smc.confidence},
              {"half_width", cfg.smc.half_width},
              {"max_runs", cfg.smc.max_runs},
              {"seed", cfg.smc.seed},
              {"batch", cfg.smc.batch},
              {"mean_rel_half_width", cfg.smc.mean_rel_half_width},
              {"workers", cfg.smc.workers}};
  j["smc"]["fixed_runs"] = cfg.smc.fixed_runs ? json(*cfg.smc.fixed_runs) : json(nullptr);
  j["cleaning"] = {{"floor_seconds", cfg.cleaning.floor_seconds}, {"sd_multiplier", cfg.cleaning.sd_multiplier}};
  j["analysis"] = {{"early_margin", cfg.analysis.early_margin},
                   {"late_margin", cfg.analysis.late_margin},
                   {"histogram_runs", cfg.analysis.histogram_runs},
                   {"histogram_bin_width", cfg.analysis.histogram_bin_width}};
  j["snap_radius"] = cfg.snap_radius;
  j["gap_threshold"] = cfg.gap_threshold;
  j["out_dir"] = cfg.out_dir.string();
  j["scenarios"] = json::array();
  for (auto s : cfg.scenarios) j["scenarios"].push_back(to_string(s));
  return j;
}

PipelineConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("invalid config file " + path.string() + ": " + e.what());
  }
  try {
    return config_from_json(j, path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError("invalid config file " + path.string() + ": " + e.what());
  }
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const PipelineConfig& cfg) {
  // Paths, the output directory and the worker count do not change results.
  json j = config_to_json(cfg);
  j.erase("out_dir");
  j["smc"].erase("workers");
  j["route"] = fnv1a_hex(read_file(cfg.route));
  j["avl"] = json::array();
  for (const auto& p : cfg.avl) j["avl"].push_back(fnv1a_hex(read_file(p)));
  return fnv1a_hex(j.dump());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << bytes;
  if (!out) throw ConfigError("write failed for " + path.string());
}

// ------------------------------------------------------------------ stages

std::vector<AvlFix> read_avl_files(const std::vector<fs::path>& paths, const std::string& route_id,
                                   std::size_t* skipped_rows) {
  std::vector<AvlFix> all;
  std::size_t skipped = 0;
  for (const auto& p : paths) {
    std::ifstream in(p);
    if (!in) throw ConfigError("cannot read AVL file " + p.string());
    try {
      auto r = parse_avl(in, route_id);
      skipped += r.skipped_rows;
      all.insert(all.end(), r.fixes.begin(), r.fixes.end());
    } catch (const IngestError& e) {
      throw ConfigError("invalid AVL file " + p.string() + ": " + e.what());
    }
  }
  // Keep per-vehicle time order when several files are combined.
  std::stable_sort(all.begin(), all.end(), [](const AvlFix& a, const AvlFix& b) {
    return std::tie(a.vehicle_id, a.timestamp) < std::tie(b.vehicle_id, b.timestamp);
  });
  all.erase(std::unique(all.begin(), all.end(),
                        [](const AvlFix& a, const AvlFix& b) {
                          return a.vehicle_id == b.vehicle_id && a.timestamp == b.timestamp;
                        }),
            all.end());
  if (skipped_rows) *skipped_rows = skipped;
  return all;
}

IngestOutput ingest_stage(const RouteSpec& route, std::span<const AvlFix> fixes, const TimeWindow& window,
                          std::span<const Scenario> scenarios, const CleaningOptions& cleaning, double snap_radius,
                          double gap_threshold) {
  IngestOutput out;
  out.summary.fixes = fixes.size();
  const auto assigned = assign_patches(fixes, route, snap_radius);
  out.summary.unassigned_fixes =
      static_cast<std::size_t>(std::count_if(assigned.begin(), assigned.end(), [](const auto& a) { return !a.patch; }));
  const auto extracted = extract_crossings(assigned, route, window, gap_threshold);
  out.summary.extraction = extracted.stats;

  std::vector<CrossingSample> raw;
  for (Scenario s : scenarios) {
    const auto part =
        s == Scenario::baseline ? baseline_samples(extracted.crossings) : speed_limited_samples(extracted.crossings, route);
    raw.insert(raw.end(), part.begin(), part.end());
  }
  auto cleaned = clean_outliers(raw, cleaning);
  out.summary.discarded = cleaned.discarded.size();
  out.summary.small_group_warning = cleaned.warning;
  out.samples = std::move(cleaned.kept);
  std::stable_sort(out.samples.begin(), out.samples.end(), [](const CrossingSample& a, const CrossingSample& b) {
    return std::tie(a.scenario, a.patch_index, a.entry_timestamp, a.vehicle_id) <
           std::tie(b.scenario, b.patch_index, b.entry_timestamp, b.vehicle_id);
  });
  return out;
}

ModelSelectionTable fit_stage(std::span<const CrossingSample> samples, Scenario scenario,
                              std::span<const Family> families, const FitOptions& opts) {
  const auto by_patch = durations_by_patch(samples, scenario);
  if (by_patch.empty()) throw AnalysisError("no " + to_string(scenario) + " samples to fit");
  return model_selection_table(by_patch, families, opts);
}

Pta build_stage(const ModelSelectionTable& table, Family family, const BuildOptions& opts) {
  std::vector<std::size_t> patches;
  for (const auto& c : table.cells)
    if (patches.empty() || patches.back() != c.patch_index) patches.push_back(c.patch_index);
  std::vector<PatchDistribution> dists;
  for (auto p : patches) {
    const auto* cell = table.find(p, family);
    if (!cell) throw AnalysisError("fit table has no " + to_string(family) + " column");
    if (!cell->report)
      throw AnalysisError("patch " + std::to_string(p) + ": " + to_string(family) + " fit failed: " + cell->error);
    dists.push_back(cell->report->dist);
  }
  try {
    return build_pta(dists, opts);
  } catch (const PtaError& e) {
    throw AnalysisError(e.what());
  }
}

// ----------------------------------------------------------------- reports

ScenarioAnalysis analyse_model(const Pta& pta, Scenario scenario, double timetable_duration,
                               const AnalysisOptions& analysis, const SmcOptions& smc) {
  ScenarioAnalysis a;
  a.scenario = scenario;
  a.mean = estimate_mean(pta, smc);
  try {
    a.on_time = on_time_report(pta, timetable_duration, analysis.early_margin, analysis.late_margin, smc);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  a.histogram = journey_histogram(pta, analysis.histogram_runs, analysis.histogram_bin_width, smc);
  a.analytic_mean = analytic_mean_time(pta).value_or(std::nan(""));
  return a;
}

double percent_change(double old_value, double new_value) {
  return std::round((new_value - old_value) / old_value * 100.0 * 100.0) / 100.0;
}

namespace {

const ScenarioAnalysis* find_analysis(const JourneyRow& row, Scenario s) {
  for (const auto& a : row.analyses)
    if (a.scenario == s) return &a;
  return nullptr;
}

std::vector<Scenario> row_scenarios(std::span<const JourneyRow> rows) {
  std::vector<Scenario> out;
  for (Scenario s : {Scenario::baseline, Scenario::speed_limited})
    for (const auto& r : rows)
      if (find_analysis(r, s)) {
        out.push_back(s);
        break;
      }
  return out;
}

std::string prob(double p) { return format_decimals(p, 6); }
std::string secs(double t) { return format_decimals(t, 2); }

} // namespace

std::string journey_means_csv(std::span<const JourneyRow> rows, const ReportStamp& stamp) {
  const auto scenarios = row_scenarios(rows);
  const bool both = scenarios.size() == 2;
  std::ostringstream os;
  os << "window,timetable_s";
  for (Scenario s : scenarios) {
    const auto n = to_string(s);
    os << ',' << n << "_mean_s," << n << "_ci_low_s," << n << "_ci_high_s," << n << "_runs";
  }
  if (both) os << ",difference_s,percent_change";
  os << ",seed,config_hash\n";
  for (const auto& r : rows) {
    os << r.window << ',' << secs(r.timetable);
    for (Scenario s : scenarios) {
      const auto* a = find_analysis(r, s);
      os << ',' << secs(a->mean.point) << ',' << secs(a->mean.ci_low) << ',' << secs(a->mean.ci_high) << ','
         << a->mean.runs;
    }
    if (both) {
      const double old_mean = find_analysis(r, Scenario::baseline)->mean.point;
      const double new_mean = find_analysis(r, Scenario::speed_limited)->mean.point;
      os << ',' << secs(new_mean - old_mean) << ',' << format_decimals(percent_change(old_mean, new_mean), 2);
    }
    os << ',' << stamp.seed << ',' << stamp.config_hash << '\n';
  }
  return os.str();
}

std::string on_time_csv(std::span<const JourneyRow> rows, const ReportStamp& stamp) {
  std::ostringstream os;
  os << "window,scenario,timetable_s,early_deadline_s,late_deadline_s,p_too_early,p_too_early_ci_low,"
        "p_too_early_ci_high,p_too_early_runs,p_too_late,p_too_late_ci_low,p_too_late_ci_high,p_too_late_runs,"
        "confidence,seed,config_hash\n";
  for (const auto& r : rows) {
    for (const auto& a : r.analyses) {
      const auto& o = a.on_time;
      os << r.window << ',' << to_string(a.scenario) << ',' << secs(r.timetable) << ',' << secs(o.early_deadline)
         << ',' << secs(o.late_deadline) << ',' << prob(o.p_too_early.point) << ',' << prob(o.p_too_early.ci_low)
         << ',' << prob(o.p_too_early.ci_high) << ',' << o.p_too_early.runs << ',' << prob(o.p_too_late.point) << ','
         << prob(o.p_too_late.ci_low) << ',' << prob(o.p_too_late.ci_high) << ',' << o.p_too_late.runs << ','
         << format_double(o.p_too_early.confidence) << ',' << stamp.seed << ',' << stamp.config_hash << '\n';
    }
  }
  return os.str();
}

std::string histogram_csv(const Histogram& h) {
  std::ostringstream os;
  os << "bin_start_s,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    os << format_double(static_cast<double>(i) * h.bin_width) << ',' << h.counts[i] << '\n';
  return os.str();
}

std::string estimate_line(const Query& q, const SmcEstimate& e) {
  char buf[256];
  switch (q.kind) {
  case QueryKind::prob_reach_by_deadline:
    if (q.comparison == Comparison::at_most) return uppaal_estimate_line(e, kTemplateName);
    std::snprintf(buf, sizeof buf, "(%llu runs) Pr(time to %s.end > %s) in [%g,%g] with confidence %g",
                  static_cast<unsigned long long>(e.runs), kTemplateName, format_fixed(*q.deadline).c_str(), e.ci_low,
                  e.ci_high, e.confidence);
    return buf;
  case QueryKind::mean_time_to_end:
    std::snprintf(buf, sizeof buf, "(%llu runs) E(time to %s.end) = %g in [%g,%g] with confidence %g",
                  static_cast<unsigned long long>(e.runs), kTemplateName, e.point, e.ci_low, e.ci_high, e.confidence);
    return buf;
  case QueryKind::histogram:
    break;
  }
  throw std::invalid_argument("histogram queries have no estimate line");
}

// ---------------------------------------------------------------- pipeline

namespace {

json estimate_json(const SmcEstimate& e) {
  return {{"point", e.point},   {"ci_low", e.ci_low},           {"ci_high", e.ci_high},
          {"runs", e.runs},     {"confidence", e.confidence},   {"width_met", e.width_met}};
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

class ReportWriter {
public:
  ReportWriter(fs::path dir, PipelineResult& result) : dir_(std::move(dir)), result_(result) {}

  void write(const std::string& name, const std::string& bytes) {
    write_file(dir_ / name, bytes);
    result_.files.push_back(name);
    hashes_.push_back(fnv1a_hex(bytes));
  }

  void manifest(const ReportStamp& stamp, bool complete, const std::string& stage, const std::string& error) {
    std::ostringstream os;
    os << "status " << (complete ? "complete" : "incomplete") << '\n';
    os << "seed " << stamp.seed << '\n';
    os << "config_hash " << stamp.config_hash << '\n';
    if (!complete) {
      os << "failed_stage " << stage << '\n';
      os << "error " << std::regex_replace(error, std::regex("\n"), " ") << '\n';
    }
    for (std::size_t i = 0; i < result_.files.size(); ++i) os << "file " << result_.files[i] << ' ' << hashes_[i] << '\n';
    write_file(dir_ / "MANIFEST", os.str());
  }

private:
  fs::path dir_;
  PipelineResult& result_;
  std::vector<std::string> hashes_;
};

std::string dump(const json& j) { return j.dump(2) + "\n"; }

} // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg) {
  PipelineResult result;
  ReportStamp stamp{cfg.smc.seed, ""};
  std::string stage = "config";

  // Failures before the output directory exists cannot leave a MANIFEST.
  std::optional<ReportWriter> writer;
  try {
    if (cfg.scenarios.empty()) throw ConfigError("at least one scenario is required");
    if (cfg.out_dir.empty()) throw ConfigError("no output directory given");
    RouteSpec route;
    try {
      route = load_route(cfg.route);
    } catch (const IngestError& e) {
      throw ConfigError(e.what());
    }
    if (cfg.direction && *cfg.direction != route.direction)
      throw ConfigError("config direction " + to_string(*cfg.direction) + " does not match route file " +
                        cfg.route.string());
    stamp.config_hash = config_hash(cfg);
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + cfg.out_dir.string() + ": " + ec.message());
    writer.emplace(cfg.out_dir, result);

    stage = "ingest";
    std::size_t skipped = 0;
    const auto fixes = read_avl_files(cfg.avl, route.route_id, &skipped);

    std::vector<std::size_t> modelled;
    for (const auto& p : route.patches)
      if (!p.terminal) modelled.push_back(p.index);

    json summary;
    summary["seed"] = stamp.seed;
    summary["config_hash"] = stamp.config_hash;
    summary["route_id"] = route.route_id;
    summary["direction"] = to_string(route.direction);
    summary["model_family"] = to_string(cfg.model_family);
    summary["windows"] = json::array();

    std::vector<JourneyRow> rows;
    const double timetable = static_cast<double>(route.timetable_duration);
    for (const auto& window : cfg.windows) {
      stage = "ingest";
      auto ingested = ingest_stage(route, fixes, window, cfg.scenarios, cfg.cleaning, cfg.snap_radius,
                                   cfg.gap_threshold);
      ingested.summary.skipped_rows = skipped;
      const auto& st = ingested.summary;
      json wj;
      wj["label"] = window.label;
      wj["ingest"] = {{"fixes", st.fixes},
                      {"skipped_rows", st.skipped_rows},
                      {"unassigned_fixes", st.unassigned_fixes},
                      {"crossings_kept", st.extraction.kept},
                      {"partial", st.extraction.partial},
                      {"regression", st.extraction.regression},
                      {"gap", st.extraction.gap},
                      {"outside_window", st.extraction.outside_window},
                      {"discarded_outliers", st.discarded},
                      {"small_group_warning", st.small_group_warning}};

      JourneyRow row{window.label, timetable, {}};
      for (Scenario scenario : cfg.scenarios) {
        const std::string tag = window.label + "_" + to_string(scenario);
        std::vector<CrossingSample> mine;
        std::copy_if(ingested.samples.begin(), ingested.samples.end(), std::back_inserter(mine),
                     [&](const CrossingSample& s) { return s.scenario == scenario; });
        std::ostringstream cs;
        write_crossings_csv(cs, mine);
        writer->write("crossings_" + tag + ".csv", cs.str());

        stage = "fit";
        const auto by_patch = durations_by_patch(mine, scenario);
        for (auto p : modelled)
          if (!by_patch.count(p))
            throw AnalysisError("window " + window.label + ", " + to_string(scenario) + ": no crossings of patch " +
                                std::to_string(p));
        const auto table = fit_stage(mine, scenario, cfg.families, cfg.fit);
        std::ostringstream fc;
        write_model_selection_csv(fc, table);
        writer->write("fits_" + tag + ".csv", fc.str());
        writer->write("fits_" + tag + ".json", dump(model_selection_to_json(table)));

        stage = "build-pta";
        const auto pta = build_stage(table, cfg.model_family);
        writer->write("model_" + tag + ".json", dump(json(pta)));
        const double early = timetable - cfg.analysis.early_margin;
        const double late = timetable + cfg.analysis.late_margin;
        const std::vector<Query> queries{Query::reach_by(early), Query::later_than(late)};
        writer->write("model_" + tag + ".xml", export_xml(pta, queries));
        writer->write("model_" + tag + ".q", export_queries(queries));

        stage = "simulate";
        auto analysis = analyse_model(pta, scenario, timetable, cfg.analysis, cfg.smc);
        writer->write("histogram_" + tag + ".csv", histogram_csv(analysis.histogram));
        wj["scenarios"][to_string(scenario)] = {
            {"samples", mine.size()},
            {"mean", estimate_json(analysis.mean)},
            {"analytic_mean", finite_or_null(analysis.analytic_mean)},
            {"p_too_early", estimate_json(analysis.on_time.p_too_early)},
            {"p_too_late", estimate_json(analysis.on_time.p_too_late)},
            {"early_deadline", analysis.on_time.early_deadline},
            {"late_deadline", analysis.on_time.late_deadline},
            {"expected_phases",
             [&] {
               double s = 0.0;
               for (const auto& c : table.cells)
                 if (c.family == cfg.model_family && c.report) s += c.report->expected_phases;
               return s;
             }()}};
        row.analyses.push_back(std::move(analysis));
      }
      summary["windows"].push_back(std::move(wj));
      rows.push_back(std::move(row));
    }

    stage = "report";
    writer->write("journey_means.csv", journey_means_csv(rows, stamp));
    writer->write("on_time.csv", on_time_csv(rows, stamp));
    writer->write("summary.json", dump(summary));
    writer->manifest(stamp, true, stage, "");
    result.exit_code = kExitOk;
  } catch (const ConfigError& e) {
    result.exit_code = kExitConfig;
    result.error = e.what();
  } catch (const IngestError& e) {
    result.exit_code = kExitConfig;
    result.error = e.what();
  } catch (const fs::filesystem_error& e) {
    result.exit_code = kExitConfig;
    result.error = e.what();
  } catch (const std::exception& e) {
    result.exit_code = kExitAnalysis;
    result.error = e.what();
  }
  if (result.exit_code != kExitOk && writer) {
    try {
      writer->manifest(stamp, false, stage, result.error);
    } catch (const std::exception&) {
    }
  }
  return result;
}

std::vector<PatchDistribution> default_truth(const RouteSpec& route) {
  constexpr double kMeanSpeed = 5.0; // m/s
  std::vector<PatchDistribution> truth;
  for (const auto& p : route.patches) {
    if (p.terminal) continue;
    const double m = (p.d_end - p.d_start) / kMeanSpeed;
    const double fast = 0.8 * m;
    const double slow = (m - 0.7 * fast) / 0.3;
    truth.push_back(HyperErlangParams{{{0.7, 10, 10.0 / fast}, {0.3, 4, 4.0 / slow}}});
  }
  return truth;
}

} // namespace patchtime
