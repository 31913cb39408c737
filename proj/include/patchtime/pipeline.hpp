#pragma once

#include "patchtime/fitting.hpp"
#include "patchtime/ingest.hpp"
#include "patchtime/pta.hpp"
#include "patchtime/smc.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace patchtime {

/// Missing or unreadable files, bad configuration values. Exit status 2.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Data that cannot be analysed (too few samples, failed fit). Exit status 1.
class AnalysisError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitAnalysis = 1;
inline constexpr int kExitConfig = 2;

/// Environment variable naming the default output directory.
inline constexpr const char* kOutDirEnv = "PATCHTIME_OUT_DIR";

struct AnalysisOptions {
  double early_margin = 60.0;
  double late_margin = 300.0;
  std::uint64_t histogram_runs = 100'000;
  double histogram_bin_width = 30.0;
};

struct PipelineConfig {
  std::filesystem::path route;
  std::vector<std::filesystem::path> avl;
  std::vector<TimeWindow> windows;
  std::optional<Direction> direction;
  /// Families tabulated in the fit report.
  std::vector<Family> families{Family::erlang, Family::hyper_erlang_2, Family::hyper_erlang_3,
                               Family::erlang_plus_c};
  /// Family whose fits become the route model.
  Family model_family = Family::hyper_erlang_2;
  FitOptions fit;
  SmcOptions smc;
  CleaningOptions cleaning;
  AnalysisOptions analysis;
  double snap_radius = kDefaultSnapRadius;
  double gap_threshold = kDefaultGapThreshold;
  std::filesystem::path out_dir;
  std::vector<Scenario> scenarios{Scenario::baseline, Scenario::speed_limited};
};

/// Whole-day window used when a config lists none.
TimeWindow whole_day_window();

/// Relative paths resolve against `base_dir`. Throws ConfigError.
PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
nlohmann::json config_to_json(const PipelineConfig& cfg);
PipelineConfig load_config(const std::filesystem::path& path);

/// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);

/// Hash over the canonical config text and the bytes of every input file.
std::string config_hash(const PipelineConfig& cfg);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

// ------------------------------------------------------------------ stages

struct IngestSummary {
  std::size_t fixes = 0;
  std::size_t skipped_rows = 0;
  std::size_t unassigned_fixes = 0;
  ExtractionStats extraction;
  std::size_t discarded = 0;
  bool small_group_warning = false;
};

struct IngestOutput {
  /// Cleaned samples of every requested scenario, each scenario sorted by
  /// (patch, entry time, vehicle).
  std::vector<CrossingSample> samples;
  IngestSummary summary;
};

std::vector<AvlFix> read_avl_files(const std::vector<std::filesystem::path>& paths, const std::string& route_id,
                                   std::size_t* skipped_rows = nullptr);

IngestOutput ingest_stage(const RouteSpec& route, std::span<const AvlFix> fixes, const TimeWindow& window,
                          std::span<const Scenario> scenarios, const CleaningOptions& cleaning = {},
                          double snap_radius = kDefaultSnapRadius, double gap_threshold = kDefaultGapThreshold);

/// Model selection table over the scenario's samples. Throws AnalysisError
/// when the scenario has no samples.
ModelSelectionTable fit_stage(std::span<const CrossingSample> samples, Scenario scenario,
                              std::span<const Family> families, const FitOptions& opts);

/// Route model from one family's column of the table, patches in index
/// order. Throws AnalysisError naming a patch whose fit failed.
Pta build_stage(const ModelSelectionTable& table, Family family, const BuildOptions& opts = {});

// ----------------------------------------------------------------- reports

struct ScenarioAnalysis {
  Scenario scenario = Scenario::baseline;
  SmcEstimate mean;
  OnTimeReport on_time;
  Histogram histogram;
  double analytic_mean = 0.0;
};

ScenarioAnalysis analyse_model(const Pta& pta, Scenario scenario, double timetable_duration,
                               const AnalysisOptions& analysis, const SmcOptions& smc);

struct ReportStamp {
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// One row per window; speed-limited, Difference and Percent Change columns
/// appear only when that scenario was analysed.
struct JourneyRow {
  std::string window;
  double timetable = 0.0;
  std::vector<ScenarioAnalysis> analyses;
};

std::string journey_means_csv(std::span<const JourneyRow> rows, const ReportStamp& stamp);
std::string on_time_csv(std::span<const JourneyRow> rows, const ReportStamp& stamp);
std::string histogram_csv(const Histogram& h);
std::string estimate_line(const Query& q, const SmcEstimate& e);

/// Difference / old * 100 rounded to two decimals.
double percent_change(double old_value, double new_value);

// ---------------------------------------------------------------- pipeline

struct PipelineResult {
  int exit_code = kExitOk;
  std::string error;
  std::vector<std::string> files; ///< written report files, relative to out_dir
};

/// Runs every stage and writes reports plus a MANIFEST into cfg.out_dir.
/// Stage failures leave earlier files in place and an incomplete MANIFEST.
PipelineResult run_pipeline(const PipelineConfig& cfg);

/// Default ground truth for synthetic traces: a two-branch hyper-Erlang per
/// non-terminal patch, scaled to the patch length.
std::vector<PatchDistribution> default_truth(const RouteSpec& route);

} // namespace patchtime
