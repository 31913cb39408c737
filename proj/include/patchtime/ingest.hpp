#pragma once

#include "patchtime/distributions.hpp"
#include "patchtime/geometry.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace patchtime {

/// Raised for malformed input files and invalid route configurations.
class IngestError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// One timestamped GPS measurement of one vehicle.
struct AvlFix {
  std::string vehicle_id;
  double timestamp = 0.0; ///< seconds since midnight of the operating day
  double lat = 0.0;
  double lon = 0.0;
  double speed_mph = 0.0;
  std::string route_id;
};

struct PatchSpec {
  std::size_t index = 0;
  std::string name;
  double d_start = 0.0; ///< metres along the polyline, inclusive
  double d_end = 0.0;   ///< metres along the polyline, exclusive
  bool limit_affected = false;
  bool terminal = false;
  /// Lifts the 500 m - 2500 m length rule for this patch.
  bool any_length = false;
};

enum class Direction { forward, reverse };

struct RouteSpec {
  std::string route_id;
  Direction direction = Direction::forward;
  std::vector<LatLon> polyline;
  std::vector<PatchSpec> patches;
  std::int64_t timetable_duration = 0;
};

enum class Scenario { baseline, speed_limited };

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);
std::string to_string(Direction d);

/// One patch traversal duration.
struct CrossingSample {
  std::size_t patch_index = 0;
  double duration = 0.0;
  std::string vehicle_id;
  double entry_timestamp = 0.0;
  Scenario scenario = Scenario::baseline;
};

/// Half-open interval [start, end) of operating-day seconds.
struct TimeWindow {
  double start = 0.0;
  double end = 0.0;
  std::string label;
};

// ---------------------------------------------------------------- parsing

/// Operating day starts at 03:00; earlier clock times belong to the next
/// calendar day and are shifted by +86400 s. Hours 24-26 are taken as is.
inline constexpr double kOperatingDayStart = 3 * 3600.0;

/// Parses "HH:MM:SS" onto the operating-day timeline; nullopt if malformed.
std::optional<double> parse_timestamp(const std::string& text);
/// Inverse of parse_timestamp for whole seconds (hours may exceed 23).
std::string format_timestamp(double seconds);

struct AvlParseResult {
  std::vector<AvlFix> fixes; ///< grouped by vehicle, strictly increasing time
  std::size_t skipped_rows = 0;
  std::size_t duplicate_timestamps = 0;
};

/// Reads `vehicle_id,timestamp,lat,lon,speed_mph` CSV (columns in any order).
/// Throws IngestError naming a missing header column.
AvlParseResult parse_avl(std::istream& in, const std::string& route_id);
void write_avl_csv(std::ostream& out, std::span<const AvlFix> fixes);

// ------------------------------------------------------------- routes

/// Throws IngestError listing the first violated route invariant.
void validate_route(const RouteSpec& route);
RouteSpec load_route(const std::filesystem::path& path);
RouteSpec route_from_json(const nlohmann::json& j);
nlohmann::json route_to_json(const RouteSpec& route);

// ------------------------------------------------------------ assignment

struct AssignedFix {
  AvlFix fix;
  std::optional<std::size_t> patch; ///< nullopt when farther than the snap radius
  double along = 0.0;
  double offset = 0.0;
};

inline constexpr double kDefaultSnapRadius = 50.0;

std::vector<AssignedFix> assign_patches(std::span<const AvlFix> fixes, const RouteSpec& route,
                                        double snap_radius = kDefaultSnapRadius);

/// Patch whose [d_start, d_end) contains `along`; the route end belongs to
/// the last patch.
std::optional<std::size_t> patch_at(const RouteSpec& route, double along);

// ------------------------------------------------------------ crossings

/// A crossing plus the speeds recorded while inside the patch.
struct Crossing {
  CrossingSample sample;
  std::vector<double> speeds_mph;
};

struct ExtractionStats {
  std::size_t kept = 0;
  std::size_t partial = 0;
  std::size_t regression = 0;
  std::size_t gap = 0;
  std::size_t outside_window = 0;
  std::size_t terminal = 0;
};

struct ExtractionResult {
  std::vector<Crossing> crossings; ///< sorted by (patch, entry_timestamp, vehicle)
  ExtractionStats stats;
};

inline constexpr double kDefaultGapThreshold = 60.0;

/// A crossing of patch k runs from the vehicle's first fix in k to its first
/// fix in a later patch. Terminal patches are never reported.
ExtractionResult extract_crossings(std::span<const AssignedFix> assigned, const RouteSpec& route,
                                   const TimeWindow& window,
                                   double gap_threshold = kDefaultGapThreshold);

// ------------------------------------------------------------- cleaning

struct CleaningOptions {
  double floor_seconds = 30.0;
  double sd_multiplier = 3.0;
};

struct GroupThreshold {
  std::size_t patch_index = 0;
  Scenario scenario = Scenario::baseline;
  std::size_t n = 0;
  double median = 0.0;
  double stddev = 0.0;
  double upper = 0.0;
  bool too_small = false; ///< fewer than two samples; group passed through unchanged
};

struct CleaningResult {
  std::vector<CrossingSample> kept;
  std::vector<CrossingSample> discarded;
  std::vector<GroupThreshold> groups;
  bool warning = false;
};

/// Single pass per (patch, scenario) group: keeps floor <= x <= median +
/// 3 * sample stddev, both statistics taken from the uncleaned group.
CleaningResult clean_outliers(std::span<const CrossingSample> samples, const CleaningOptions& opts = {});

// ---------------------------------------------------------- speed limit

inline constexpr double kSpeedLimitMph = 20.0;
inline constexpr double kFixPeriodSeconds = 5.0;

/// Adds ((s - 20) / 20) * 5 s for every fix recorded above 20 mph.
double apply_speed_limit(std::span<const double> speeds_mph, double base_duration);
double apply_speed_limit(std::span<const AvlFix> fixes, double base_duration);

/// Speed-limited copy of the crossings; unaffected patches keep their duration.
std::vector<CrossingSample> speed_limited_samples(std::span<const Crossing> crossings, const RouteSpec& route);
std::vector<CrossingSample> baseline_samples(std::span<const Crossing> crossings);

// ------------------------------------------------------ crossing CSV

void write_crossings_csv(std::ostream& out, std::span<const CrossingSample> samples);
std::vector<CrossingSample> read_crossings_csv(std::istream& in);

/// Durations per patch index, in input order.
std::map<std::size_t, std::vector<double>> durations_by_patch(std::span<const CrossingSample> samples,
                                                              Scenario scenario);

// ---------------------------------------------------------- synthetic

struct SyntheticOptions {
  std::size_t n_journeys = 0;
  std::uint64_t seed = 0;
  int fix_interval = 5;
  double first_departure = 9 * 3600.0;
  double headway = 300.0;
  /// Time spent crossing each terminal patch.
  double terminal_duration = 120.0;
  /// Standard deviation of recorded speed around the patch average (mph).
  double speed_noise_mph = 3.0;
};

/// One journey per vehicle id; durations drawn per non-terminal patch from
/// `truth` (in route order), fixes emitted every fix_interval seconds.
std::vector<AvlFix> generate_synthetic_trace(const RouteSpec& route, std::span<const PatchDistribution> truth,
                                             const SyntheticOptions& opts);

} // namespace patchtime
