#pragma once

#include "patchtime/pta.hpp"
#include "patchtime/rng.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace patchtime {

enum class QueryKind { prob_reach_by_deadline, mean_time_to_end, histogram };
/// at_most counts runs with time <= deadline, exceeds counts time > deadline.
enum class Comparison { at_most, exceeds };

struct Query {
  QueryKind kind = QueryKind::prob_reach_by_deadline;
  std::optional<double> deadline;
  Comparison comparison = Comparison::at_most;

  static Query reach_by(double deadline) { return {QueryKind::prob_reach_by_deadline, deadline, Comparison::at_most}; }
  static Query later_than(double deadline) { return {QueryKind::prob_reach_by_deadline, deadline, Comparison::exceeds}; }
};

/// Throws std::invalid_argument when the deadline presence does not match the kind.
void check_query(const Query& q);

/// "prob<=1620", "prob>1980", "mean" or "hist" (CLI query syntax).
Query parse_query(const std::string& text);

struct SmcOptions {
  double confidence = 0.90;
  double half_width = 0.0005;
  std::uint64_t max_runs = 10'000'000;
  std::uint64_t seed = 0;
  std::uint64_t batch = 1024;
  /// Relative CI half-width at which mean estimation stops.
  double mean_rel_half_width = 0.001;
  /// Run exactly this many simulations, without width-based stopping.
  std::optional<std::uint64_t> fixed_runs;
  /// 0 picks the hardware concurrency.
  unsigned workers = 0;
};

struct SmcEstimate {
  double point = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::uint64_t runs = 0;
  double confidence = 0.0;
  double wall_time = 0.0; ///< seconds; not part of any reproducible report
  bool width_met = true;
};

/// Exact binomial (Clopper-Pearson) interval for k successes in n trials.
std::pair<double, double> clopper_pearson(std::uint64_t successes, std::uint64_t trials, double confidence);

/// Indexed form of a validated Pta for fast repeated simulation.
class CompiledPta {
public:
  /// Throws PtaError listing validation failures.
  explicit CompiledPta(const Pta& pta);

  /// Time from the initial location to end for one run.
  double simulate_run(Rng& rng) const;

private:
  struct Step {
    std::uint32_t target = 0;
    std::uint64_t cumulative_weight = 0;
    int guard_clock = -1;
    double guard_bound = 0.0;
    int reset_clock = -1;
  };
  struct Node {
    double rate = 0.0; ///< 0 for branch points and end
    bool is_branch = false;
    bool is_end = false;
    std::uint32_t first_step = 0;
    std::uint32_t n_steps = 0;
    std::uint64_t total_weight = 0;
  };
  std::vector<Node> nodes_;
  std::vector<Step> steps_;
  std::uint32_t initial_ = 0;
  std::size_t n_clocks_ = 0;
};

double simulate_run(const Pta& pta, Rng& rng);

/// Run times for batches [0, n_batches) of `opts.batch` runs each. Batch b
/// draws from Rng::substream(seed, b), so results do not depend on the
/// worker count.
std::vector<double> simulate_times(const CompiledPta& model, std::uint64_t n_runs, const SmcOptions& opts);

SmcEstimate estimate_probability(const Pta& pta, const Query& query, const SmcOptions& opts);
SmcEstimate estimate_mean(const Pta& pta, const SmcOptions& opts);

struct Histogram {
  double bin_width = 0.0;
  std::vector<std::uint64_t> counts; ///< bin i covers [i * w, (i + 1) * w)
  std::uint64_t total() const;
};

Histogram journey_histogram(const Pta& pta, std::uint64_t n_runs, double bin_width, const SmcOptions& opts);
Histogram make_histogram(std::span<const double> times, double bin_width);

struct OnTimeReport {
  double early_deadline = 0.0;
  double late_deadline = 0.0;
  SmcEstimate p_too_early;
  SmcEstimate p_too_late;
};

/// Too early: time <= timetable - early_margin. Too late: time > timetable + late_margin.
OnTimeReport on_time_report(const Pta& pta, double timetable_duration, double early_margin, double late_margin,
                            const SmcOptions& opts);

/// UPPAAL-style "Pr[<=D] (<> Process.end)" formula for a query.
std::string query_formula(const Query& q, const std::string& process = "Process");

/// "(N runs) Pr(<> Process.end) in [lo,hi] with confidence c".
std::string uppaal_estimate_line(const SmcEstimate& e, const std::string& process = "Process");

} // namespace patchtime
