#pragma once

#include "patchtime/distributions.hpp"

#include <Eigen/Core>

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace patchtime {

class FitError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct FitOptions {
  /// Grid subdivisions of [-1, 1] in the bracketing scan.
  int l = 7;
  /// Golden-section contractions after bracketing.
  int line_search_steps = 10;
  int max_iterations = 1000;
  /// Relative parameter change that ends an ascent.
  double tol = 1e-8;
  int k_max = 500;
  int em_max_iterations = 500;
  /// Absolute log-likelihood gain that ends EM.
  double em_tol = 1e-9;
  int branch_count = 2;
};

struct FitReport {
  PatchDistribution dist = ErlangParams{};
  double log_likelihood = 0.0;
  std::size_t n = 0;
  double expected_phases = 0.0;
  int iterations = 0;
  bool converged = false;
  /// Free-form remark, e.g. a dropped hyper-Erlang branch.
  std::string note;
};

/// Sum of log-densities; -infinity if any sample lies outside the support.
/// Throws FitError on an empty sample.
double log_likelihood(const PatchDistribution& dist, std::span<const double> x);

/// k-scan from 1 with the closed-form rate k / mean(x); stops at the first
/// decrease of the log-likelihood.
FitReport fit_erlang(std::span<const double> x, const FitOptions& opts = {});

// ---------------------------------------------------------------- Erlang+c

/// Log-likelihood of Erlang+c with shape k; -infinity when infeasible.
double erlang_plus_c_log_likelihood(std::span<const double> x, int k, double lambda, double c);

/// Analytic gradient (d/dlambda, d/dc) of the Erlang+c log-likelihood.
Eigen::Vector2d erlang_plus_c_gradient(std::span<const double> x, int k, double lambda, double c);

struct ErlangPlusCStart {
  double lambda = 0.0;
  double c = 0.0;
};

/// c = 0.9 * min(x), lambda = k / (mean(x) - c).
ErlangPlusCStart erlang_plus_c_initial(std::span<const double> x, int k);

struct ErlangPlusCFixedK {
  double lambda = 0.0;
  double c = 0.0;
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Per-iteration observer: (iteration, lambda, c, log-likelihood).
using AscentObserver = std::function<void(int, double, double, double)>;

/// Line-search steepest ascent over (lambda, c) for a fixed shape.
ErlangPlusCFixedK fit_erlang_plus_c_fixed_k(std::span<const double> x, int k, const FitOptions& opts = {},
                                            const AscentObserver& observer = {});

/// Outer k-scan over fit_erlang_plus_c_fixed_k.
FitReport fit_erlang_plus_c(std::span<const double> x, const FitOptions& opts = {});

/// Maximiser of h on [-1, 1] by grid bracketing then golden-section
/// contraction; returns the centre of the final bracket, or NaN when h is
/// -infinity on the whole grid.
double section_search(const std::function<double(double)>& h, int l, int steps);

// ------------------------------------------------------------- hyper-Erlang

struct EmResult {
  HyperErlangParams params;
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// EM over (alpha, lambda) with the branch shapes held fixed. When `trace` is
/// given, the log-likelihood before the first and after every iteration is
/// appended.
EmResult em_hyper_erlang(std::span<const double> x, const HyperErlangParams& start, const FitOptions& opts,
                         std::vector<double>* trace = nullptr);

/// Quantile-block initialisation: m contiguous blocks of the sorted sample,
/// alpha = block fraction, branch mean = block mean, shape from block moments.
HyperErlangParams hyper_erlang_initial(std::span<const double> x, int m);

/// EM inside a one-sweep coordinate scan of the branch shapes.
FitReport fit_hyper_erlang(std::span<const double> x, int m, const FitOptions& opts = {});

/// Reads "alpha k lambda" rows (comma or whitespace separated, '#' comments).
HyperErlangParams read_hyper_erlang_table(std::istream& in);

// ------------------------------------------------------- model selection

enum class Family { erlang, hyper_erlang_2, hyper_erlang_3, erlang_plus_c };

std::string to_string(Family f);
Family family_from_string(const std::string& s);
FitReport fit_family(Family family, std::span<const double> x, const FitOptions& opts);

struct ModelSelectionCell {
  std::size_t patch_index = 0;
  Family family = Family::erlang;
  std::optional<FitReport> report; ///< empty when the fit failed
  std::string error;
};

struct ModelSelectionTable {
  std::vector<Family> families;
  std::vector<ModelSelectionCell> cells; ///< patch-major, families in given order

  const ModelSelectionCell* find(std::size_t patch, Family family) const;
};

ModelSelectionTable model_selection_table(const std::map<std::size_t, std::vector<double>>& samples_by_patch,
                                          std::span<const Family> families, const FitOptions& opts = {});

/// CSV with raw and integer-rounded log-likelihoods and expected phase counts.
void write_model_selection_csv(std::ostream& out, const ModelSelectionTable& table);
nlohmann::json model_selection_to_json(const ModelSelectionTable& table);
ModelSelectionTable model_selection_from_json(const nlohmann::json& j);

void to_json(nlohmann::json& j, const FitReport& r);
void from_json(const nlohmann::json& j, FitReport& r);

} // namespace patchtime
