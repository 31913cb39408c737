#include "patchtime/fitting.hpp"

#include "patchtime/format.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>

namespace patchtime {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kGoldenRatio = 0.6180339887498949;
constexpr int kMaxGradientHalvings = 40;
constexpr double kCollapsedAlpha = 1e-6;

void require_samples(std::span<const double> x, std::size_t min_size, const char* what) {
  if (x.empty()) throw FitError(std::string(what) + ": empty sample");
  if (x.size() < min_size)
    throw FitError(std::string(what) + ": needs at least " + std::to_string(min_size) + " samples, got " +
                   std::to_string(x.size()));
  for (double v : x)
    if (!(v > 0.0) || !std::isfinite(v)) throw FitError(std::string(what) + ": samples must be positive and finite");
}

Eigen::Map<const Eigen::ArrayXd> as_array(std::span<const double> x) {
  return {x.data(), static_cast<Eigen::Index>(x.size())};
}

} // namespace

double log_likelihood(const PatchDistribution& dist, std::span<const double> x) {
  if (x.empty()) throw FitError("log-likelihood of an empty sample");
  double s = 0.0;
  for (double v : x) {
    const double lp = log_pdf(dist, v);
    if (lp == kNegInf) return kNegInf;
    s += lp;
  }
  return s;
}

// ------------------------------------------------------------------ Erlang

FitReport fit_erlang(std::span<const double> x, const FitOptions& opts) {
  require_samples(x, 2, "Erlang fit");
  const auto xs = as_array(x);
  const double n = static_cast<double>(x.size());
  const double mean_x = xs.mean();
  const double sum_log = xs.log().sum();

  // With lambda = k / mean the rate term is n * k.
  auto ll = [&](int k) {
    const double lambda = k / mean_x;
    return n * (k * std::log(lambda) - std::lgamma(static_cast<double>(k))) + (k - 1) * sum_log - n * k;
  };

  FitReport r;
  r.n = x.size();
  int best_k = 1;
  double best_ll = ll(1);
  r.iterations = 1;
  r.converged = false;
  for (int k = 2; k <= opts.k_max; ++k) {
    const double v = ll(k);
    ++r.iterations;
    if (!(v > best_ll)) {
      r.converged = true;
      break;
    }
    best_k = k;
    best_ll = v;
  }
  if (opts.k_max <= 1) r.converged = true;
  r.dist = ErlangParams{best_k, best_k / mean_x};
  r.log_likelihood = best_ll;
  r.expected_phases = best_k;
  if (!r.converged) r.note = "shape reached k_max";
  return r;
}

// --------------------------------------------------------------- Erlang+c

double erlang_plus_c_log_likelihood(std::span<const double> x, int k, double lambda, double c) {
  if (!(lambda > 0.0) || !(c >= 0.0) || !std::isfinite(lambda) || !std::isfinite(c)) return kNegInf;
  const auto xs = as_array(x);
  if (c >= xs.minCoeff()) return kNegInf;
  const double n = static_cast<double>(x.size());
  const auto shifted = xs - c;
  const double log_term = k == 1 ? 0.0 : (k - 1) * shifted.log().sum();
  return n * (k * std::log(lambda) - std::lgamma(static_cast<double>(k))) + log_term - lambda * shifted.sum();
}

Eigen::Vector2d erlang_plus_c_gradient(std::span<const double> x, int k, double lambda, double c) {
  const auto shifted = as_array(x) - c;
  const double n = static_cast<double>(x.size());
  return {n * k / lambda - shifted.sum(), n * lambda - (k - 1) * shifted.inverse().sum()};
}

ErlangPlusCStart erlang_plus_c_initial(std::span<const double> x, int k) {
  const auto xs = as_array(x);
  const double c = 0.9 * xs.minCoeff();
  return {k / (xs.mean() - c), c};
}

double section_search(const std::function<double(double)>& h, int l, int steps) {
  const int points = 2 * l + 1;
  std::vector<double> hv(static_cast<std::size_t>(points));
  bool any_finite = false;
  for (int i = 0; i < points; ++i) {
    hv[static_cast<std::size_t>(i)] = h(static_cast<double>(i) / l - 1.0);
    any_finite = any_finite || std::isfinite(hv[static_cast<std::size_t>(i)]);
  }
  if (!any_finite) return std::numeric_limits<double>::quiet_NaN();

  // Smallest i in {2..2l} with h(u_{i-1}) > h(u_i) brackets the maximiser in
  // [u_{i-2}, u_i]. With no such i, h rises to the right end.
  double a = 1.0 - 1.0 / l;
  double b = 1.0;
  for (int i = 2; i <= 2 * l; ++i) {
    if (hv[static_cast<std::size_t>(i - 1)] > hv[static_cast<std::size_t>(i)]) {
      a = static_cast<double>(i - 2) / l - 1.0;
      b = static_cast<double>(i) / l - 1.0;
      break;
    }
  }

  double x1 = b - kGoldenRatio * (b - a);
  double x2 = a + kGoldenRatio * (b - a);
  double f1 = h(x1);
  double f2 = h(x2);
  for (int s = 0; s < steps; ++s) {
    if (f1 >= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - kGoldenRatio * (b - a);
      f1 = h(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + kGoldenRatio * (b - a);
      f2 = h(x2);
    }
  }
  return 0.5 * (a + b);
}

ErlangPlusCFixedK fit_erlang_plus_c_fixed_k(std::span<const double> x, int k, const FitOptions& opts,
                                            const AscentObserver& observer) {
  require_samples(x, 2, "Erlang+c fit");
  if (k < 1) throw FitError("Erlang+c fit: shape must be >= 1");
  const auto xs = as_array(x);
  const double n = static_cast<double>(x.size());
  const double min_x = xs.minCoeff();
  const double c_max = min_x - 1e-6 * min_x;

  auto [lambda, c] = erlang_plus_c_initial(x, k);
  double ll = erlang_plus_c_log_likelihood(x, k, lambda, c);

  ErlangPlusCFixedK out;
  double scale = 1.0;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    out.iterations = it;
    const Eigen::Vector2d g = erlang_plus_c_gradient(x, k, lambda, c);

    // Ascent along the gradient in coordinates scaled by the curvature of
    // each parameter; the raw (lambda, c) problem is too ill-conditioned for
    // a plain gradient step. For k = 1 the c-curvature vanishes and the step
    // is scaled to reach the support boundary at u = 1.
    const double curv_lambda = n * k / (lambda * lambda);
    const double curv_c = (k - 1) * (xs - c).square().inverse().sum();
    const double room = min_x - c;
    double step_c = curv_c > 0.0 ? 1.0 / curv_c : 0.0;
    if (g.y() != 0.0 && (step_c == 0.0 || std::abs(g.y()) * step_c > room)) step_c = room / std::abs(g.y());
    const Eigen::Vector2d direction(g.x() / curv_lambda, g.y() * step_c);

    bool accepted = false;
    double proposed_change = 0.0;
    double next_lambda = lambda, next_c = c, next_ll = ll, u = 0.0;
    for (int attempt = 0; attempt <= kMaxGradientHalvings; ++attempt) {
      const Eigen::Vector2d d = scale * direction;
      auto h = [&](double v) { return erlang_plus_c_log_likelihood(x, k, lambda + v * d.x(), c + v * d.y()); };
      u = section_search(h, opts.l, opts.line_search_steps);
      if (!std::isnan(u)) {
        next_lambda = lambda + u * d.x();
        next_c = std::min(c + u * d.y(), c_max);
        next_ll = erlang_plus_c_log_likelihood(x, k, next_lambda, next_c);
        proposed_change = std::max(std::abs(next_lambda - lambda) / lambda, std::abs(next_c - c) / min_x);
        if (std::isfinite(next_ll) && next_ll >= ll) {
          accepted = true;
          break;
        }
      }
      scale *= 0.5;
    }
    if (!accepted) {
      // Every retry failed to improve: either at the optimum to rounding
      // precision or stuck.
      out.converged = proposed_change < opts.tol;
      break;
    }

    const double change = std::max(std::abs(next_lambda - lambda) / lambda, std::abs(next_c - c) / min_x);
    lambda = next_lambda;
    c = next_c;
    ll = next_ll;
    if (observer) observer(it, lambda, c, ll);
    if (std::abs(u) > 1.0 - 2.0 / opts.l) scale *= 2.0;
    if (change < opts.tol) {
      out.converged = true;
      break;
    }
  }
  // The ascent approaches c = 0 only asymptotically; the boundary itself is
  // feasible and its optimum in lambda is closed-form.
  const double boundary_lambda = k / xs.mean();
  const double boundary_ll = erlang_plus_c_log_likelihood(x, k, boundary_lambda, 0.0);
  if (boundary_ll > ll) {
    lambda = boundary_lambda;
    c = 0.0;
    ll = boundary_ll;
    out.converged = true;
  }
  out.lambda = lambda;
  out.c = c;
  out.log_likelihood = ll;
  return out;
}

FitReport fit_erlang_plus_c(std::span<const double> x, const FitOptions& opts) {
  require_samples(x, 2, "Erlang+c fit");
  FitReport r;
  r.n = x.size();
  std::optional<ErlangPlusCFixedK> best;
  int best_k = 1;
  bool stopped_by_decrease = false;
  for (int k = 1; k <= opts.k_max; ++k) {
    auto fit = fit_erlang_plus_c_fixed_k(x, k, opts);
    r.iterations += fit.iterations;
    if (best && fit.log_likelihood < best->log_likelihood) {
      stopped_by_decrease = true;
      break;
    }
    best = fit;
    best_k = k;
  }
  r.dist = ErlangPlusCParams{best_k, best->lambda, best->c};
  r.log_likelihood = best->log_likelihood;
  r.expected_phases = best_k;
  r.converged = best->converged && (stopped_by_decrease || opts.k_max == 1);
  if (!best->converged) r.note = "ascent did not converge";
  else if (!r.converged) r.note = "shape reached k_max";
  return r;
}

// ------------------------------------------------------------ hyper-Erlang

EmResult em_hyper_erlang(std::span<const double> x, const HyperErlangParams& start, const FitOptions& opts,
                         std::vector<double>* trace) {
  const auto xs = as_array(x);
  const Eigen::ArrayXd log_x = xs.log();
  const auto m = static_cast<Eigen::Index>(start.branches.size());
  const auto n = static_cast<Eigen::Index>(x.size());

  Eigen::ArrayXd alpha(m), lambda(m), k(m), lgk(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto& b = start.branches[static_cast<std::size_t>(j)];
    alpha(j) = b.alpha;
    lambda(j) = b.lambda;
    k(j) = b.k;
    lgk(j) = std::lgamma(static_cast<double>(b.k));
  }

  Eigen::ArrayXXd resp(n, m);
  // E-step: fills resp with responsibilities, returns the log-likelihood.
  auto e_step = [&]() {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double base = (alpha(j) > 0.0 ? std::log(alpha(j)) : kNegInf) + k(j) * std::log(lambda(j)) - lgk(j);
      resp.col(j) = base + (k(j) - 1.0) * log_x - lambda(j) * xs;
    }
    const Eigen::ArrayXd row_max = resp.rowwise().maxCoeff();
    resp.colwise() -= row_max;
    resp = resp.exp();
    const Eigen::ArrayXd row_sum = resp.rowwise().sum();
    resp.colwise() /= row_sum;
    return (row_max + row_sum.log()).sum();
  };

  EmResult out;
  double ll = e_step();
  if (trace) trace->push_back(ll);
  for (int it = 1; it <= opts.em_max_iterations; ++it) {
    out.iterations = it;
    const Eigen::ArrayXd weight = resp.colwise().sum().transpose();
    const Eigen::ArrayXd weighted_x = (resp.colwise() * xs).colwise().sum().transpose();
    alpha = weight / static_cast<double>(n);
    for (Eigen::Index j = 0; j < m; ++j)
      if (weighted_x(j) > 0.0) lambda(j) = k(j) * weight(j) / weighted_x(j);
    const double next = e_step();
    if (trace) trace->push_back(next);
    const double gain = next - ll;
    ll = next;
    if (gain < opts.em_tol) {
      out.converged = true;
      break;
    }
  }

  out.params.branches.resize(static_cast<std::size_t>(m));
  const double total = alpha.sum();
  for (Eigen::Index j = 0; j < m; ++j)
    out.params.branches[static_cast<std::size_t>(j)] = {alpha(j) / total, static_cast<int>(k(j)), lambda(j)};
  out.log_likelihood = ll;
  return out;
}

HyperErlangParams hyper_erlang_initial(std::span<const double> x, int m) {
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  HyperErlangParams p;
  for (int j = 0; j < m; ++j) {
    const std::size_t lo = n * static_cast<std::size_t>(j) / static_cast<std::size_t>(m);
    const std::size_t hi = n * static_cast<std::size_t>(j + 1) / static_cast<std::size_t>(m);
    const auto block = Eigen::Map<const Eigen::ArrayXd>(sorted.data() + lo, static_cast<Eigen::Index>(hi - lo));
    const double mu = block.mean();
    const double var = block.size() > 1 ? (block - mu).square().sum() / static_cast<double>(block.size() - 1) : 0.0;
    const double k_moment = var > 0.0 ? std::round(mu * mu / var) : 1.0;
    const int k = static_cast<int>(std::clamp(k_moment, 1.0, 1e6));
    p.branches.push_back({static_cast<double>(hi - lo) / static_cast<double>(n), k, k / mu});
  }
  return p;
}

namespace {

double branch_mean(const HyperErlangBranch& b) { return b.k / b.lambda; }

// Start point for EM with new shapes: same weights and branch means.
HyperErlangParams reshaped(const HyperErlangParams& p, std::span<const int> shapes) {
  HyperErlangParams q = p;
  for (std::size_t j = 0; j < q.branches.size(); ++j) {
    const double mu = branch_mean(p.branches[j]);
    q.branches[j].k = shapes[j];
    q.branches[j].lambda = shapes[j] / mu;
    // A branch that EM emptied would stay empty; give it a foothold.
    q.branches[j].alpha = std::max(q.branches[j].alpha, 1e-3);
  }
  double total = 0.0;
  for (const auto& b : q.branches) total += b.alpha;
  for (auto& b : q.branches) b.alpha /= total;
  return q;
}

} // namespace

FitReport fit_hyper_erlang(std::span<const double> x, int m, const FitOptions& opts) {
  if (m < 1) throw FitError("hyper-Erlang fit: branch count must be >= 1");
  require_samples(x, static_cast<std::size_t>(5 * m), "hyper-Erlang fit");

  HyperErlangParams init = hyper_erlang_initial(x, m);
  for (auto& b : init.branches) {
    const double mu = branch_mean(b);
    b.k = std::min(b.k, opts.k_max);
    b.lambda = b.k / mu;
  }

  int total_iterations = 0;
  EmResult best = em_hyper_erlang(x, init, opts);
  total_iterations += best.iterations;

  std::vector<int> shapes;
  for (const auto& b : best.params.branches) shapes.push_back(b.k);

  for (std::size_t j = 0; j < shapes.size(); ++j) {
    double previous = kNegInf;
    for (int kj = 1; kj <= opts.k_max; ++kj) {
      std::vector<int> trial = shapes;
      trial[j] = kj;
      EmResult r = em_hyper_erlang(x, reshaped(best.params, trial), opts);
      total_iterations += r.iterations;
      if (r.log_likelihood > best.log_likelihood) best = r;
      if (!(r.log_likelihood > previous)) break;
      previous = r.log_likelihood;
    }
    shapes.clear();
    for (const auto& b : best.params.branches) shapes.push_back(b.k);
  }

  auto& branches = best.params.branches;
  const bool collapsed = std::any_of(branches.begin(), branches.end(),
                                     [](const HyperErlangBranch& b) { return b.alpha < kCollapsedAlpha; });
  if (collapsed && m > 1) {
    FitReport reduced = fit_hyper_erlang(x, m - 1, opts);
    reduced.iterations += total_iterations;
    reduced.note = "branch collapsed; refitted with " + std::to_string(m - 1) + " branches" +
                   (reduced.note.empty() ? "" : "; " + reduced.note);
    return reduced;
  }

  std::stable_sort(branches.begin(), branches.end(), [](const HyperErlangBranch& a, const HyperErlangBranch& b) {
    return branch_mean(a) < branch_mean(b);
  });

  FitReport r;
  r.n = x.size();
  r.dist = best.params;
  r.log_likelihood = best.log_likelihood;
  r.expected_phases = expected_phases(r.dist);
  r.iterations = total_iterations;
  r.converged = best.converged;
  if (!best.converged) r.note = "EM reached em_max_iterations";
  return r;
}

HyperErlangParams read_hyper_erlang_table(std::istream& in) {
  HyperErlangParams p;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::replace(line.begin(), line.end(), '\t', ' ');
    std::vector<double> values;
    for (const auto& tok : split(line, ' ')) {
      if (tok.empty()) continue;
      const auto v = parse_double(tok);
      if (!v) throw FitError("hyper-Erlang table line " + std::to_string(line_no) + ": not a number '" + tok + "'");
      values.push_back(*v);
    }
    if (values.empty()) continue;
    if (values.size() != 3 || values[1] < 1 || values[1] != std::floor(values[1]))
      throw FitError("hyper-Erlang table line " + std::to_string(line_no) + ": expected 'alpha k lambda'");
    p.branches.push_back({values[0], static_cast<int>(values[1]), values[2]});
  }
  if (p.branches.empty()) throw FitError("hyper-Erlang table has no branches");
  double total = 0.0;
  for (const auto& b : p.branches) total += b.alpha;
  if (std::abs(total - 1.0) > 1e-3) throw FitError("hyper-Erlang table alphas sum to " + format_double(total));
  // Printed tables carry rounding error in the weights.
  for (auto& b : p.branches) b.alpha /= total;
  check_params(p);
  return p;
}

} // namespace patchtime
