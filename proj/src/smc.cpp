#include "patchtime/smc.hpp"

#include "patchtime/format.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <thread>

namespace patchtime {

void check_query(const Query& q) {
  const bool needs_deadline = q.kind == QueryKind::prob_reach_by_deadline;
  if (needs_deadline != q.deadline.has_value())
    throw std::invalid_argument(needs_deadline ? "probability query needs a deadline"
                                               : "only probability queries take a deadline");
  if (q.deadline && !std::isfinite(*q.deadline)) throw std::invalid_argument("deadline must be finite");
}

Query parse_query(const std::string& text) {
  const auto t = std::string(trim(text));
  if (t == "mean") return {QueryKind::mean_time_to_end, std::nullopt, Comparison::at_most};
  if (t == "hist" || t == "histogram") return {QueryKind::histogram, std::nullopt, Comparison::at_most};
  auto number = [&](std::size_t offset) {
    const auto v = parse_double(std::string_view(t).substr(offset));
    if (!v) throw std::invalid_argument("bad deadline in query '" + text + "'");
    return *v;
  };
  if (t.rfind("prob<=", 0) == 0) return Query::reach_by(number(6));
  if (t.rfind("prob>", 0) == 0) return Query::later_than(number(5));
  throw std::invalid_argument("unknown query '" + text + "' (expected prob<=D, prob>D, mean or hist)");
}

std::pair<double, double> clopper_pearson(std::uint64_t successes, std::uint64_t trials, double confidence) {
  if (trials == 0) throw std::invalid_argument("Clopper-Pearson interval needs at least one trial");
  if (successes > trials) throw std::invalid_argument("more successes than trials");
  const double alpha = 1.0 - confidence;
  const auto x = static_cast<double>(successes);
  const auto n = static_cast<double>(trials);
  const double lo = successes == 0 ? 0.0 : boost::math::ibeta_inv(x, n - x + 1.0, alpha / 2.0);
  const double hi = successes == trials ? 1.0 : boost::math::ibeta_inv(x + 1.0, n - x, 1.0 - alpha / 2.0);
  return {lo, hi};
}

// ------------------------------------------------------------ simulation

CompiledPta::CompiledPta(const Pta& pta) {
  if (const auto v = validate(pta); !v.empty()) {
    std::string msg = "invalid model:";
    for (const auto& s : v) msg += "\n  " + s;
    throw PtaError(msg);
  }
  std::map<std::string, std::uint32_t> index;
  for (const auto& l : pta.locations) index.emplace(l.id, static_cast<std::uint32_t>(index.size()));
  std::map<std::string, int> clock_index;
  for (const auto& c : pta.clocks) clock_index.emplace(c, static_cast<int>(clock_index.size()));
  n_clocks_ = clock_index.size();

  std::vector<std::vector<const Edge*>> out(pta.locations.size());
  for (const auto& e : pta.edges) out[index.at(e.from)].push_back(&e);

  nodes_.resize(pta.locations.size());
  for (std::size_t i = 0; i < pta.locations.size(); ++i) {
    const auto& l = pta.locations[i];
    auto& n = nodes_[i];
    n.rate = l.rate.value_or(0.0);
    n.is_branch = l.is_branch_point;
    n.is_end = l.is_end;
    if (l.is_initial) initial_ = static_cast<std::uint32_t>(i);
    n.first_step = static_cast<std::uint32_t>(steps_.size());
    for (const auto* e : out[i]) {
      Step s;
      s.target = index.at(e->to);
      if (e->weight) n.total_weight += static_cast<std::uint64_t>(*e->weight);
      s.cumulative_weight = n.total_weight;
      if (e->guard) {
        s.guard_clock = clock_index.at(e->guard->clock);
        s.guard_bound = e->guard->bound;
      }
      if (e->reset) s.reset_clock = clock_index.at(*e->reset);
      steps_.push_back(s);
    }
    n.n_steps = static_cast<std::uint32_t>(steps_.size()) - n.first_step;
  }
}

double CompiledPta::simulate_run(Rng& rng) const {
  // Clocks are stored as the global time of their last reset.
  double reset_at[64];
  std::vector<double> reset_heap;
  double* resets = reset_at;
  if (n_clocks_ > 64) {
    reset_heap.assign(n_clocks_, 0.0);
    resets = reset_heap.data();
  } else {
    std::fill(reset_at, reset_at + n_clocks_, 0.0);
  }

  double t = 0.0;
  std::uint32_t cur = initial_;
  while (!nodes_[cur].is_end) {
    const Node& n = nodes_[cur];
    const Step* step = &steps_[n.first_step];
    if (n.is_branch) {
      const std::uint64_t r = rng.uniform_index(n.total_weight);
      while (r >= step->cumulative_weight) ++step;
    } else {
      // A guarded exit is enabled once the clock reaches its bound; the
      // exponential delay runs from that moment.
      double enabled_after = 0.0;
      if (step->guard_clock >= 0)
        enabled_after = std::max(0.0, step->guard_bound - (t - resets[step->guard_clock]));
      t += enabled_after + rng.exponential(n.rate);
    }
    if (step->reset_clock >= 0) resets[step->reset_clock] = t;
    cur = step->target;
  }
  return t;
}

double simulate_run(const Pta& pta, Rng& rng) { return CompiledPta(pta).simulate_run(rng); }

namespace {

unsigned worker_count(const SmcOptions& opts) {
  if (opts.workers > 0) return opts.workers;
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs batches [first, first + count) in parallel; fn(batch_index, rng, runs)
// fills result slot batch - first.
template <class Result, class Fn>
std::vector<Result> run_batches(std::uint64_t first, std::uint64_t count, std::uint64_t total_runs,
                                const SmcOptions& opts, Fn fn) {
  std::vector<Result> results(count);
  auto work = [&](std::uint64_t slot) {
    const std::uint64_t b = first + slot;
    const std::uint64_t begin = b * opts.batch;
    const std::uint64_t runs = std::min(opts.batch, total_runs - begin);
    Rng rng = Rng::substream(opts.seed, b);
    results[slot] = fn(rng, runs);
  };
  const unsigned workers = std::min<std::uint64_t>(worker_count(opts), count);
  if (workers <= 1) {
    for (std::uint64_t s = 0; s < count; ++s) work(s);
    return results;
  }
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::uint64_t s = w; s < count; s += workers) work(s);
    });
  for (auto& th : pool) th.join();
  return results;
}

std::uint64_t planned_runs(const SmcOptions& opts) { return opts.fixed_runs.value_or(opts.max_runs); }

void check_options(const SmcOptions& opts) {
  if (!(opts.confidence > 0.0 && opts.confidence < 1.0)) throw std::invalid_argument("confidence must be in (0, 1)");
  if (!(opts.half_width > 0.0)) throw std::invalid_argument("half_width must be positive");
  if (opts.batch == 0) throw std::invalid_argument("batch size must be positive");
  if (planned_runs(opts) == 0) throw std::invalid_argument("at least one run is required");
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

} // namespace

std::vector<double> simulate_times(const CompiledPta& model, std::uint64_t n_runs, const SmcOptions& opts) {
  if (opts.batch == 0) throw std::invalid_argument("batch size must be positive");
  const std::uint64_t n_batches = (n_runs + opts.batch - 1) / opts.batch;
  auto parts = run_batches<std::vector<double>>(0, n_batches, n_runs, opts, [&](Rng& rng, std::uint64_t runs) {
    std::vector<double> v(runs);
    for (auto& t : v) t = model.simulate_run(rng);
    return v;
  });
  std::vector<double> out;
  out.reserve(n_runs);
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

SmcEstimate estimate_probability(const Pta& pta, const Query& query, const SmcOptions& opts) {
  check_query(query);
  if (query.kind != QueryKind::prob_reach_by_deadline)
    throw std::invalid_argument("estimate_probability needs a probability query");
  check_options(opts);
  const auto start = std::chrono::steady_clock::now();
  const CompiledPta model(pta);
  const double deadline = *query.deadline;
  const bool at_most = query.comparison == Comparison::at_most;

  const std::uint64_t total = planned_runs(opts);
  const std::uint64_t n_batches = (total + opts.batch - 1) / opts.batch;
  const std::uint64_t round = worker_count(opts);

  SmcEstimate est;
  est.confidence = opts.confidence;
  std::uint64_t successes = 0;
  bool done = false;
  for (std::uint64_t b = 0; b < n_batches && !done; b += round) {
    const std::uint64_t count = std::min(round, n_batches - b);
    auto hits = run_batches<std::uint64_t>(b, count, total, opts, [&](Rng& rng, std::uint64_t runs) {
      std::uint64_t h = 0;
      for (std::uint64_t i = 0; i < runs; ++i) {
        const double t = model.simulate_run(rng);
        h += at_most ? (t <= deadline) : (t > deadline);
      }
      return h;
    });
    // Fold in batch order so the stopping point is independent of `round`.
    for (std::uint64_t s = 0; s < count; ++s) {
      successes += hits[s];
      est.runs = std::min(total, (b + s + 1) * opts.batch);
      if (!opts.fixed_runs) {
        const auto [lo, hi] = clopper_pearson(successes, est.runs, opts.confidence);
        if ((hi - lo) / 2.0 <= opts.half_width) {
          done = true;
          break;
        }
      }
    }
  }
  const auto [lo, hi] = clopper_pearson(successes, est.runs, opts.confidence);
  est.point = static_cast<double>(successes) / static_cast<double>(est.runs);
  est.ci_low = lo;
  est.ci_high = hi;
  est.width_met = opts.fixed_runs.has_value() || (hi - lo) / 2.0 <= opts.half_width;
  est.wall_time = seconds_since(start);
  return est;
}

SmcEstimate estimate_mean(const Pta& pta, const SmcOptions& opts) {
  check_options(opts);
  const auto start = std::chrono::steady_clock::now();
  const CompiledPta model(pta);
  const double z =
      boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 + opts.confidence / 2.0);

  struct Moments {
    double n = 0.0, mean = 0.0, m2 = 0.0;
  };
  const std::uint64_t total = planned_runs(opts);
  const std::uint64_t n_batches = (total + opts.batch - 1) / opts.batch;
  const std::uint64_t round = worker_count(opts);

  Moments acc;
  SmcEstimate est;
  est.confidence = opts.confidence;
  bool done = false;
  auto half_width = [&] { return acc.n > 1 ? z * std::sqrt(acc.m2 / (acc.n - 1.0) / acc.n) : INFINITY; };
  for (std::uint64_t b = 0; b < n_batches && !done; b += round) {
    const std::uint64_t count = std::min(round, n_batches - b);
    auto parts = run_batches<Moments>(b, count, total, opts, [&](Rng& rng, std::uint64_t runs) {
      Moments m;
      for (std::uint64_t i = 0; i < runs; ++i) {
        const double t = model.simulate_run(rng);
        m.n += 1.0;
        const double d = t - m.mean;
        m.mean += d / m.n;
        m.m2 += d * (t - m.mean);
      }
      return m;
    });
    for (std::uint64_t s = 0; s < count; ++s) {
      const auto& p = parts[s];
      const double n = acc.n + p.n;
      const double d = p.mean - acc.mean;
      acc.mean += d * p.n / n;
      acc.m2 += p.m2 + d * d * acc.n * p.n / n;
      acc.n = n;
      est.runs = static_cast<std::uint64_t>(acc.n);
      if (!opts.fixed_runs && b + s >= 1 && half_width() <= opts.mean_rel_half_width * std::abs(acc.mean)) {
        done = true;
        break;
      }
    }
  }
  const double hw = acc.n > 1 ? half_width() : 0.0;
  est.point = acc.mean;
  est.ci_low = acc.mean - hw;
  est.ci_high = acc.mean + hw;
  est.width_met = opts.fixed_runs.has_value() || hw <= opts.mean_rel_half_width * std::abs(acc.mean);
  est.wall_time = seconds_since(start);
  return est;
}

std::uint64_t Histogram::total() const {
  std::uint64_t s = 0;
  for (auto c : counts) s += c;
  return s;
}

Histogram make_histogram(std::span<const double> times, double bin_width) {
  if (!(bin_width > 0.0)) throw std::invalid_argument("histogram bin width must be positive");
  Histogram h;
  h.bin_width = bin_width;
  for (double t : times) {
    const auto bin = static_cast<std::size_t>(std::floor(std::max(0.0, t) / bin_width));
    if (bin >= h.counts.size()) h.counts.resize(bin + 1, 0);
    ++h.counts[bin];
  }
  return h;
}

Histogram journey_histogram(const Pta& pta, std::uint64_t n_runs, double bin_width, const SmcOptions& opts) {
  const CompiledPta model(pta);
  const auto times = simulate_times(model, n_runs, opts);
  return make_histogram(times, bin_width);
}

OnTimeReport on_time_report(const Pta& pta, double timetable_duration, double early_margin, double late_margin,
                            const SmcOptions& opts) {
  if (early_margin < 0.0 || late_margin < 0.0) throw std::invalid_argument("on-time margins must be non-negative");
  if (early_margin >= timetable_duration || late_margin >= timetable_duration)
    throw std::invalid_argument("on-time margins must be smaller than the timetabled duration");
  OnTimeReport r;
  r.early_deadline = timetable_duration - early_margin;
  r.late_deadline = timetable_duration + late_margin;
  r.p_too_early = estimate_probability(pta, Query::reach_by(r.early_deadline), opts);
  r.p_too_late = estimate_probability(pta, Query::later_than(r.late_deadline), opts);
  return r;
}

std::string query_formula(const Query& q, const std::string& process) {
  check_query(q);
  if (q.kind != QueryKind::prob_reach_by_deadline)
    throw std::invalid_argument("only probability queries have an UPPAAL formula");
  // "exceeds" is the complement of the same reachability formula.
  return "Pr[<=" + format_fixed(*q.deadline) + "] (<> " + process + ".end)";
}

std::string uppaal_estimate_line(const SmcEstimate& e, const std::string& process) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "(%llu runs) Pr(<> %s.end) in [%g,%g] with confidence %g",
                static_cast<unsigned long long>(e.runs), process.c_str(), e.ci_low, e.ci_high, e.confidence);
  return buf;
}

} // namespace patchtime
