#include "patchtime/pta.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <variant>

namespace patchtime {

const Location* Pta::find(const std::string& id) const {
  for (const auto& l : locations)
    if (l.id == id) return &l;
  return nullptr;
}

std::vector<std::int64_t> alpha_to_integer_weights(std::span<const double> alphas, int digits) {
  if (alphas.empty()) throw PtaError("no branch probabilities to convert");
  if (digits < 0 || digits > 15) throw PtaError("weight digits must be in [0, 15]");
  const double total = std::accumulate(alphas.begin(), alphas.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) throw PtaError("branch probabilities do not sum to 1");

  const double scale = std::pow(10.0, digits);
  std::vector<std::int64_t> w;
  w.reserve(alphas.size());
  for (double a : alphas) {
    const auto v = static_cast<std::int64_t>(std::llround(a * scale));
    if (v <= 0)
      throw PtaError("branch probability " + std::to_string(a) + " rounds to 0 at " + std::to_string(digits) +
                     " digits; use more digits");
    w.push_back(v);
  }
  std::int64_t g = 0;
  for (auto v : w) g = std::gcd(g, v);
  for (auto& v : w) v /= g;
  return w;
}

namespace {

template <class... Ts> struct overloaded : Ts... { using Ts::operator()...; };
template <class... Ts> overloaded(Ts...) -> overloaded<Ts...>;

class Builder {
public:
  explicit Builder(const BuildOptions& opts) : opts_(opts) {
    pta_.locations.push_back({"init", opts.initial_rate, true, false, false});
    exits_.push_back("init");
  }

  void add(std::size_t p, const PatchDistribution& dist) {
    check_params(dist);
    const std::string prefix = "p" + std::to_string(p);
    std::visit(overloaded{[&](const ErlangParams& e) { chain(prefix, e.k, e.lambda, {}, {}); },
                          [&](const ErlangPlusCParams& e) {
                            const std::string clock = "x" + std::to_string(p);
                            pta_.clocks.push_back(clock);
                            chain(prefix, e.k, e.lambda, clock, ClockGuard{clock, e.c});
                          },
                          [&](const HyperErlangParams& h) { hyper(prefix, h); }},
               dist);
  }

  Pta finish() {
    pta_.locations.push_back({"end", std::nullopt, false, true, false});
    connect("end", {});
    pta_.end_location = "end";
    return std::move(pta_);
  }

private:
  // Edges from every pending exit into `target`, applying the pending guard.
  void connect(const std::string& target, const std::optional<std::string>& reset) {
    for (const auto& from : exits_) pta_.edges.push_back({from, target, std::nullopt, pending_guard_, reset});
    exits_.clear();
    pending_guard_.reset();
  }

  void chain(const std::string& prefix, int k, double rate, const std::optional<std::string>& reset,
             const std::optional<ClockGuard>& first_guard) {
    for (int i = 0; i < k; ++i) {
      const std::string id = prefix + "_s" + std::to_string(i);
      pta_.locations.push_back({id, rate, false, false, false});
      connect(id, i == 0 ? reset : std::nullopt);
      exits_.push_back(id);
      if (i == 0) pending_guard_ = first_guard;
    }
  }

  void hyper(const std::string& prefix, const HyperErlangParams& h) {
    const std::string bp = prefix + "_bp";
    pta_.locations.push_back({bp, std::nullopt, false, false, true});
    connect(bp, {});

    std::vector<double> alphas;
    for (const auto& b : h.branches) alphas.push_back(b.alpha);
    const auto weights = alpha_to_integer_weights(alphas, opts_.weight_digits);

    std::vector<std::string> ends;
    for (std::size_t j = 0; j < h.branches.size(); ++j) {
      const auto& b = h.branches[j];
      std::string prev;
      for (int i = 0; i < b.k; ++i) {
        const std::string id = prefix + "_b" + std::to_string(j) + "_s" + std::to_string(i);
        pta_.locations.push_back({id, b.lambda, false, false, false});
        if (i == 0)
          pta_.edges.push_back({bp, id, weights[j], std::nullopt, std::nullopt});
        else
          pta_.edges.push_back({prev, id, std::nullopt, std::nullopt, std::nullopt});
        prev = id;
      }
      ends.push_back(prev);
    }
    exits_ = std::move(ends);
  }

  BuildOptions opts_;
  Pta pta_;
  std::vector<std::string> exits_;
  std::optional<ClockGuard> pending_guard_;
};

} // namespace

Pta build_pta(std::span<const PatchDistribution> patch_dists, const BuildOptions& opts) {
  if (patch_dists.empty()) throw PtaError("cannot build a route model without patches");
  if (!(opts.initial_rate > 0.0)) throw PtaError("initial rate must be positive");
  Builder b(opts);
  for (std::size_t p = 0; p < patch_dists.size(); ++p) b.add(p, patch_dists[p]);
  return b.finish();
}

std::vector<std::string> validate(const Pta& pta) {
  std::vector<std::string> v;
  std::map<std::string, const Location*> by_id;
  std::vector<std::string> initials, ends;
  for (const auto& l : pta.locations) {
    if (!by_id.emplace(l.id, &l).second) v.push_back("duplicate location id '" + l.id + "'");
    if (l.is_initial) initials.push_back(l.id);
    if (l.is_end) ends.push_back(l.id);
    if (l.is_branch_point && l.rate) v.push_back("branch point '" + l.id + "' has a rate");
    if (l.rate && !(*l.rate > 0.0 && std::isfinite(*l.rate))) v.push_back("location '" + l.id + "' has a non-positive rate");
    if (!l.is_branch_point && !l.is_end && !l.rate) v.push_back("location '" + l.id + "' has no exit rate");
  }
  auto join = [](const std::vector<std::string>& ids) {
    std::string s;
    for (const auto& id : ids) s += (s.empty() ? "" : ", ") + id;
    return s;
  };
  if (initials.size() != 1) v.push_back("expected exactly one initial location, found " + std::to_string(initials.size()) + (initials.empty() ? "" : ": " + join(initials)));
  if (ends.size() != 1) v.push_back("expected exactly one end location, found " + std::to_string(ends.size()) + (ends.empty() ? "" : ": " + join(ends)));
  if (ends.size() == 1 && pta.end_location != ends.front())
    v.push_back("end_location '" + pta.end_location + "' is not the location marked as end");

  const std::set<std::string> clocks(pta.clocks.begin(), pta.clocks.end());
  std::set<std::string> reset_clocks;
  std::map<std::string, std::vector<const Edge*>> out;
  for (const auto& e : pta.edges) {
    const bool known = by_id.count(e.from) && by_id.count(e.to);
    if (!by_id.count(e.from)) v.push_back("edge from unknown location '" + e.from + "'");
    if (!by_id.count(e.to)) v.push_back("edge to unknown location '" + e.to + "'");
    if (!known) continue;
    out[e.from].push_back(&e);
    const auto* src = by_id[e.from];
    if (e.weight && !src->is_branch_point) v.push_back("weighted edge " + e.from + " -> " + e.to + " does not leave a branch point");
    if (src->is_branch_point) {
      if (!e.weight) v.push_back("edge " + e.from + " -> " + e.to + " leaves a branch point without a weight");
      else if (*e.weight <= 0) v.push_back("edge " + e.from + " -> " + e.to + " has non-positive weight " + std::to_string(*e.weight));
      if (e.guard) v.push_back("edge " + e.from + " -> " + e.to + " leaves a branch point with a guard");
    }
    if (src->is_end) v.push_back("end location '" + e.from + "' has an outgoing edge");
    if (e.guard && !clocks.count(e.guard->clock)) v.push_back("guard uses undeclared clock '" + e.guard->clock + "'");
    if (e.guard && !(e.guard->bound >= 0.0 && std::isfinite(e.guard->bound)))
      v.push_back("guard on " + e.from + " -> " + e.to + " has an invalid bound");
    if (e.reset) {
      if (!clocks.count(*e.reset)) v.push_back("reset of undeclared clock '" + *e.reset + "'");
      reset_clocks.insert(*e.reset);
    }
  }
  for (const auto& e : pta.edges)
    if (e.guard && !reset_clocks.count(e.guard->clock))
      v.push_back("guard on " + e.from + " -> " + e.to + " uses clock '" + e.guard->clock + "' which is never reset");

  for (const auto& l : pta.locations) {
    const auto n_out = out.count(l.id) ? out[l.id].size() : 0;
    if (!l.is_end && n_out == 0) v.push_back("location '" + l.id + "' has no outgoing edge");
    if (l.rate && n_out > 1) v.push_back("rated location '" + l.id + "' has " + std::to_string(n_out) + " outgoing edges");
  }

  // Reachability of end and acyclicity from the initial location.
  if (initials.size() == 1 && ends.size() == 1) {
    std::map<std::string, int> state; // 0 new, 1 on stack, 2 done
    bool cycle = false;
    std::function<void(const std::string&)> dfs = [&](const std::string& id) {
      state[id] = 1;
      if (out.count(id))
        for (const auto* e : out[id]) {
          const int s = state[e->to];
          if (s == 1) cycle = true;
          else if (s == 0) dfs(e->to);
        }
      state[id] = 2;
    };
    dfs(initials.front());
    if (cycle) v.push_back("model contains a cycle");
    if (state[ends.front()] != 2) v.push_back("end location '" + ends.front() + "' is unreachable from the initial location");
  }
  return v;
}

std::optional<double> analytic_mean_time(const Pta& pta) {
  if (!validate(pta).empty()) return std::nullopt;
  std::map<std::string, const Location*> by_id;
  for (const auto& l : pta.locations) by_id[l.id] = &l;
  std::map<std::string, std::vector<const Edge*>> out, in;
  for (const auto& e : pta.edges) {
    out[e.from].push_back(&e);
    in[e.to].push_back(&e);
  }
  // A guard adds its full bound only if every way into the guarded location
  // resets that clock, so the clock reads 0 on arrival.
  for (const auto& e : pta.edges) {
    if (!e.guard) continue;
    for (const auto* incoming : in[e.from])
      if (incoming->reset != e.guard->clock) return std::nullopt;
  }
  std::map<std::string, double> memo;
  std::function<double(const std::string&)> remaining = [&](const std::string& id) -> double {
    if (auto it = memo.find(id); it != memo.end()) return it->second;
    const auto* loc = by_id.at(id);
    double r = 0.0;
    if (!loc->is_end) {
      const auto& edges = out.at(id);
      if (loc->is_branch_point) {
        double total = 0.0;
        for (const auto* e : edges) total += static_cast<double>(*e->weight);
        for (const auto* e : edges) r += static_cast<double>(*e->weight) / total * remaining(e->to);
      } else {
        const auto* e = edges.front();
        r = 1.0 / *loc->rate + (e->guard ? e->guard->bound : 0.0) + remaining(e->to);
      }
    }
    memo[id] = r;
    return r;
  };
  for (const auto& l : pta.locations)
    if (l.is_initial) return remaining(l.id);
  return std::nullopt;
}

void to_json(nlohmann::json& j, const Pta& pta) {
  auto locs = nlohmann::json::array();
  for (const auto& l : pta.locations) {
    nlohmann::json lj{{"id", l.id}};
    if (l.rate) lj["rate"] = *l.rate;
    if (l.is_initial) lj["initial"] = true;
    if (l.is_end) lj["end"] = true;
    if (l.is_branch_point) lj["branch_point"] = true;
    locs.push_back(lj);
  }
  auto edges = nlohmann::json::array();
  for (const auto& e : pta.edges) {
    nlohmann::json ej{{"from", e.from}, {"to", e.to}};
    if (e.weight) ej["weight"] = *e.weight;
    if (e.guard) ej["guard"] = {{"clock", e.guard->clock}, {"bound", e.guard->bound}};
    if (e.reset) ej["reset"] = *e.reset;
    edges.push_back(ej);
  }
  j = nlohmann::json{{"locations", locs}, {"edges", edges}, {"clocks", pta.clocks}, {"end_location", pta.end_location}};
}

void from_json(const nlohmann::json& j, Pta& pta) {
  pta = Pta{};
  for (const auto& lj : j.at("locations")) {
    Location l;
    l.id = lj.at("id").get<std::string>();
    if (lj.contains("rate")) l.rate = lj.at("rate").get<double>();
    l.is_initial = lj.value("initial", false);
    l.is_end = lj.value("end", false);
    l.is_branch_point = lj.value("branch_point", false);
    pta.locations.push_back(std::move(l));
  }
  for (const auto& ej : j.at("edges")) {
    Edge e;
    e.from = ej.at("from").get<std::string>();
    e.to = ej.at("to").get<std::string>();
    if (ej.contains("weight")) e.weight = ej.at("weight").get<std::int64_t>();
    if (ej.contains("guard"))
      e.guard = ClockGuard{ej.at("guard").at("clock").get<std::string>(), ej.at("guard").at("bound").get<double>()};
    if (ej.contains("reset")) e.reset = ej.at("reset").get<std::string>();
    pta.edges.push_back(std::move(e));
  }
  pta.clocks = j.at("clocks").get<std::vector<std::string>>();
  pta.end_location = j.at("end_location").get<std::string>();
}

} // namespace patchtime
