#pragma once

#include "patchtime/distributions.hpp"
#include "patchtime/ingest.hpp"
#include "patchtime/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

namespace patchtime::fixtures {

/// Straight eastbound route: a 300 m terminal, the given patch lengths, a
/// 300 m terminal.
inline RouteSpec straight_route(const std::vector<double>& lengths, std::vector<bool> affected = {},
                                std::int64_t timetable = 1680) {
  constexpr double kLat = 55.95;
  constexpr double kLon = -3.2;
  constexpr double kTerminal = 300.0;
  const double m_per_deg_lon = 6371008.8 * M_PI / 180.0 * std::cos(kLat * M_PI / 180.0);
  double total = 2 * kTerminal;
  for (double l : lengths) total += l;

  RouteSpec r;
  r.route_id = "T1";
  r.timetable_duration = timetable;
  r.polyline = {{kLat, kLon}, {kLat, kLon + total / m_per_deg_lon}};
  double pos = 0.0;
  r.patches.push_back({0, "start", 0.0, kTerminal, false, true, false});
  pos = kTerminal;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    const bool a = i < affected.size() && affected[i];
    r.patches.push_back({i + 1, "p" + std::to_string(i + 1), pos, pos + lengths[i], a, false, false});
    pos += lengths[i];
  }
  r.patches.push_back({lengths.size() + 1, "finish", pos, total, false, true, false});
  return r;
}

inline std::vector<double> draw(const PatchDistribution& d, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = sample(d, rng);
  return x;
}

/// Two well-separated Erlang modes.
inline HyperErlangParams bimodal_truth(std::uint64_t variant) {
  const double fast = 90.0 + 10.0 * static_cast<double>(variant % 5);
  const double slow = 260.0 + 20.0 * static_cast<double>(variant % 4);
  const double alpha = 0.55 + 0.05 * static_cast<double>(variant % 3);
  return {{{alpha, 8, 8.0 / fast}, {1.0 - alpha, 6, 6.0 / slow}}};
}

inline double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const double f = pos - static_cast<double>(i);
  return i + 1 < v.size() ? v[i] * (1.0 - f) + v[i + 1] * f : v[i];
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("patchtime_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

} // namespace patchtime::fixtures

namespace patchtime::fixtures {

inline TimeWindow whole_window() { return {0.0, 200000.0, "all"}; }

} // namespace patchtime::fixtures
