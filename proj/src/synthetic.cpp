#include "patchtime/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace patchtime {

namespace {
constexpr double kMetresPerSecondToMph = 2.2369362920544;
}

std::vector<AvlFix> generate_synthetic_trace(const RouteSpec& route, std::span<const PatchDistribution> truth,
                                             const SyntheticOptions& opts) {
  const auto n_inner = static_cast<std::size_t>(
      std::count_if(route.patches.begin(), route.patches.end(), [](const PatchSpec& p) { return !p.terminal; }));
  if (truth.size() != n_inner)
    throw IngestError("synthetic trace needs one truth distribution per non-terminal patch (got " +
                      std::to_string(truth.size()) + ", route has " + std::to_string(n_inner) + ")");
  if (opts.fix_interval <= 0) throw IngestError("fix_interval must be positive");

  const Polyline line(route.polyline);
  Rng rng(opts.seed);
  std::vector<AvlFix> out;

  for (std::size_t j = 0; j < opts.n_journeys; ++j) {
    char vid[32];
    std::snprintf(vid, sizeof vid, "SYN%05zu", j);
    const double t0 = std::floor(opts.first_departure + static_cast<double>(j) * opts.headway) +
                      static_cast<double>(rng.uniform_index(static_cast<std::uint64_t>(opts.fix_interval)));

    std::vector<double> boundary{t0};
    std::size_t truth_idx = 0;
    for (const auto& p : route.patches) {
      const double d = p.terminal ? opts.terminal_duration : sample(truth[truth_idx++], rng);
      boundary.push_back(boundary.back() + d);
    }

    std::size_t p = 0;
    for (double t = t0; t < boundary.back(); t += opts.fix_interval) {
      while (t >= boundary[p + 1]) ++p;
      const auto& patch = route.patches[p];
      const double dur = boundary[p + 1] - boundary[p];
      const double len = patch.d_end - patch.d_start;
      const double along = patch.d_start + (t - boundary[p]) / dur * len;
      const LatLon pos = line.point_at(along);
      const double speed = std::max(0.0, rng.normal(len / dur * kMetresPerSecondToMph, opts.speed_noise_mph));
      out.push_back({vid, t, pos.lat, pos.lon, speed, route.route_id});
    }
  }
  return out;
}

} // namespace patchtime
