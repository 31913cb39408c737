#include "patchtime/ingest.hpp"

#include "patchtime/format.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <tuple>
#include <unordered_map>

namespace patchtime {

// ------------------------------------------------------------ format utils

std::string format_decimals(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::optional<double> parse_double(std::string_view text) {
  text = trim(text);
  if (text.empty()) return std::nullopt;
  if (text.front() == '+') text.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r' || s.front() == '\n'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// ---------------------------------------------------------------- enums

std::string to_string(Scenario s) { return s == Scenario::baseline ? "baseline" : "speed_limited"; }

Scenario scenario_from_string(const std::string& s) {
  if (s == "baseline") return Scenario::baseline;
  if (s == "speed_limited") return Scenario::speed_limited;
  throw IngestError("unknown scenario '" + s + "'");
}

std::string to_string(Direction d) { return d == Direction::forward ? "forward" : "reverse"; }

// ---------------------------------------------------------------- parsing

std::optional<double> parse_timestamp(const std::string& text) {
  const auto parts = split(text, ':');
  if (parts.size() != 3) return std::nullopt;
  int hms[3];
  for (int i = 0; i < 3; ++i) {
    const auto& p = parts[i];
    if (p.empty() || p.size() > 2) return std::nullopt;
    auto [ptr, ec] = std::from_chars(p.data(), p.data() + p.size(), hms[i]);
    if (ec != std::errc() || ptr != p.data() + p.size() || hms[i] < 0) return std::nullopt;
  }
  if (hms[0] > 26 || hms[1] > 59 || hms[2] > 59) return std::nullopt;
  double t = hms[0] * 3600.0 + hms[1] * 60.0 + hms[2];
  if (t < kOperatingDayStart) t += 86400.0;
  return t;
}

std::string format_timestamp(double seconds) {
  const auto total = static_cast<long long>(std::llround(seconds));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%02lld:%02lld:%02lld", total / 3600, (total / 60) % 60, total % 60);
  return buf;
}

AvlParseResult parse_avl(std::istream& in, const std::string& route_id) {
  AvlParseResult result;
  std::string line;
  // Skip leading blank lines; an empty file is an empty trace.
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) {
      have_header = true;
      break;
    }
  }
  if (!have_header) return result;

  const auto header = split(line, ',');
  const char* required[] = {"vehicle_id", "timestamp", "lat", "lon", "speed_mph"};
  std::size_t col[5];
  for (int i = 0; i < 5; ++i) {
    const auto it = std::find(header.begin(), header.end(), required[i]);
    if (it == header.end()) throw IngestError(std::string("AVL header is missing column '") + required[i] + "'");
    col[i] = static_cast<std::size_t>(it - header.begin());
  }

  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != header.size()) {
      ++result.skipped_rows;
      continue;
    }
    const auto ts = parse_timestamp(fields[col[1]]);
    const auto lat = parse_double(fields[col[2]]);
    const auto lon = parse_double(fields[col[3]]);
    const auto speed = parse_double(fields[col[4]]);
    if (fields[col[0]].empty() || !ts || !lat || !lon || !speed || *speed < 0.0) {
      ++result.skipped_rows;
      continue;
    }
    result.fixes.push_back({fields[col[0]], *ts, *lat, *lon, *speed, route_id});
  }

  std::stable_sort(result.fixes.begin(), result.fixes.end(), [](const AvlFix& a, const AvlFix& b) {
    return std::tie(a.vehicle_id, a.timestamp) < std::tie(b.vehicle_id, b.timestamp);
  });
  const auto last = std::unique(result.fixes.begin(), result.fixes.end(), [](const AvlFix& a, const AvlFix& b) {
    return a.vehicle_id == b.vehicle_id && a.timestamp == b.timestamp;
  });
  result.duplicate_timestamps = static_cast<std::size_t>(result.fixes.end() - last);
  result.fixes.erase(last, result.fixes.end());
  return result;
}

void write_avl_csv(std::ostream& out, std::span<const AvlFix> fixes) {
  out << "vehicle_id,timestamp,lat,lon,speed_mph\n";
  for (const auto& f : fixes) {
    out << f.vehicle_id << ',' << format_timestamp(f.timestamp) << ',' << format_decimals(f.lat, 7) << ','
        << format_decimals(f.lon, 7) << ',' << format_decimals(f.speed_mph, 2) << '\n';
  }
}

// ------------------------------------------------------------ assignment

std::optional<std::size_t> patch_at(const RouteSpec& route, double along) {
  for (const auto& p : route.patches)
    if (along >= p.d_start && along < p.d_end) return p.index;
  if (!route.patches.empty() && along >= route.patches.back().d_end &&
      along <= route.patches.back().d_end + 1e-9)
    return route.patches.back().index;
  return std::nullopt;
}

std::vector<AssignedFix> assign_patches(std::span<const AvlFix> fixes, const RouteSpec& route, double snap_radius) {
  const Polyline line(route.polyline);
  std::vector<AssignedFix> out;
  out.reserve(fixes.size());
  for (const auto& f : fixes) {
    const auto proj = line.project({f.lat, f.lon});
    AssignedFix a{f, std::nullopt, proj.along, proj.offset};
    if (proj.offset <= snap_radius) a.patch = patch_at(route, proj.along);
    out.push_back(std::move(a));
  }
  return out;
}

// ------------------------------------------------------------ crossings

namespace {

struct OpenCrossing {
  std::size_t patch = 0;
  std::size_t entry = 0; ///< index of the first fix inside the patch
  bool entered_from_earlier_patch = false;
  bool gap = false;
  std::vector<double> speeds;
};

} // namespace

ExtractionResult extract_crossings(std::span<const AssignedFix> assigned, const RouteSpec& route,
                                   const TimeWindow& window, double gap_threshold) {
  ExtractionResult result;
  auto& stats = result.stats;

  // Group per vehicle, preserving first-appearance order.
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<const AssignedFix*>> by_vehicle;
  for (const auto& a : assigned) {
    auto [it, inserted] = by_vehicle.try_emplace(a.fix.vehicle_id);
    if (inserted) order.push_back(a.fix.vehicle_id);
    it->second.push_back(&a);
  }

  auto is_terminal = [&](std::size_t p) { return route.patches.at(p).terminal; };

  for (const auto& vid : order) {
    auto& seq = by_vehicle[vid];
    std::stable_sort(seq.begin(), seq.end(),
                     [](const AssignedFix* a, const AssignedFix* b) { return a->fix.timestamp < b->fix.timestamp; });

    std::optional<OpenCrossing> open;

    auto abandon = [&](bool regression) {
      if (!open) return;
      if (is_terminal(open->patch))
        ++stats.terminal;
      else if (regression && open->entered_from_earlier_patch)
        ++stats.regression;
      else
        ++stats.partial;
      open.reset();
    };

    for (std::size_t i = 0; i < seq.size(); ++i) {
      const auto& a = *seq[i];
      if (!a.patch) {
        abandon(false);
        continue;
      }
      const std::size_t p = *a.patch;
      if (!open) {
        open = OpenCrossing{p, i, false, false, {a.fix.speed_mph}};
        continue;
      }
      if (a.fix.timestamp - seq[i - 1]->fix.timestamp > gap_threshold && p >= open->patch) open->gap = true;

      if (p == open->patch) {
        open->speeds.push_back(a.fix.speed_mph);
        continue;
      }
      if (p < open->patch) {
        abandon(true);
        open = OpenCrossing{p, i, false, false, {a.fix.speed_mph}};
        continue;
      }

      // p > open->patch: the open crossing ends at this fix.
      const auto& entry_fix = seq[open->entry]->fix;
      if (is_terminal(open->patch)) {
        ++stats.terminal;
      } else if (!open->entered_from_earlier_patch) {
        ++stats.partial;
      } else if (open->gap) {
        ++stats.gap;
      } else if (!(entry_fix.timestamp >= window.start && entry_fix.timestamp < window.end)) {
        ++stats.outside_window;
      } else {
        ++stats.kept;
        CrossingSample s{open->patch, a.fix.timestamp - entry_fix.timestamp, vid, entry_fix.timestamp,
                         Scenario::baseline};
        result.crossings.push_back({std::move(s), std::move(open->speeds)});
      }
      // Patches jumped over without a single fix cannot be timed.
      for (std::size_t skipped = open->patch + 1; skipped < p; ++skipped) {
        if (is_terminal(skipped))
          ++stats.terminal;
        else
          ++stats.partial;
      }
      open = OpenCrossing{p, i, true, false, {a.fix.speed_mph}};
    }
    abandon(false);
  }

  std::sort(result.crossings.begin(), result.crossings.end(), [](const Crossing& a, const Crossing& b) {
    return std::tie(a.sample.patch_index, a.sample.entry_timestamp, a.sample.vehicle_id) <
           std::tie(b.sample.patch_index, b.sample.entry_timestamp, b.sample.vehicle_id);
  });
  return result;
}

// ------------------------------------------------------------- cleaning

CleaningResult clean_outliers(std::span<const CrossingSample> samples, const CleaningOptions& opts) {
  CleaningResult result;
  std::map<std::pair<std::size_t, Scenario>, std::vector<double>> groups;
  for (const auto& s : samples) groups[{s.patch_index, s.scenario}].push_back(s.duration);

  std::map<std::pair<std::size_t, Scenario>, GroupThreshold> thresholds;
  for (auto& [key, values] : groups) {
    GroupThreshold g;
    g.patch_index = key.first;
    g.scenario = key.second;
    g.n = values.size();
    if (values.size() < 2) {
      g.too_small = true;
      result.warning = true;
    } else {
      std::vector<double> sorted = values;
      std::sort(sorted.begin(), sorted.end());
      const std::size_t n = sorted.size();
      g.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
      double m = 0.0;
      for (double v : values) m += v;
      m /= static_cast<double>(n);
      double ss = 0.0;
      for (double v : values) ss += (v - m) * (v - m);
      g.stddev = std::sqrt(ss / static_cast<double>(n - 1));
      g.upper = g.median + opts.sd_multiplier * g.stddev;
    }
    thresholds[key] = g;
    result.groups.push_back(g);
  }

  for (const auto& s : samples) {
    const auto& g = thresholds.at({s.patch_index, s.scenario});
    const bool keep = g.too_small || (s.duration >= opts.floor_seconds && s.duration <= g.upper);
    (keep ? result.kept : result.discarded).push_back(s);
  }
  return result;
}

// ---------------------------------------------------------- speed limit

double apply_speed_limit(std::span<const double> speeds_mph, double base_duration) {
  double extra = 0.0;
  for (double s : speeds_mph)
    if (s > kSpeedLimitMph) extra += (s - kSpeedLimitMph) / kSpeedLimitMph * kFixPeriodSeconds;
  return base_duration + extra;
}

double apply_speed_limit(std::span<const AvlFix> fixes, double base_duration) {
  std::vector<double> speeds;
  speeds.reserve(fixes.size());
  for (const auto& f : fixes) speeds.push_back(f.speed_mph);
  return apply_speed_limit(speeds, base_duration);
}

std::vector<CrossingSample> baseline_samples(std::span<const Crossing> crossings) {
  std::vector<CrossingSample> out;
  out.reserve(crossings.size());
  for (const auto& c : crossings) {
    out.push_back(c.sample);
    out.back().scenario = Scenario::baseline;
  }
  return out;
}

std::vector<CrossingSample> speed_limited_samples(std::span<const Crossing> crossings, const RouteSpec& route) {
  std::vector<CrossingSample> out;
  out.reserve(crossings.size());
  for (const auto& c : crossings) {
    CrossingSample s = c.sample;
    s.scenario = Scenario::speed_limited;
    if (route.patches.at(s.patch_index).limit_affected) s.duration = apply_speed_limit(c.speeds_mph, s.duration);
    out.push_back(std::move(s));
  }
  return out;
}

// ------------------------------------------------------ crossing CSV

void write_crossings_csv(std::ostream& out, std::span<const CrossingSample> samples) {
  out << "patch_index,duration_s,vehicle_id,entry_ts,scenario\n";
  for (const auto& s : samples) {
    out << s.patch_index << ',' << format_double(s.duration) << ',' << s.vehicle_id << ','
        << format_double(s.entry_timestamp) << ',' << to_string(s.scenario) << '\n';
  }
}

std::vector<CrossingSample> read_crossings_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) return {};
  const auto header = split(line, ',');
  const std::vector<std::string> expected{"patch_index", "duration_s", "vehicle_id", "entry_ts", "scenario"};
  if (header != expected)
    throw IngestError("crossing CSV header must be 'patch_index,duration_s,vehicle_id,entry_ts,scenario'");
  std::vector<CrossingSample> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    const auto patch = f.size() == 5 ? parse_double(f[0]) : std::nullopt;
    const auto dur = f.size() == 5 ? parse_double(f[1]) : std::nullopt;
    const auto entry = f.size() == 5 ? parse_double(f[3]) : std::nullopt;
    if (!patch || !dur || !entry || *patch < 0 || *dur <= 0.0)
      throw IngestError("malformed crossing CSV row at line " + std::to_string(line_no));
    out.push_back({static_cast<std::size_t>(*patch), *dur, f[2], *entry, scenario_from_string(f[4])});
  }
  return out;
}

std::map<std::size_t, std::vector<double>> durations_by_patch(std::span<const CrossingSample> samples,
                                                              Scenario scenario) {
  std::map<std::size_t, std::vector<double>> out;
  for (const auto& s : samples)
    if (s.scenario == scenario) out[s.patch_index].push_back(s.duration);
  return out;
}

} // namespace patchtime
