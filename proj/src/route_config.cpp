#include "patchtime/ingest.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace patchtime {

namespace {
constexpr double kContiguityTolerance = 1e-6;
constexpr double kLengthTolerance = 1.0; // metres between last patch end and polyline length
constexpr double kMinPatchLength = 500.0;
constexpr double kMaxPatchLength = 2500.0;
} // namespace

void validate_route(const RouteSpec& route) {
  auto fail = [&](const std::string& msg) { throw IngestError("route '" + route.route_id + "': " + msg); };
  if (route.patches.size() < 2) fail("needs at least two patches");
  if (route.timetable_duration <= 0) fail("timetable_duration must be positive");
  Polyline line(route.polyline);
  for (std::size_t i = 0; i < route.patches.size(); ++i) {
    const auto& p = route.patches[i];
    const std::string name = "patch " + std::to_string(i) + " (" + p.name + ")";
    if (p.index != i) fail(name + " has index " + std::to_string(p.index));
    if (!(p.d_end - p.d_start > 0.0)) fail(name + " has non-positive length");
    const double expected_start = i == 0 ? 0.0 : route.patches[i - 1].d_end;
    if (std::abs(p.d_start - expected_start) > kContiguityTolerance)
      fail(name + " does not start where the previous patch ends");
    const double len = p.d_end - p.d_start;
    if (!p.terminal && !p.any_length && (len < kMinPatchLength || len > kMaxPatchLength))
      fail(name + " length " + std::to_string(len) + " m is outside 500-2500 m (set any_length to override)");
  }
  if (!route.patches.front().terminal || !route.patches.back().terminal)
    fail("first and last patches must be terminal");
  if (std::abs(route.patches.back().d_end - line.length()) > kLengthTolerance)
    fail("patches end at " + std::to_string(route.patches.back().d_end) + " m but the polyline is " +
         std::to_string(line.length()) + " m long");
}

RouteSpec route_from_json(const nlohmann::json& j) {
  RouteSpec r;
  r.route_id = j.at("route_id").get<std::string>();
  const auto dir = j.value("direction", std::string("forward"));
  if (dir == "forward")
    r.direction = Direction::forward;
  else if (dir == "reverse")
    r.direction = Direction::reverse;
  else
    throw IngestError("unknown direction '" + dir + "'");
  r.timetable_duration = j.at("timetable_duration").get<std::int64_t>();
  for (const auto& v : j.at("polyline")) r.polyline.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
  std::size_t idx = 0;
  for (const auto& p : j.at("patches")) {
    PatchSpec s;
    s.index = idx++;
    s.name = p.value("name", "patch" + std::to_string(s.index));
    s.d_start = p.at("start").get<double>();
    s.d_end = p.at("end").get<double>();
    s.limit_affected = p.value("limit_affected", false);
    s.terminal = p.value("terminal", false);
    s.any_length = p.value("any_length", false);
    r.patches.push_back(std::move(s));
  }
  return r;
}

nlohmann::json route_to_json(const RouteSpec& route) {
  nlohmann::json j;
  j["route_id"] = route.route_id;
  j["direction"] = to_string(route.direction);
  j["timetable_duration"] = route.timetable_duration;
  auto poly = nlohmann::json::array();
  for (const auto& v : route.polyline) poly.push_back({v.lat, v.lon});
  j["polyline"] = poly;
  auto patches = nlohmann::json::array();
  for (const auto& p : route.patches) {
    nlohmann::json pj{{"name", p.name},           {"start", p.d_start},   {"end", p.d_end},
                      {"limit_affected", p.limit_affected}, {"terminal", p.terminal}};
    if (p.any_length) pj["any_length"] = true;
    patches.push_back(pj);
  }
  j["patches"] = patches;
  return j;
}

RouteSpec load_route(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open route file " + path.string());
  try {
    RouteSpec r = route_from_json(nlohmann::json::parse(in));
    validate_route(r);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw IngestError("invalid route file " + path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw IngestError("invalid route file " + path.string() + ": " + e.what());
  } catch (const IngestError& e) {
    throw IngestError("invalid route file " + path.string() + ": " + e.what());
  }
}

} // namespace patchtime
