#include "patchtime/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace patchtime {

namespace {
constexpr double kEarthRadius = 6371008.8;
}

LocalProjection::LocalProjection(LatLon origin)
    : origin_(origin),
      metres_per_deg_lat_(kEarthRadius * std::numbers::pi / 180.0),
      metres_per_deg_lon_(kEarthRadius * std::numbers::pi / 180.0 *
                          std::cos(origin.lat * std::numbers::pi / 180.0)) {}

Eigen::Vector2d LocalProjection::to_plane(LatLon p) const {
  return {(p.lon - origin_.lon) * metres_per_deg_lon_,
          (p.lat - origin_.lat) * metres_per_deg_lat_};
}

LatLon LocalProjection::to_latlon(const Eigen::Vector2d& xy) const {
  return {origin_.lat + xy.y() / metres_per_deg_lat_,
          origin_.lon + xy.x() / metres_per_deg_lon_};
}

Polyline::Polyline(std::span<const LatLon> vertices)
    : proj_(vertices.empty() ? LatLon{} : vertices.front()) {
  if (vertices.size() < 2)
    throw std::invalid_argument("polyline needs at least two vertices");
  points_.reserve(vertices.size());
  cumulative_.reserve(vertices.size());
  for (const auto& v : vertices) {
    points_.push_back(proj_.to_plane(v));
    cumulative_.push_back(
        cumulative_.empty()
            ? 0.0
            : cumulative_.back() + (points_.back() - points_[points_.size() - 2]).norm());
  }
  if (!(length() > 0.0))
    throw std::invalid_argument("polyline has zero length");
}

PolylineProjection Polyline::project(LatLon p) const {
  const Eigen::Vector2d q = proj_.to_plane(p);
  PolylineProjection best{0.0, std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i + 1 < points_.size(); ++i) {
    const Eigen::Vector2d seg = points_[i + 1] - points_[i];
    const double len2 = seg.squaredNorm();
    if (len2 == 0.0) continue;
    const double t = std::clamp((q - points_[i]).dot(seg) / len2, 0.0, 1.0);
    const double dist = (points_[i] + t * seg - q).norm();
    if (dist < best.offset) {
      best.offset = dist;
      best.along = cumulative_[i] + t * std::sqrt(len2);
    }
  }
  return best;
}

LatLon Polyline::point_at(double along) const {
  along = std::clamp(along, 0.0, length());
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), along);
  std::size_t i = it == cumulative_.begin() ? 0 : static_cast<std::size_t>(it - cumulative_.begin()) - 1;
  if (i + 1 >= points_.size()) i = points_.size() - 2;
  const double seg_len = cumulative_[i + 1] - cumulative_[i];
  const double t = seg_len > 0.0 ? (along - cumulative_[i]) / seg_len : 0.0;
  return proj_.to_latlon(points_[i] + t * (points_[i + 1] - points_[i]));
}

} // namespace patchtime
