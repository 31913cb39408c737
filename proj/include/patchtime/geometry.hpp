#pragma once

#include <Eigen/Core>

#include <span>
#include <vector>

namespace patchtime {

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;
};

/// Equirectangular projection about a reference point, in metres.
/// Accurate to well under a metre over a city-sized route.
class LocalProjection {
public:
  explicit LocalProjection(LatLon origin);

  Eigen::Vector2d to_plane(LatLon p) const;
  LatLon to_latlon(const Eigen::Vector2d& xy) const;

private:
  LatLon origin_;
  double metres_per_deg_lat_;
  double metres_per_deg_lon_;
};

struct PolylineProjection {
  double along = 0.0;  ///< cumulative distance of the nearest point (m)
  double offset = 0.0; ///< distance from the query point to the polyline (m)
};

/// Route polyline in local planar coordinates with cumulative lengths.
class Polyline {
public:
  /// Throws std::invalid_argument when fewer than two vertices or zero length.
  explicit Polyline(std::span<const LatLon> vertices);

  double length() const { return cumulative_.back(); }
  const LocalProjection& projection() const { return proj_; }

  /// Nearest point over all segments; ties resolve to the earliest segment.
  PolylineProjection project(LatLon p) const;
  /// Point at cumulative distance `along`, clamped to [0, length()].
  LatLon point_at(double along) const;

private:
  LocalProjection proj_;
  std::vector<Eigen::Vector2d> points_;
  std::vector<double> cumulative_;
};

} // namespace patchtime
