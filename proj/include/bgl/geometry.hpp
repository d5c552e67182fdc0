// Geometry of the unit 3-torus: canonical coordinates in [0,1), minimum-image
// separation vectors and distances.

#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace bgl {

using Vec3 = Eigen::Vector3d;

// Wrap a coordinate into [0,1).
inline double wrap_unit(double x) {
  double y = x - std::floor(x);
  if (y >= 1.0) y = 0.0;  // guards x = -1e-17 rounding to 1.0
  return y;
}

// Position on the unit torus T^3; coordinates are kept in [0,1).
struct TorusPoint {
  Vec3 coords;

  TorusPoint() : coords(Vec3::Zero()) {}
  explicit TorusPoint(const Vec3& raw)
      : coords(wrap_unit(raw.x()), wrap_unit(raw.y()), wrap_unit(raw.z())) {}
  TorusPoint(double x, double y, double z) : TorusPoint(Vec3(x, y, z)) {}
};

// Velocity in R^3 (domain lengths per unit time).
using Velocity = Vec3;

struct PhasePoint {
  TorusPoint x;
  Velocity v;
};

// Minimum-image separation y - x, componentwise in [-1/2, 1/2).
inline Vec3 torus_separation(const TorusPoint& x, const TorusPoint& y) {
  Vec3 d = y.coords - x.coords;
  for (int k = 0; k < 3; ++k) {
    d[k] -= std::round(d[k]);
    if (d[k] >= 0.5) d[k] = -0.5;
  }
  return d;
}

// dist(x,y) = min over integer offsets of the Euclidean distance between
// lifted representatives. Always <= sqrt(3)/2 on the unit torus.
inline double torus_distance(const TorusPoint& x, const TorusPoint& y) {
  return torus_separation(x, y).norm();
}

}  // namespace bgl
