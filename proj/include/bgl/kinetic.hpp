// Elastic hard-sphere collision law, Maxwellian densities, and the D operator
// acting on test functions of phase points.

#pragma once

#include <cassert>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "bgl/geometry.hpp"

namespace bgl {

struct CollisionPair {
  Velocity v_prime;
  Velocity v_star_prime;
};

// v'  = v  - ((v - v*).omega) omega
// v'* = v* + ((v - v*).omega) omega
// Exchanges the normal component of the relative velocity; preserves
// momentum and kinetic energy exactly up to rounding, and is an involution.
inline CollisionPair collide(const Velocity& v, const Velocity& v_star,
                             const Vec3& omega) {
  assert(std::abs(omega.squaredNorm() - 1.0) < 1e-12);
  const double proj = (v - v_star).dot(omega);
  return {v - proj * omega, v_star + proj * omega};
}

struct MaxwellianParams {
  double rho = 1.0;   // mass density, > 0
  Velocity u = Velocity::Zero();
  double theta = 1.0; // temperature, > 0
};

// rho (2 pi theta)^{-3/2} exp(-|v-u|^2 / 2 theta); integrates to rho.
inline double maxwellian(const MaxwellianParams& p, const Velocity& v) {
  const double norm = p.rho * std::pow(2.0 * M_PI * p.theta, -1.5);
  return norm * std::exp(-(v - p.u).squaredNorm() / (2.0 * p.theta));
}

using PhaseFunction = std::function<double(const PhasePoint&)>;

// D h (z, z*, omega) = h(x, v') + h(x*, v'*) - h(z) - h(z*).
// Symmetric under omega -> -omega and under z <-> z*. Vanishes identically
// when h is a collision invariant (1, v_i, |v|^2).
inline double d_operator(const PhaseFunction& h, const PhasePoint& z,
                         const PhasePoint& z_star, const Vec3& omega) {
  const auto post = collide(z.v, z_star.v, omega);
  return h({z.x, post.v_prime}) + h({z_star.x, post.v_star_prime}) - h(z) -
         h(z_star);
}

// Velocity-only variant used throughout the spatially homogeneous modules.
using VelocityFunction = std::function<double(const Velocity&)>;

inline double d_operator(const VelocityFunction& h, const Velocity& v,
                         const Velocity& v_star, const Vec3& omega) {
  const auto post = collide(v, v_star, omega);
  return h(post.v_prime) + h(post.v_star_prime) - h(v) - h(v_star);
}

}  // namespace bgl
