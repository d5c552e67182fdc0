// Angular quadrature over the collision sphere S^2 and the shared
// configuration for the velocity-space collision quadratures.
//
// All rules are antipodally symmetric, so identities that use the
// omega -> -omega substitution hold exactly on the discrete rule.

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "bgl/geometry.hpp"

namespace bgl {

struct SphereRule {
  std::string name;
  std::vector<Vec3> nodes;
  std::vector<double> weights;  // sum to 4*pi

  int size() const { return static_cast<int>(nodes.size()); }

  void validate() const {
    double s = 0.0;
    for (double w : weights) s += w;
    if (std::abs(s - 4.0 * M_PI) > 1e-10)
      throw std::logic_error("sphere rule weights must sum to 4 pi");
    // antipodal symmetry
    for (const auto& a : nodes) {
      bool found = false;
      for (const auto& b : nodes)
        if ((a + b).norm() < 1e-12) found = true;
      if (!found) throw std::logic_error("sphere rule is not antipodal");
    }
  }
};

namespace detail {

inline void push_orbit(std::vector<Vec3>& pts, const Vec3& p) {
  pts.push_back(p.normalized());
}

}  // namespace detail

// +-e_i with equal weights. Coarse but maps lattice pairs to lattice pairs:
// for omega = e_a the collision exchanges the a-th velocity components, so
// post-collisional velocities of grid nodes are again grid nodes.
inline SphereRule sphere_rule_axes6() {
  SphereRule r;
  r.name = "axes6";
  const double w = 4.0 * M_PI / 6.0;
  for (int a = 0; a < 3; ++a) {
    Vec3 e = Vec3::Zero();
    e[a] = 1.0;
    r.nodes.push_back(e);
    r.nodes.push_back(-e);
    r.weights.push_back(w);
    r.weights.push_back(w);
  }
  r.validate();
  return r;
}

// Classical 26-point Lebedev rule (degree 7): 6 axis points, 12 edge
// midpoints, 8 cube diagonals.
inline SphereRule sphere_rule_lebedev26() {
  SphereRule r;
  r.name = "lebedev26";
  const double a1 = 1.0 / 21.0, a2 = 4.0 / 105.0, a3 = 9.0 / 280.0;
  std::vector<Vec3> pts;
  for (int a = 0; a < 3; ++a)
    for (int s = -1; s <= 1; s += 2) {
      Vec3 e = Vec3::Zero();
      e[a] = s;
      pts.push_back(e);
    }
  for (int k = 0; k < 6; ++k) r.weights.push_back(a1 * 4.0 * M_PI);
  const double q = 1.0 / std::sqrt(2.0);
  for (int a = 0; a < 3; ++a) {
    const int b = (a + 1) % 3;
    for (int sa = -1; sa <= 1; sa += 2)
      for (int sb = -1; sb <= 1; sb += 2) {
        Vec3 e = Vec3::Zero();
        e[a] = sa * q;
        e[b] = sb * q;
        pts.push_back(e);
      }
  }
  for (int k = 0; k < 12; ++k) r.weights.push_back(a2 * 4.0 * M_PI);
  const double c = 1.0 / std::sqrt(3.0);
  for (int sx = -1; sx <= 1; sx += 2)
    for (int sy = -1; sy <= 1; sy += 2)
      for (int sz = -1; sz <= 1; sz += 2) pts.push_back(Vec3(sx * c, sy * c, sz * c));
  for (int k = 0; k < 8; ++k) r.weights.push_back(a3 * 4.0 * M_PI);
  r.nodes = pts;
  r.validate();
  return r;
}

// 32-node rule from the icosahedron and dodecahedron vertex orbits. The two
// orbit weights are fixed by normalization plus exactness on the degree-6
// invariant, which makes the rule exact through degree 9.
inline SphereRule sphere_rule_design32() {
  SphereRule r;
  r.name = "design32";
  const double phi = 0.5 * (1.0 + std::sqrt(5.0));
  std::vector<Vec3> ico, dod;
  for (int s1 = -1; s1 <= 1; s1 += 2)
    for (int s2 = -1; s2 <= 1; s2 += 2) {
      detail::push_orbit(ico, Vec3(0.0, s1 * 1.0, s2 * phi));
      detail::push_orbit(ico, Vec3(s1 * 1.0, s2 * phi, 0.0));
      detail::push_orbit(ico, Vec3(s1 * phi, 0.0, s2 * 1.0));
    }
  for (int sx = -1; sx <= 1; sx += 2)
    for (int sy = -1; sy <= 1; sy += 2)
      for (int sz = -1; sz <= 1; sz += 2)
        detail::push_orbit(dod, Vec3(sx * 1.0, sy * 1.0, sz * 1.0));
  // the face-center orbit dual to the icosahedron above is the
  // (0, phi, 1/phi) cyclic family; the mirror family would break the common
  // icosahedral symmetry of the two orbits
  for (int s1 = -1; s1 <= 1; s1 += 2)
    for (int s2 = -1; s2 <= 1; s2 += 2) {
      detail::push_orbit(dod, Vec3(0.0, s1 * phi, s2 / phi));
      detail::push_orbit(dod, Vec3(s1 / phi, 0.0, s2 * phi));
      detail::push_orbit(dod, Vec3(s1 * phi, s2 / phi, 0.0));
    }

  auto inv6 = [](const Vec3& p) {
    return std::pow(p.x(), 6) + std::pow(p.y(), 6) + std::pow(p.z(), 6);
  };
  double s_ico = 0.0, s_dod = 0.0;
  for (const auto& p : ico) s_ico += inv6(p);
  for (const auto& p : dod) s_dod += inv6(p);
  // Solve 12 A + 20 B = 4 pi,  A s_ico + B s_dod = 3 * (4 pi / 7).
  const double rhs0 = 4.0 * M_PI;
  const double rhs1 = 3.0 * rhs0 / 7.0;
  const double det = 12.0 * s_dod - 20.0 * s_ico;
  const double A = (rhs0 * s_dod - 20.0 * rhs1) / det;
  const double B = (12.0 * rhs1 - rhs0 * s_ico) / det;

  for (const auto& p : ico) {
    r.nodes.push_back(p);
    r.weights.push_back(A);
  }
  for (const auto& p : dod) {
    r.nodes.push_back(p);
    r.weights.push_back(B);
  }
  r.validate();
  return r;
}

inline SphereRule sphere_rule_by_name(const std::string& name) {
  if (name == "axes6") return sphere_rule_axes6();
  if (name == "lebedev26") return sphere_rule_lebedev26();
  if (name == "design32") return sphere_rule_design32();
  throw std::invalid_argument("unknown sphere rule: " + name);
}

// Shared configuration of the velocity-space collision quadratures.
struct QuadratureConfig {
  SphereRule sphere = sphere_rule_design32();
  // Subsample partner nodes with this stride along each axis; the weight of
  // each retained partner is scaled by stride^3. 1 = full pair loop.
  int pair_stride = 1;
  // Project collision outputs onto the orthogonal complement of
  // span{1, v, |v|^2} under the grid inner product.
  bool conservation_projection = true;
};

}  // namespace bgl
