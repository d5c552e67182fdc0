#include <doctest.h>

#include <cmath>

#include "bgl/geometry.hpp"
#include "bgl/kinetic.hpp"
#include "bgl/quadrature.hpp"
#include "bgl/rng.hpp"
#include "bgl/velocity_grid.hpp"

using namespace bgl;

namespace {

// Independent oracle: distance as an explicit minimum over all 27 lifted
// image offsets.
double torus_distance_brute(const TorusPoint& x, const TorusPoint& y) {
  double best = 1e300;
  for (int nx = -1; nx <= 1; ++nx)
    for (int ny = -1; ny <= 1; ++ny)
      for (int nz = -1; nz <= 1; ++nz) {
        const Vec3 d = y.coords - x.coords + Vec3(nx, ny, nz);
        best = std::min(best, d.norm());
      }
  return best;
}

Velocity random_velocity(Rng& rng, double scale = 1.0) {
  return Velocity(scale * rng.normal(), scale * rng.normal(),
                  scale * rng.normal());
}

TorusPoint random_point(Rng& rng) {
  return TorusPoint(rng.uniform(), rng.uniform(), rng.uniform());
}

}  // namespace

TEST_CASE("torus distance: wrap, identity, diagonal") {
  CHECK(torus_distance(TorusPoint(0.1, 0, 0), TorusPoint(0.9, 0, 0)) ==
        doctest::Approx(0.2).epsilon(1e-14));
  TorusPoint p(0.37, 0.11, 0.93);
  CHECK(torus_distance(p, p) == 0.0);
  // brute force over all 27 image offsets gives sqrt(0.5)
  CHECK(torus_distance(TorusPoint(0.25, 0.25, 0), TorusPoint(0.75, 0.75, 0)) ==
        doctest::Approx(std::sqrt(0.5)).epsilon(1e-14));
}

TEST_CASE("torus distance agrees with 27-image brute force and is metric") {
  Rng rng(1234);
  for (int k = 0; k < 2000; ++k) {
    const TorusPoint x = random_point(rng), y = random_point(rng);
    const double d = torus_distance(x, y);
    CHECK(d == doctest::Approx(torus_distance_brute(x, y)).epsilon(1e-13));
    CHECK(d == doctest::Approx(torus_distance(y, x)).epsilon(1e-14));
    CHECK(d <= std::sqrt(3.0) / 2.0 + 1e-14);
  }
  for (int k = 0; k < 10000; ++k) {
    const TorusPoint x = random_point(rng), y = random_point(rng),
                     z = random_point(rng);
    CHECK(torus_distance(x, z) <=
          torus_distance(x, y) + torus_distance(y, z) + 1e-12);
  }
}

TEST_CASE("collision law: exchange, zero relative velocity, tangential") {
  const auto headon =
      collide(Velocity(1, 0, 0), Velocity(-1, 0, 0), Vec3(1, 0, 0));
  CHECK(headon.v_prime == Velocity(-1, 0, 0));
  CHECK(headon.v_star_prime == Velocity(1, 0, 0));

  Rng rng(7);
  const Velocity v = random_velocity(rng);
  double sx, sy, sz;
  rng.unit_sphere(sx, sy, sz);
  const auto same = collide(v, v, Vec3(sx, sy, sz));
  CHECK((same.v_prime - v).norm() == 0.0);
  CHECK((same.v_star_prime - v).norm() == 0.0);

  const auto tangential =
      collide(Velocity(1, 0, 0), Velocity(0, 0, 0), Vec3(0, 1, 0));
  CHECK((tangential.v_prime - Velocity(1, 0, 0)).norm() == 0.0);
  CHECK((tangential.v_star_prime - Velocity(0, 0, 0)).norm() == 0.0);
}

TEST_CASE("collision law: involution and conservation over 1e5 draws") {
  Rng rng(20240917);
  double worst_mom = 0.0, worst_en = 0.0, worst_inv = 0.0;
  for (int k = 0; k < 100000; ++k) {
    const Velocity v = random_velocity(rng, 2.0);
    const Velocity w = random_velocity(rng, 2.0);
    double sx, sy, sz;
    rng.unit_sphere(sx, sy, sz);
    const Vec3 omega(sx, sy, sz);
    const auto post = collide(v, w, omega);

    const double mom = (post.v_prime + post.v_star_prime - v - w).norm() /
                       std::max(1.0, (v + w).norm());
    const double en = std::abs(post.v_prime.squaredNorm() +
                               post.v_star_prime.squaredNorm() -
                               v.squaredNorm() - w.squaredNorm()) /
                      std::max(1.0, v.squaredNorm() + w.squaredNorm());
    const auto twice = collide(post.v_prime, post.v_star_prime, omega);
    const double inv =
        ((twice.v_prime - v).norm() + (twice.v_star_prime - w).norm()) /
        (v.norm() + w.norm() + 1.0);
    worst_mom = std::max(worst_mom, mom);
    worst_en = std::max(worst_en, en);
    worst_inv = std::max(worst_inv, inv);
  }
  CHECK(worst_mom <= 1e-12);
  CHECK(worst_en <= 1e-12);
  CHECK(worst_inv <= 1e-14);
}

TEST_CASE("D operator: zero function, collision invariants, symmetry") {
  Rng rng(55);
  const VelocityFunction zero = [](const Velocity&) { return 0.0; };
  const VelocityFunction energy = [](const Velocity& v) {
    return v.squaredNorm();
  };
  const VelocityFunction mom1 = [](const Velocity& v) { return v.x(); };
  const VelocityFunction bump = [](const Velocity& v) {
    return std::exp(-0.3 * v.squaredNorm()) * (1.0 + v.y());
  };
  for (int k = 0; k < 1000; ++k) {
    const Velocity v = random_velocity(rng), w = random_velocity(rng);
    double sx, sy, sz;
    rng.unit_sphere(sx, sy, sz);
    const Vec3 omega(sx, sy, sz);
    CHECK(d_operator(zero, v, w, omega) == 0.0);
    CHECK(std::abs(d_operator(energy, v, w, omega)) <= 1e-12);
    CHECK(std::abs(d_operator(mom1, v, w, omega)) <= 1e-13);
    // D h (z, z*, omega) = D h (z, z*, -omega)
    CHECK(d_operator(bump, v, w, omega) ==
          doctest::Approx(d_operator(bump, v, w, -omega)).epsilon(1e-13));
  }
}

TEST_CASE("maxwellian: closed form at origin, scaling, grid quadrature") {
  MaxwellianParams p;  // rho=1, u=0, theta=1
  CHECK(maxwellian(p, Velocity::Zero()) ==
        doctest::Approx(std::pow(2.0 * M_PI, -1.5)).epsilon(1e-12));
  CHECK(maxwellian(p, Velocity::Zero()) ==
        doctest::Approx(0.06349364).epsilon(1e-7));

  MaxwellianParams p2 = p;
  p2.rho = 2.0;
  Rng rng(3);
  for (int k = 0; k < 100; ++k) {
    const Velocity v = random_velocity(rng, 2.0);
    CHECK(maxwellian(p2, v) ==
          doctest::Approx(2.0 * maxwellian(p, v)).epsilon(1e-14));
  }

  // grid integral vs the exact total mass (Gaussian CDF oracle: the mass in
  // the truncated box differs from 1 by erfc-size terms below 1e-8)
  const VelocityGrid grid = VelocityGrid::standard();
  const GridFunction m = GridFunction::maxwellian_on(grid, p);
  CHECK(std::abs(m.integral() - 1.0) <= 1e-6);
}

TEST_CASE("sphere rules: weights, antipodal symmetry, polynomial exactness") {
  for (const auto* name : {"axes6", "lebedev26", "design32"}) {
    const SphereRule rule = sphere_rule_by_name(name);
    double sum = 0.0;
    for (double w : rule.weights) sum += w;
    CHECK(sum == doctest::Approx(4.0 * M_PI).epsilon(1e-13));
  }

  // Exact moments of monomials over S^2: int x^a y^b z^c = 0 for any odd
  // exponent, else 4 pi (a-1)!!(b-1)!!(c-1)!! / (a+b+c+1)!!.
  auto exact_moment = [](int a, int b, int c) {
    if (a % 2 || b % 2 || c % 2) return 0.0;
    auto dfact = [](int k) {
      double r = 1.0;
      for (int q = k; q > 1; q -= 2) r *= q;
      return r;
    };
    return 4.0 * M_PI * dfact(a - 1) * dfact(b - 1) * dfact(c - 1) /
           dfact(a + b + c + 1);
  };
  const SphereRule rule = sphere_rule_design32();
  for (int a = 0; a <= 9; ++a)
    for (int b = 0; a + b <= 9; ++b)
      for (int c = 0; a + b + c <= 9; ++c) {
        double s = 0.0;
        for (int k = 0; k < rule.size(); ++k)
          s += rule.weights[k] * std::pow(rule.nodes[k].x(), a) *
               std::pow(rule.nodes[k].y(), b) * std::pow(rule.nodes[k].z(), c);
        CHECK(s == doctest::Approx(exact_moment(a, b, c)).epsilon(1e-10));
      }

  // the degree-7 rule is exact through degree 7
  const SphereRule leb = sphere_rule_lebedev26();
  for (int a = 0; a <= 7; ++a)
    for (int b = 0; a + b <= 7; ++b)
      for (int c = 0; a + b + c <= 7; ++c) {
        double s = 0.0;
        for (int k = 0; k < leb.size(); ++k)
          s += leb.weights[k] * std::pow(leb.nodes[k].x(), a) *
               std::pow(leb.nodes[k].y(), b) * std::pow(leb.nodes[k].z(), c);
        CHECK(s == doctest::Approx(exact_moment(a, b, c)).epsilon(1e-10));
      }
}
