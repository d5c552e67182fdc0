#include <doctest.h>

#include <cmath>

#include "bgl/boltzmann.hpp"
#include "bgl/rng.hpp"

using namespace bgl;

namespace {

GridFunction bi_maxwellian(const VelocityGrid& grid, double tx, double tperp) {
  return GridFunction::sample(grid, [=](const Velocity& v) {
    return std::exp(-v.x() * v.x() / (2 * tx) -
                    (v.y() * v.y() + v.z() * v.z()) / (2 * tperp)) /
           (std::pow(2 * M_PI, 1.5) * std::sqrt(tx * tperp * tperp));
  });
}

GridFunction random_density(const VelocityGrid& grid, Rng& rng) {
  GridFunction f = GridFunction::sample(grid, [&](const Velocity& v) {
    return std::exp(-0.45 * v.squaredNorm()) *
           (1.0 + 0.4 * std::sin(1.3 * v.x()) + 0.2 * std::cos(v.y() + v.z()));
  });
  f.values *= (0.8 + 0.4 * rng.uniform()) / f.integral();
  return f;
}

}  // namespace

TEST_CASE("collision integral: reference Maxwellian is a discrete equilibrium") {
  const VelocityGrid grid = VelocityGrid::standard();
  CollisionOperator op(grid, QuadratureConfig{});
  const GridFunction m = GridFunction::maxwellian_on(grid, MaxwellianParams{});
  const GridFunction bm = op.apply(m);
  CHECK(bm.values.lpNorm<Eigen::Infinity>() /
            m.values.lpNorm<Eigen::Infinity>() <=
        5e-3);

  GridFunction zero(grid);
  const GridFunction bz = op.apply(zero);
  CHECK(bz.values.lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("collision integral: projected moments vanish, unprojected reported") {
  const VelocityGrid grid(4.0, 8);
  Rng rng(42);
  QuadratureConfig cfg;
  CollisionOperator op(grid, cfg);
  const GridFunction f = random_density(grid, rng);
  const GridFunction bf = op.apply(f);
  const Moments m = moments(bf);
  CHECK(std::abs(m.mass) <= 1e-12);
  CHECK(m.momentum.norm() <= 1e-12);
  CHECK(std::abs(m.energy) <= 1e-12);

  QuadratureConfig raw = cfg;
  raw.conservation_projection = false;
  CollisionOperator op_raw(grid, raw);
  const Moments mr = moments(op_raw.apply(f));
  // without projection the moments only vanish to quadrature tolerance,
  // reported relative to the one-sided collision mass flux
  const double flux = 2.0 * mean_collision_rate(op, f) * moments(f).mass;
  MESSAGE("raw moment residuals (mass, |mom|, energy) / flux: "
          << mr.mass / flux << " " << mr.momentum.norm() / flux << " "
          << mr.energy / flux);
  CHECK(std::abs(mr.mass) <= 0.05 * flux);
  CHECK(std::abs(mr.energy) <= 0.25 * flux);
}

TEST_CASE("moments: Gaussian closed forms on the default grid") {
  const VelocityGrid grid = VelocityGrid::standard();
  const GridFunction m = GridFunction::maxwellian_on(grid, MaxwellianParams{});
  const Moments mm = moments(m);
  CHECK(std::abs(mm.mass - 1.0) <= 1e-6);
  CHECK(mm.momentum.norm() <= 1e-9);
  CHECK(std::abs(mm.energy - 1.5) <= 1e-5);

  GridFunction twice = m;
  twice.values *= 2.0;
  const Moments m2 = moments(twice);
  CHECK(m2.mass == doctest::Approx(2.0 * mm.mass).epsilon(1e-14));
  CHECK(m2.energy == doctest::Approx(2.0 * mm.energy).epsilon(1e-14));

  const Moments z = moments(GridFunction(grid));
  CHECK(z.mass == 0.0);
  CHECK(z.momentum.norm() == 0.0);
  CHECK(z.energy == 0.0);
}

TEST_CASE("h functional: Gaussian entropy, mass scaling, negativity guard") {
  const VelocityGrid grid = VelocityGrid::standard();
  const GridFunction m = GridFunction::maxwellian_on(grid, MaxwellianParams{});
  CHECK(std::abs(h_functional(m) - (-1.5 * (1.0 + std::log(2 * M_PI)))) <=
        1e-3);
  CHECK(h_functional(m) == doctest::Approx(-4.2568).epsilon(1e-3));

  // mass-scaling identity; the 2 ln 2 term carries the grid mass of m
  GridFunction two = m;
  two.values *= 2.0;
  CHECK(h_functional(two) ==
        doctest::Approx(2.0 * h_functional(m) +
                        2.0 * std::log(2.0) * moments(m).mass)
            .epsilon(1e-12));

  GridFunction bad = m;
  bad.values[0] = -1e-6;
  CHECK_THROWS_AS((void)h_functional(bad), BoltzmannError);
}

TEST_CASE("solve_homogeneous: T=0, stationarity, stability guard") {
  // 6-sigma box: the boundary-stencil gain deficit sits at e^{-18} scale
  const VelocityGrid grid(6.0, 10);
  CollisionOperator op(grid, QuadratureConfig{});
  const GridFunction m = GridFunction::maxwellian_on(grid, MaxwellianParams{});

  SolveOptions opts;
  opts.dt = 0.4 / op.max_collision_frequency(m);
  auto zero_series = solve_homogeneous(op, m, 0.0, opts, {});
  REQUIRE(zero_series.size() == 1);
  CHECK((zero_series[0].f.values - m.values).norm() == 0.0);

  auto series = solve_homogeneous(op, m, 1.0, opts, {0.5});
  for (const auto& s : series)
    CHECK((s.f.values - m.values).lpNorm<Eigen::Infinity>() /
              m.values.lpNorm<Eigen::Infinity>() <=
          5e-3);

  SolveOptions bad;
  bad.dt = 1.0 / op.max_collision_frequency(m);
  CHECK_THROWS_AS((void)solve_homogeneous(op, m, 0.1, bad, {}), BoltzmannError);
}

TEST_CASE("solve_homogeneous: H decay and relaxation on a small grid") {
  // the box must cover the hot direction (~5 sigma) or the truncated moments
  // define an equilibrium temperature visibly off the reference
  const VelocityGrid grid(6.0, 10, 1.0);
  CollisionOperator op(grid, QuadratureConfig{});
  const GridFunction f0 = bi_maxwellian(grid, 1.5, 0.75);  // theta_eq = 1

  SolveOptions opts;
  opts.dt = 0.45 / op.max_collision_frequency(f0);
  std::vector<double> times;
  for (double t = 0.1; t <= 2.0; t += 0.1) times.push_back(t);
  const auto series = solve_homogeneous(op, f0, 2.0, opts, times);

  double prev = h_functional(f0, 1e-7);
  for (const auto& s : series) {
    const double h = h_functional(s.f, 1e-7);
    CHECK(h <= prev + 1e-8);
    prev = h;
  }
  const auto eq = equilibrium_from_moments(series.back().f);
  const GridFunction meq = GridFunction::maxwellian_on(grid, eq);
  CHECK((series.back().f.values - meq.values).lpNorm<Eigen::Infinity>() /
            meq.values.lpNorm<Eigen::Infinity>() <=
        0.01);
  CHECK(std::abs(temperature_anisotropy(series.back().f)) <= 1e-3);
}

TEST_CASE("weak forms 1-3 are exact rearrangements; all four on the lattice rule") {
  const VelocityGrid grid(3.5, 7);
  Rng rng(7);
  const GridFunction f = random_density(grid, rng);

  const TestFunction poly("poly", [](const Velocity& v) {
    return 1.0 + v.x() - 0.5 * v.y() * v.z() + 0.25 * v.squaredNorm();
  });

  for (const char* rule : {"design32", "axes6"}) {
    QuadratureConfig cfg;
    cfg.sphere = sphere_rule_by_name(rule);
    CollisionOperator op(grid, cfg);
    const double v1 = weak_form_pairing(op, f, poly, 1);
    const double v2 = weak_form_pairing(op, f, poly, 2);
    const double v3 = weak_form_pairing(op, f, poly, 3);
    const double v4 = weak_form_pairing(op, f, poly, 4);
    const double scale = std::max({1.0, std::abs(v1), std::abs(v3)});
    CHECK(std::abs(v1 - v2) <= 1e-10 * scale);
    CHECK(std::abs(v1 - v3) <= 1e-10 * scale);
    if (std::string(rule) == "axes6") {
      // the axis rule maps node pairs to node pairs, so the collision
      // change of variables is an exact symmetry of the discrete sum
      CHECK(std::abs(v4 - v3) <= 1e-10 * scale);
    } else {
      CHECK(std::abs(v4 - v3) <= 5e-2 * scale);
    }
  }
}

TEST_CASE("weak pairing with collision invariants vanishes") {
  const VelocityGrid grid(3.5, 7);
  Rng rng(17);
  const GridFunction f = random_density(grid, rng);
  QuadratureConfig cfg;
  CollisionOperator op(grid, cfg);

  const TestFunction one("one", [](const Velocity&) { return 1.0; });
  const TestFunction v1c("v1", [](const Velocity& v) { return v.x(); });
  const TestFunction en("en", [](const Velocity& v) { return v.squaredNorm(); });
  // D psi vanishes pointwise; the pairing only accumulates rounding from
  // the |v'|^2 + |v'*|^2 - |v|^2 - |v*|^2 cancellations
  for (const auto* psi : {&one, &v1c, &en})
    CHECK(std::abs(weak_form_pairing(op, f, *psi, 3)) <= 1e-9);

  // the projected operator pairs to zero against grid-sampled invariants
  const GridFunction bf = op.apply(f);
  for (const auto* psi : {&one, &v1c, &en})
    CHECK(std::abs(bf.inner(psi->on_grid(grid))) <= 1e-12);
}

TEST_CASE("dsmc: dt=0 identity and exact per-collision conservation") {
  Rng rng(2718);
  std::vector<Velocity> v;
  for (int i = 0; i < 5000; ++i)
    v.emplace_back(rng.normal(), rng.normal(), rng.normal());
  Vec3 p0 = Vec3::Zero();
  double e0 = 0.0;
  for (const auto& u : v) {
    p0 += u;
    e0 += u.squaredNorm();
  }

  DsmcOptions opts;
  opts.particle_weight = 1.0 / v.size();
  auto copy = v;
  dsmc_step(copy, 0.0, opts, rng);
  for (size_t i = 0; i < v.size(); ++i) CHECK((copy[i] - v[i]).norm() == 0.0);

  DsmcStats stats;
  for (int step = 0; step < 200; ++step) dsmc_step(v, 0.01, opts, rng, &stats);
  CHECK(stats.collisions > 1000);
  Vec3 p1 = Vec3::Zero();
  double e1 = 0.0;
  for (const auto& u : v) {
    p1 += u;
    e1 += u.squaredNorm();
  }
  CHECK((p1 - p0).norm() <= 1e-10 * std::max(1.0, p0.norm()));
  CHECK(std::abs(e1 - e0) <= 1e-10 * e0);
}

TEST_CASE("dsmc: collision rate matches the hard-sphere loss frequency") {
  // mean rate per particle for rho=1 is pi <|v-v*|>; for a Maxwellian at
  // theta=1 the mean relative speed is 4/sqrt(pi)
  Rng rng(515);
  std::vector<Velocity> v;
  const int n = 20000;
  for (int i = 0; i < n; ++i)
    v.emplace_back(rng.normal(), rng.normal(), rng.normal());
  DsmcOptions opts;
  opts.particle_weight = 1.0 / n;
  DsmcStats stats;
  const double t_total = 0.2;
  for (int step = 0; step < 20; ++step)
    dsmc_step(v, t_total / 20, opts, rng, &stats);
  const double rate = 2.0 * double(stats.collisions) / n / t_total;
  const double expected = M_PI * 4.0 / std::sqrt(M_PI);
  CHECK(rate == doctest::Approx(expected).epsilon(0.05));
  CHECK(stats.majorant_doublings <= 2);
}

TEST_CASE("duhamel iteration: degenerate cases and solver cross-check") {
  const VelocityGrid grid(4.0, 8);
  CollisionOperator op(grid, QuadratureConfig{});
  const GridFunction f0 = bi_maxwellian(grid, 1.4, 0.8);

  const GridFunction zeroth = duhamel_iterate(op, f0, 0.05, 0);
  CHECK((zeroth.values - f0.values).norm() == 0.0);

  // first Picard step at small t is f0 + t B(f0) to leading order
  const double t_small = 1e-3;
  const GridFunction first = duhamel_iterate(op, f0, t_small, 1, 5);
  GridFunction lead = f0;
  lead.values += t_small * op.apply(f0).values;
  CHECK((first.values - lead.values).lpNorm<Eigen::Infinity>() <=
        1e-8 * f0.values.lpNorm<Eigen::Infinity>());

  // six terms against the RK2 solver at a tenth of a mean collision time
  const double nu = mean_collision_rate(op, f0);
  const double t = 0.1 / nu;
  const GridFunction picard = duhamel_iterate(op, f0, t, 6, 33);
  SolveOptions opts;
  opts.dt = t / 64;
  const auto series = solve_homogeneous(op, f0, t, opts, {});
  CHECK((picard.values - series.back().f.values).lpNorm<Eigen::Infinity>() <=
        1e-4 * f0.values.lpNorm<Eigen::Infinity>());
}
