#include "bgl/hamiltonjacobi.hpp"

#include <cmath>
#include <sstream>

namespace bgl {

namespace {

// exp(Dq) - 1 per quadrature node pair, with q exact (closure) or
// interpolated (grid values, zero ambient). Shared by H and its gradients.
template <typename Fn>
void sum_over_pairs(const CollisionOperator& op, const TestFunction& q,
                    Fn&& fn) {
  const VelocityGrid& grid = op.grid();
  const bool closure = q.has_closure();
  std::vector<double> qpad;
  const int np = grid.n() + 2 * op.pad();
  int corners[8];
  {
    int c = 0;
    for (int cx = 0; cx <= 1; ++cx)
      for (int cy = 0; cy <= 1; ++cy)
        for (int cz = 0; cz <= 1; ++cz, ++c)
          corners[c] = (cx * np + cy) * np + cz;
  }
  GridFunction qgrid;
  if (!closure) {
    qgrid = q.on_grid(grid);
    qpad.assign(static_cast<size_t>(np) * np * np, 0.0);
    for (int ix = 0; ix < grid.n(); ++ix)
      for (int iy = 0; iy < grid.n(); ++iy)
        for (int iz = 0; iz < grid.n(); ++iz)
          qpad[op.padded_index(ix, iy, iz)] =
              qgrid.values[grid.index(ix, iy, iz)];
  }
  const double h = grid.spacing();
  for (const auto& t : op.terms()) {
    op.for_each_pair(t, [&](int i, int j, int pi, int pj) {
      double dq;
      if (closure) {
        const Velocity vi = grid.node(i), vj = grid.node(j);
        const Vec3 delta = (t.omega.dot(vj - vi)) * t.omega;
        dq = q(vi + delta) + q(vj - delta) - q(vi) - q(vj);
      } else {
        double qa = 0.0, qb = 0.0;
        for (int c = 0; c < 8; ++c) {
          qa += t.wa[c] * qpad[pi + t.padded_off_a + corners[c]];
          qb += t.wb[c] * qpad[pj + t.padded_off_b + corners[c]];
        }
        dq = qa + qb - qpad[pi] - qpad[pj];
      }
      fn(t, i, j, dq);
    });
  }
  (void)h;
}

void check_overflow(double max_dq) {
  if (max_dq > 600.0) {
    std::ostringstream os;
    os << "overflow in exp(Dq); max |Dq| = " << max_dq;
    throw BoltzmannError(os.str());
  }
}

}  // namespace

double hamiltonian(const CollisionOperator& op, const GridFunction& p,
                   const TestFunction& q) {
  const double w = op.grid().cell_volume();
  double total = 0.0;
  double max_dq = 0.0;
  sum_over_pairs(op, q, [&](const CollisionOperator::Term& t, int i, int j,
                            double dq) {
    max_dq = std::max(max_dq, std::abs(dq));
    const double e = std::expm1(dq);
    // the unordered-pair stream covers (i,j) and (j,i), which share Dq and
    // kernel: the 1/2 prefactor cancels against the double count
    total += t.weight * t.kernel * e * p.values[i] * p.values[j];
  });
  check_overflow(max_dq);
  return total * w;
}

GridFunction dh_dp(const CollisionOperator& op, const GridFunction& p,
                   const TestFunction& q) {
  GridFunction out(op.grid());
  double max_dq = 0.0;
  sum_over_pairs(op, q, [&](const CollisionOperator::Term& t, int i, int j,
                            double dq) {
    max_dq = std::max(max_dq, std::abs(dq));
    const double e = std::expm1(dq);
    const double c = t.weight * t.kernel * e;
    out.values[i] += c * p.values[j];
    out.values[j] += c * p.values[i];
  });
  check_overflow(max_dq);
  return out;
}

GridFunction dh_dq(const CollisionOperator& op, const GridFunction& p,
                   const GridFunction& q) {
  const VelocityGrid& grid = op.grid();
  GridFunction out(grid);
  const int n = grid.n();
  std::vector<double> qpad;
  const int np = n + 2 * op.pad();
  qpad.assign(static_cast<size_t>(np) * np * np, 0.0);
  for (int ix = 0; ix < n; ++ix)
    for (int iy = 0; iy < n; ++iy)
      for (int iz = 0; iz < n; ++iz)
        qpad[op.padded_index(ix, iy, iz)] = q.values[grid.index(ix, iy, iz)];
  int corners[8];
  {
    int c = 0;
    for (int cx = 0; cx <= 1; ++cx)
      for (int cy = 0; cy <= 1; ++cy)
        for (int cz = 0; cz <= 1; ++cz, ++c)
          corners[c] = (cx * np + cy) * np + cz;
  }
  double max_dq = 0.0;
  for (const auto& t : op.terms()) {
    op.for_each_pair(t, [&](int i, int j, int pi, int pj) {
      double qa = 0.0, qb = 0.0;
      for (int c = 0; c < 8; ++c) {
        qa += t.wa[c] * qpad[pi + t.padded_off_a + corners[c]];
        qb += t.wb[c] * qpad[pj + t.padded_off_b + corners[c]];
      }
      const double dq = qa + qb - qpad[pi] - qpad[pj];
      max_dq = std::max(max_dq, std::abs(dq));
      // d/d q_s of e^{Dq} scatters e^{Dq} over the Dq stencil of s
      const double c0 = t.weight * t.kernel * std::exp(dq) *
                        p.values[i] * p.values[j];
      const int base_a = pi + t.padded_off_a;
      const int base_b = pj + t.padded_off_b;
      // scatter onto interior stencil nodes; the map from padded back to
      // interior indices uses the shared corner offsets
      auto unpad = [&](int padded) {
        const int pz = padded % np, py = (padded / np) % np,
                  px = padded / (np * np);
        const int ix = px - op.pad(), iy = py - op.pad(), iz = pz - op.pad();
        if (ix < 0 || ix >= n || iy < 0 || iy >= n || iz < 0 || iz >= n)
          return -1;
        return grid.index(ix, iy, iz);
      };
      for (int c = 0; c < 8; ++c) {
        const int sa = unpad(base_a + corners[c]);
        if (sa >= 0) out.values[sa] += c0 * t.wa[c];
        const int sb = unpad(base_b + corners[c]);
        if (sb >= 0) out.values[sb] += c0 * t.wb[c];
      }
      out.values[i] -= c0;
      out.values[j] -= c0;
    });
  }
  check_overflow(max_dq);
  // term weights carry one cell volume; the pairing convention
  // <grad, psi> = w sum grad psi absorbs the other, and the unordered-pair
  // double count cancels the 1/2 prefactor
  return out;
}

double dh_dq_pairing(const CollisionOperator& op, const GridFunction& p,
                     const TestFunction& q, const TestFunction& psi) {
  const VelocityGrid& grid = op.grid();
  double total = 0.0;
  double max_dq = 0.0;
  sum_over_pairs(op, q, [&](const CollisionOperator::Term& t, int i, int j,
                            double dq) {
    max_dq = std::max(max_dq, std::abs(dq));
    const Velocity vi = grid.node(i), vj = grid.node(j);
    const Vec3 delta = (t.omega.dot(vj - vi)) * t.omega;
    const double dpsi = psi(vi + delta) + psi(vj - delta) - psi(vi) - psi(vj);
    total += t.weight * t.kernel * std::exp(dq) * dpsi * p.values[i] *
             p.values[j];
  });
  check_overflow(max_dq);
  return total * grid.cell_volume();
}

KineticState weighted_boltzmann_step(const CollisionOperator& op,
                                     const KineticState& phi,
                                     const GridFunction& q_slice, double dt) {
  auto rhs = [&](const GridFunction& f) {
    return op.apply_weighted(f, q_slice);
  };
  KineticState out;
  out.f = rk2_step(rhs, phi.f, dt);
  out.time = phi.time + dt;
  return out;
}

namespace {

std::vector<double> refine_times(const WeightField& g, int substeps) {
  std::vector<double> out;
  const auto& knots = g.times();
  for (size_t k = 0; k + 1 < knots.size(); ++k)
    for (int s = 0; s < substeps; ++s)
      out.push_back(knots[k] + (knots[k + 1] - knots[k]) * s / substeps);
  out.push_back(knots.back());
  return out;
}

}  // namespace

CharacteristicsSolution solve_characteristics(
    const CollisionOperator& op, const WeightField& g, const GridFunction& f_in,
    const CharacteristicsOptions& opts) {
  const VelocityGrid& grid = op.grid();
  g.check_envelope(grid);
  const std::vector<double> times = refine_times(g, opts.substeps_per_knot);
  const int m = static_cast<int>(times.size());

  CharacteristicsSolution sol;
  sol.times = times;

  // g at the solver knots, and the initial guess q = g (eta = e^g)
  std::vector<GridFunction> g_at(m);
  for (int k = 0; k < m; ++k)
    g_at[k] = GridFunction::sample(grid, [&](const Velocity& v) {
      return g(times[k], v);
    });
  std::vector<GridFunction> eta(m);
  for (int k = 0; k < m; ++k)
    eta[k] = GridFunction(grid, g_at[k].values.array().exp().matrix());

  std::vector<GridFunction> phi(m, f_in), gamma(m, f_in), q(m);
  double prev_residual = 1e300;
  int rising = 0;

  for (int sweep = 1; sweep <= opts.max_iterations; ++sweep) {
    // forward sweep of phi = gamma eta through the weighted Boltzmann
    // equation with q = ln eta; phi(0) = f_in e^{q(0)}
    std::vector<GridFunction> q_new(m);
    for (int k = 0; k < m; ++k)
      q_new[k] = GridFunction(grid, eta[k].values.array().log().matrix());
    std::vector<GridFunction> phi_new(m, f_in);
    phi_new[0].values = f_in.values.cwiseProduct(eta[0].values);
    for (int k = 0; k + 1 < m; ++k) {
      const double dt = times[k + 1] - times[k];
      GridFunction q_mid(grid);
      q_mid.values = 0.5 * (q_new[k].values + q_new[k + 1].values);
      auto rhs = [&](const GridFunction& f) {
        return op.apply_weighted(f, q_mid);
      };
      phi_new[k + 1] = rk2_step(rhs, phi_new[k], dt);
    }
    std::vector<GridFunction> gamma_new(m);
    for (int k = 0; k < m; ++k)
      gamma_new[k] = GridFunction(
          grid, phi_new[k].values.cwiseQuotient(eta[k].values));

    // backward sweep of eta from eta(T) = e^{g(T)}:
    //   d_s eta = eta d_s g - R_eta(eta, gamma)
    std::vector<GridFunction> eta_new(m);
    eta_new[m - 1] =
        GridFunction(grid, g_at[m - 1].values.array().exp().matrix());
    for (int k = m - 1; k > 0; --k) {
      const double dt = times[k] - times[k - 1];
      GridFunction gamma_mid(grid);
      gamma_mid.values =
          0.5 * (gamma_new[k].values + gamma_new[k - 1].values);
      GridFunction gdot(grid);
      gdot.values = (g_at[k].values - g_at[k - 1].values) / dt;
      auto rhs = [&](const GridFunction& e) {
        GridFunction r = op.apply_eta_equation(e, gamma_mid);
        r.values = e.values.cwiseProduct(gdot.values) - r.values;
        return r;
      };
      // integrate backward: eta(s - dt) = eta(s) - dt * rhs(midpoint)
      GridFunction k1 = rhs(eta_new[k]);
      GridFunction mid = eta_new[k];
      mid.values -= 0.5 * dt * k1.values;
      GridFunction k2 = rhs(mid);
      eta_new[k - 1] = eta_new[k];
      eta_new[k - 1].values -= dt * k2.values;
    }

    double residual = 0.0;
    for (int k = 0; k < m; ++k) {
      if (sweep > 1) {
        residual = std::max(
            residual, (phi_new[k].values - phi[k].values).lpNorm<Eigen::Infinity>());
        residual = std::max(
            residual, (eta_new[k].values - eta[k].values).lpNorm<Eigen::Infinity>());
      } else {
        residual = 1e100;  // first sweep has no predecessor
      }
    }
    phi = std::move(phi_new);
    gamma = std::move(gamma_new);
    eta = std::move(eta_new);
    q = std::move(q_new);
    sol.iterations = sweep;
    sol.residual = residual;
    if (sweep > 1 && residual < opts.tolerance) {
      sol.converged = true;
      break;
    }
    if (sweep > 1) {
      rising = residual > prev_residual ? rising + 1 : 0;
      if (rising >= 3) {
        std::ostringstream os;
        os << "characteristics sweep is not contracting (residual "
           << residual << "); the horizon T = " << times.back()
           << " likely exceeds the contraction range, try T <= "
           << times.back() / 2;
        throw BoltzmannError(os.str());
      }
      prev_residual = residual;
    }
  }

  sol.phi = phi;
  sol.gamma = gamma;
  sol.eta = eta;
  // q consistent with the final eta
  sol.q.resize(m);
  for (int k = 0; k < m; ++k)
    sol.q[k] = GridFunction(grid, eta[k].values.array().log().matrix());
  return sol;
}

double hat_k(const CollisionOperator& op, const WeightField& g,
             const CharacteristicsSolution& sol, const GridFunction& f_in) {
  const VelocityGrid& grid = op.grid();
  const int m = static_cast<int>(sol.times.size());

  // <f_in, e^{q(0)} - 1>
  double first = 0.0;
  for (int i = 0; i < grid.size(); ++i)
    first += f_in.values[i] * std::expm1(sol.q[0].values[i]);
  first *= grid.cell_volume();

  // <<phi, d_s(q - g)>> with d_s(q - g) = -dH/dp(phi_s, q_s), plus int H ds,
  // both by trapezoid on the solution grid
  std::vector<double> node_vals(m);
  for (int k = 0; k < m; ++k) {
    const TestFunction qk("q", sol.q[k]);
    const GridFunction grad = dh_dp(op, sol.phi[k], qk);
    node_vals[k] = -sol.phi[k].inner(grad) +
                   hamiltonian(op, sol.phi[k], qk);
  }
  double integral = 0.0;
  for (int k = 0; k + 1 < m; ++k)
    integral += 0.5 * (node_vals[k] + node_vals[k + 1]) *
                (sol.times[k + 1] - sol.times[k]);
  return first + integral;
}

double relative_entropy_term(const GridFunction& phi0,
                             const GridFunction& f_in) {
  double total = 0.0;
  for (int i = 0; i < phi0.grid.size(); ++i) {
    const double a = phi0.values[i];
    const double b = f_in.values[i];
    if (a < 0.0)
      throw BoltzmannError("rate functional needs a nonnegative path");
    if (a == 0.0) {
      total += b;
    } else if (b <= 0.0) {
      throw BoltzmannError("initial density vanishes where the path does not");
    } else {
      total += a * std::log(a / b) - a + b;
    }
  }
  return total * phi0.grid.cell_volume();
}

namespace {

std::vector<GridFunction> path_time_derivative(const PathOnGrid& path) {
  const int m = static_cast<int>(path.times.size());
  std::vector<GridFunction> out(m, GridFunction(path.states[0].grid));
  for (int k = 0; k < m; ++k) {
    const int lo = std::max(0, k - 1);
    const int hi = std::min(m - 1, k + 1);
    out[k].values = (path.states[hi].values - path.states[lo].values) /
                    (path.times[hi] - path.times[lo]);
  }
  return out;
}

}  // namespace

double rate_functional(const CollisionOperator& op, const PathOnGrid& phi,
                       const GridFunction& f_in,
                       const std::optional<std::vector<GridFunction>>& q_bar,
                       const RateOptions& opts) {
  const VelocityGrid& grid = op.grid();
  const int m = static_cast<int>(phi.times.size());
  if (m < 2) throw BoltzmannError("rate functional needs a time path");
  const double entropy = relative_entropy_term(phi.states[0], f_in);
  const std::vector<GridFunction> dphi = path_time_derivative(phi);
  const double dt = (phi.times.back() - phi.times.front()) / (m - 1);

  auto objective = [&](const std::vector<GridFunction>& qs) {
    double acc = 0.0;
    for (int k = 0; k < m; ++k) {
      const double wt = (k == 0 || k == m - 1) ? 0.5 : 1.0;
      const TestFunction qk("q", qs[k]);
      acc += wt * (dphi[k].inner(qs[k]) -
                   hamiltonian(op, phi.states[k], qk));
    }
    return acc * dt;
  };

  if (q_bar) {
    if (static_cast<int>(q_bar->size()) != m)
      throw BoltzmannError("q_bar must share the path time grid");
    // consistency: the path must solve the weighted Boltzmann equation for
    // q_bar (interior knots, central differences)
    double worst = 0.0, scale = 0.0;
    for (int k = 1; k + 1 < m; ++k) {
      const GridFunction rhs = op.apply_weighted(phi.states[k], (*q_bar)[k]);
      worst = std::max(
          worst, (dphi[k].values - rhs.values).lpNorm<Eigen::Infinity>());
      scale = std::max(scale, rhs.values.lpNorm<Eigen::Infinity>());
      scale = std::max(scale, dphi[k].values.lpNorm<Eigen::Infinity>());
    }
    if (worst > opts.consistency_tol * std::max(scale, 1e-30))
      throw BoltzmannError(
          "(phi, q_bar) pair does not satisfy the weighted Boltzmann "
          "equation within tolerance");
    return entropy + objective(*q_bar);
  }

  // numeric-sup mode: gradient ascent from q = 0 with backtracking; the
  // objective is concave in q, so every iterate certifies a lower bound
  std::vector<GridFunction> qs(m, GridFunction(grid));
  double value = objective(qs);
  double step = opts.ascent_step;
  for (int it = 0; it < opts.ascent_iterations; ++it) {
    std::vector<GridFunction> grad(m, GridFunction(grid));
    for (int k = 0; k < m; ++k) {
      const double wt = (k == 0 || k == m - 1) ? 0.5 : 1.0;
      grad[k] = dh_dq(op, phi.states[k], qs[k]);
      grad[k].values = wt * (dphi[k].values - grad[k].values);
    }
    bool improved = false;
    while (step > 1e-8) {
      std::vector<GridFunction> trial = qs;
      for (int k = 0; k < m; ++k) trial[k].values += step * grad[k].values;
      double trial_value;
      try {
        trial_value = objective(trial);
      } catch (const BoltzmannError&) {
        step *= 0.5;  // exp overflow: shorten
        continue;
      }
      if (trial_value > value) {
        qs = std::move(trial);
        value = trial_value;
        improved = true;
        step *= 1.3;
        break;
      }
      step *= 0.5;
    }
    if (!improved) break;
  }
  return entropy + value;
}

}  // namespace bgl
