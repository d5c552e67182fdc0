#include "bgl/boltzmann.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bgl {

namespace {

inline double gather8(const double* base, const int* corners,
                      const double* w) {
  return w[0] * base[corners[0]] + w[1] * base[corners[1]] +
         w[2] * base[corners[2]] + w[3] * base[corners[3]] +
         w[4] * base[corners[4]] + w[5] * base[corners[5]] +
         w[6] * base[corners[6]] + w[7] * base[corners[7]];
}

}  // namespace

CollisionOperator::CollisionOperator(const VelocityGrid& grid,
                                     const QuadratureConfig& cfg)
    : grid_(grid), cfg_(cfg) {
  cfg_.sphere.validate();
  const int n = grid_.n();
  pad_ = static_cast<int>(std::ceil(std::sqrt(3.0) * (n - 1))) + 2;
  const int np = n + 2 * pad_;

  m_ref_ = VectorXd(grid_.size());
  const MaxwellianParams ref{1.0, Velocity::Zero(), grid_.theta_ref()};
  for (int i = 0; i < grid_.size(); ++i)
    m_ref_[i] = maxwellian(ref, grid_.node(i));

  // Conservation fix: correction directions are the collision invariants
  // times the reference Maxwellian, so corrections decay in the tail instead
  // of polluting nodes whose density is exponentially small (the f / M_ref
  // ratio would amplify flat corrections catastrophically there).
  {
    Eigen::MatrixXd raw(grid_.size(), 5);
    for (int i = 0; i < grid_.size(); ++i) {
      const Velocity v = grid_.node(i);
      raw(i, 0) = 1.0;
      raw(i, 1) = v.x();
      raw(i, 2) = v.y();
      raw(i, 3) = v.z();
      raw(i, 4) = v.squaredNorm();
    }
    inv_basis_ = raw;
    const Eigen::MatrixXd weighted = m_ref_.asDiagonal() * raw;
    const Eigen::MatrixXd gram =
        grid_.cell_volume() * raw.transpose() * weighted;
    corr_dirs_ = weighted * gram.inverse();
  }

  // quadrature terms: one per (unordered pair offset, contributing omega)
  const int stride = std::max(1, cfg_.pair_stride);
  const double stride_scale = std::pow(double(stride), 3);
  const double h = grid_.spacing();
  for (int dx = -(n - 1); dx <= n - 1; ++dx)
    for (int dy = -(n - 1); dy <= n - 1; ++dy)
      for (int dz = -(n - 1); dz <= n - 1; ++dz) {
        // lexicographically positive half-space picks each unordered pair once
        if (dx < 0) continue;
        if (dx == 0 && dy < 0) continue;
        if (dx == 0 && dy == 0 && dz <= 0) continue;
        if ((dx % stride) || (dy % stride) || (dz % stride)) continue;
        const Vec3 d(dx, dy, dz);
        for (int k = 0; k < cfg_.sphere.size(); ++k) {
          const Vec3& omega = cfg_.sphere.nodes[k];
          const double dw = d.dot(omega);
          if (dw >= 0.0) continue;  // the antipode carries this pair
          Term t;
          t.doff[0] = dx;
          t.doff[1] = dy;
          t.doff[2] = dz;
          t.kernel = -h * dw;  // ((v_i - v_j) . omega)_+ = h |d . omega|
          t.weight = cfg_.sphere.weights[k] * grid_.cell_volume() * stride_scale;
          t.omega = omega;
          // post-collisional offsets in node units: v' = v_i + h g,
          // v'* = v_j - h g with g = (d . omega) omega
          const Vec3 g = dw * omega;
          int base_a[3], base_b[3];
          double fr_a[3], fr_b[3];
          for (int a = 0; a < 3; ++a) {
            const double fa = std::floor(g[a]);
            base_a[a] = static_cast<int>(fa);
            fr_a[a] = g[a] - fa;
            const double fb = std::floor(-g[a]);
            base_b[a] = static_cast<int>(fb);
            fr_b[a] = -g[a] - fb;
          }
          t.padded_off_a =
              (base_a[0] * np + base_a[1]) * np + base_a[2];
          t.padded_off_b =
              (base_b[0] * np + base_b[1]) * np + base_b[2];
          int c = 0;
          for (int cx = 0; cx <= 1; ++cx)
            for (int cy = 0; cy <= 1; ++cy)
              for (int cz = 0; cz <= 1; ++cz, ++c) {
                t.wa[c] = (cx ? fr_a[0] : 1 - fr_a[0]) *
                          (cy ? fr_a[1] : 1 - fr_a[1]) *
                          (cz ? fr_a[2] : 1 - fr_a[2]);
                t.wb[c] = (cx ? fr_b[0] : 1 - fr_b[0]) *
                          (cy ? fr_b[1] : 1 - fr_b[1]) *
                          (cz ? fr_b[2] : 1 - fr_b[2]);
              }
          terms_.push_back(t);
        }
      }
}

std::vector<double> CollisionOperator::padded_ratio(
    const GridFunction& f) const {
  const int n = grid_.n(), np = n + 2 * pad_;
  std::vector<double> u(static_cast<size_t>(np) * np * np, 0.0);
  for (int ix = 0; ix < n; ++ix)
    for (int iy = 0; iy < n; ++iy) {
      const int i0 = grid_.index(ix, iy, 0);
      double* row = u.data() + padded_index(ix, iy, 0);
      for (int iz = 0; iz < n; ++iz)
        row[iz] = f.values[i0 + iz] / m_ref_[i0 + iz];
    }
  return u;
}

namespace {

std::vector<double> padded_plain(const VelocityGrid& grid, int pad,
                                 const VectorXd& values, double ambient) {
  const int n = grid.n(), np = n + 2 * pad;
  std::vector<double> u(static_cast<size_t>(np) * np * np, ambient);
  for (int ix = 0; ix < n; ++ix)
    for (int iy = 0; iy < n; ++iy) {
      const int i0 = grid.index(ix, iy, 0);
      double* row =
          u.data() + ((ix + pad) * np + (iy + pad)) * np + pad;
      for (int iz = 0; iz < n; ++iz) row[iz] = values[i0 + iz];
    }
  return u;
}

}  // namespace

GridFunction CollisionOperator::apply(const GridFunction& f) const {
  if (!(f.grid == grid_)) throw BoltzmannError("grid mismatch");
  const int np = grid_.n() + 2 * pad_;
  int corners[8];
  {
    int c = 0;
    for (int cx = 0; cx <= 1; ++cx)
      for (int cy = 0; cy <= 1; ++cy)
        for (int cz = 0; cz <= 1; ++cz, ++c)
          corners[c] = (cx * np + cy) * np + cz;
  }
  const std::vector<double> u = padded_ratio(f);
  const double* up = u.data();
  const double* mr = m_ref_.data();
  GridFunction out(grid_);
  double* o = out.values.data();

  for (const Term& t : terms_) {
    const double cw = t.weight * t.kernel;
    const int off_a = t.padded_off_a, off_b = t.padded_off_b;
    const double* wa = t.wa;
    const double* wb = t.wb;
    for_each_pair(t, [&](int i, int j, int pi, int pj) {
      const double ua = gather8(up + pi + off_a, corners, wa);
      const double ub = gather8(up + pj + off_b, corners, wb);
      const double q = cw * (ua * ub - up[pi] * up[pj]);
      const double mm = mr[i] * mr[j] * q;
      o[i] += mm;
      o[j] += mm;
    });
  }
  if (cfg_.conservation_projection) project_conserved(out);
  return out;
}

GridFunction CollisionOperator::apply_weighted(const GridFunction& f,
                                               const GridFunction& q) const {
  if (!(f.grid == grid_)) throw BoltzmannError("grid mismatch");
  const int np = grid_.n() + 2 * pad_;
  int corners[8];
  {
    int c = 0;
    for (int cx = 0; cx <= 1; ++cx)
      for (int cy = 0; cy <= 1; ++cy)
        for (int cz = 0; cz <= 1; ++cz, ++c)
          corners[c] = (cx * np + cy) * np + cz;
  }
  const std::vector<double> u = padded_ratio(f);
  const std::vector<double> qq = padded_plain(grid_, pad_, q.values, 0.0);
  const double* up = u.data();
  const double* qp = qq.data();
  const double* mr = m_ref_.data();
  GridFunction out(grid_);
  double* o = out.values.data();
  double max_dq = 0.0;

  for (const Term& t : terms_) {
    const double cw = t.weight * t.kernel;
    const int off_a = t.padded_off_a, off_b = t.padded_off_b;
    for_each_pair(t, [&](int i, int j, int pi, int pj) {
      const double qa = gather8(qp + pi + off_a, corners, t.wa);
      const double qb = gather8(qp + pj + off_b, corners, t.wb);
      const double dq = qa + qb - qp[pi] - qp[pj];
      if (std::abs(dq) > max_dq) max_dq = std::abs(dq);
      const double edq = std::exp(dq);
      const double ua = gather8(up + pi + off_a, corners, t.wa);
      const double ub = gather8(up + pj + off_b, corners, t.wb);
      // the loss keeps the ratio form and the multiplication order matches
      // the unweighted operator, so q = 0 reduces to it bit-for-bit
      const double qv = cw * (ua * ub / edq - up[pi] * up[pj] * edq);
      const double mm = mr[i] * mr[j] * qv;
      o[i] += mm;
      o[j] += mm;
    });
  }
  if (!std::isfinite(out.values.sum())) {
    std::ostringstream os;
    os << "overflow in exp(Dq); max |Dq| = " << max_dq;
    throw BoltzmannError(os.str());
  }
  if (cfg_.conservation_projection) project_conserved(out);
  return out;
}

GridFunction CollisionOperator::apply_gamma_equation(
    const GridFunction& gamma, const GridFunction& eta) const {
  const int np = grid_.n() + 2 * pad_;
  int corners[8];
  {
    int c = 0;
    for (int cx = 0; cx <= 1; ++cx)
      for (int cy = 0; cy <= 1; ++cy)
        for (int cz = 0; cz <= 1; ++cz, ++c)
          corners[c] = (cx * np + cy) * np + cz;
  }
  const std::vector<double> u = padded_ratio(gamma);
  const double* up = u.data();
  const double* mr = m_ref_.data();
  const double* ev = eta.values.data();
  GridFunction out(grid_);
  double* o = out.values.data();
  for (const Term& t : terms_) {
    const double cw = t.weight * t.kernel;
    for_each_pair(t, [&](int i, int j, int pi, int pj) {
      const double ua = gather8(up + pi + t.padded_off_a, corners, t.wa);
      const double ub = gather8(up + pj + t.padded_off_b, corners, t.wb);
      const double q = cw * (mr[i] * mr[j] * ua * ub -
                             gamma.values[i] * gamma.values[j]);
      o[i] += ev[j] * q;
      o[j] += ev[i] * q;
    });
  }
  // no conservation projection: this right-hand side has no moment
  // invariance of its own (only the combined phi = gamma eta flow does)
  return out;
}

GridFunction CollisionOperator::apply_eta_equation(
    const GridFunction& eta, const GridFunction& gamma) const {
  const int np = grid_.n() + 2 * pad_;
  int corners[8];
  {
    int c = 0;
    for (int cx = 0; cx <= 1; ++cx)
      for (int cy = 0; cy <= 1; ++cy)
        for (int cz = 0; cz <= 1; ++cz, ++c)
          corners[c] = (cx * np + cy) * np + cz;
  }
  // eta is a test-register function with ambient value 1 (q -> 0 off grid)
  const std::vector<double> e = padded_plain(grid_, pad_, eta.values, 1.0);
  const double* ep = e.data();
  const double* gv = gamma.values.data();
  GridFunction out(grid_);
  double* o = out.values.data();
  for (const Term& t : terms_) {
    const double cw = t.weight * t.kernel;
    for_each_pair(t, [&](int i, int j, int pi, int pj) {
      const double ea = gather8(ep + pi + t.padded_off_a, corners, t.wa);
      const double eb = gather8(ep + pj + t.padded_off_b, corners, t.wb);
      const double q = cw * (ea * eb - ep[pi] * ep[pj]);
      o[i] += gv[j] * q;
      o[j] += gv[i] * q;
    });
  }
  return out;
}

void CollisionOperator::project_conserved(GridFunction& g) const {
  const double w = grid_.cell_volume();
  // applied twice: the second pass removes the floating-point residual of
  // the first so the discrete moments vanish to full precision
  for (int pass = 0; pass < 2; ++pass) {
    const Eigen::VectorXd m = w * (inv_basis_.transpose() * g.values);
    g.values -= corr_dirs_ * m;
  }
}

double CollisionOperator::max_collision_frequency(const GridFunction& f) const {
  const int n3 = grid_.size();
  double worst = 0.0;
  for (int i = 0; i < n3; ++i) {
    const Velocity vi = grid_.node(i);
    double nu = 0.0;
    for (int j = 0; j < n3; ++j)
      nu += std::max(0.0, f.values[j]) * (vi - grid_.node(j)).norm();
    worst = std::max(worst, nu * M_PI * grid_.cell_volume());
  }
  return worst;
}

Moments moments(const GridFunction& f) {
  Moments m;
  const double w = f.grid.cell_volume();
  for (int i = 0; i < f.grid.size(); ++i) {
    const Velocity v = f.grid.node(i);
    const double fw = f.values[i] * w;
    m.mass += fw;
    m.momentum += fw * v;
    m.energy += 0.5 * fw * v.squaredNorm();
  }
  return m;
}

MaxwellianParams equilibrium_from_moments(const GridFunction& f) {
  const Moments m = moments(f);
  if (m.mass <= 0.0) throw BoltzmannError("nonpositive mass");
  MaxwellianParams p;
  p.rho = m.mass;
  p.u = m.momentum / m.mass;
  p.theta = (2.0 * m.energy / m.mass - p.u.squaredNorm()) / 3.0;
  return p;
}

double h_functional(const GridFunction& f, double negativity_tol) {
  const double floor = -negativity_tol * std::max(1e-300, f.values.maxCoeff());
  double h = 0.0;
  for (int i = 0; i < f.grid.size(); ++i) {
    const double v = f.values[i];
    if (v < floor)
      throw BoltzmannError("h_functional: negative density entry");
    if (v > 0.0) h += v * std::log(v);
  }
  return h * f.grid.cell_volume();
}

double temperature_anisotropy(const GridFunction& f) {
  const Moments m = moments(f);
  const Velocity u = m.momentum / m.mass;
  Vec3 theta = Vec3::Zero();
  const double w = f.grid.cell_volume();
  for (int i = 0; i < f.grid.size(); ++i) {
    const Velocity d = f.grid.node(i) - u;
    for (int a = 0; a < 3; ++a) theta[a] += f.values[i] * w * d[a] * d[a];
  }
  theta /= m.mass;
  const double mean = theta.sum() / 3.0;
  return (theta.x() - mean) / mean;
}

double mean_collision_rate(const CollisionOperator& op,
                           const GridFunction& f) {
  const auto& grid = op.grid();
  const int n3 = grid.size();
  double total = 0.0, mass = 0.0;
  for (int i = 0; i < n3; ++i) {
    mass += f.values[i];
    double nu = 0.0;
    for (int j = 0; j < n3; ++j)
      nu += f.values[j] * (grid.node(i) - grid.node(j)).norm();
    total += f.values[i] * nu;
  }
  return M_PI * grid.cell_volume() * total / mass;
}

GridFunction rk2_step(
    const std::function<GridFunction(const GridFunction&)>& rhs,
    const GridFunction& f, double dt) {
  GridFunction k1 = rhs(f);
  GridFunction mid = f;
  mid.values += 0.5 * dt * k1.values;
  GridFunction k2 = rhs(mid);
  GridFunction out = f;
  out.values += dt * k2.values;
  return out;
}

std::vector<KineticState> solve_homogeneous(
    const CollisionOperator& op, const GridFunction& f0, double t_end,
    const SolveOptions& opts, const std::vector<double>& snapshot_times) {
  if (opts.check_stability) {
    const double nu = op.max_collision_frequency(f0);
    if (opts.dt * nu > 0.5 + 1e-12) {
      std::ostringstream os;
      os << "dt " << opts.dt << " violates dt * nu_max = " << opts.dt * nu
         << " <= 0.5";
      throw BoltzmannError(os.str());
    }
  }
  std::vector<double> marks = snapshot_times;
  marks.push_back(t_end);
  std::sort(marks.begin(), marks.end());

  auto rhs = [&](const GridFunction& g) { return op.apply(g); };

  std::vector<KineticState> out;
  GridFunction f = f0;
  double t = 0.0;
  const double fmax0 = f0.values.maxCoeff();
  for (double mark : marks) {
    while (t < mark - 1e-13) {
      const double step = std::min(opts.dt, mark - t);
      f = rk2_step(rhs, f, step);
      t += step;
      const double neg = f.values.minCoeff();
      if (neg < -opts.negativity_tol * fmax0)
        throw BoltzmannError(
            "negativity beyond tolerance; use a smaller dt (positivity is "
            "monitored, not enforced)");
    }
    out.push_back({f, mark});
  }
  return out;
}

void dsmc_step(std::vector<Velocity>& velocities, double dt, DsmcOptions& opts,
               Rng& rng, DsmcStats* stats) {
  const int n = static_cast<int>(velocities.size());
  if (n < 2 || dt <= 0.0) return;
  if (opts.majorant <= 0.0) {
    double vmax = 0.0;
    for (const auto& v : velocities) vmax = std::max(vmax, v.norm());
    opts.majorant = 2.0 * vmax + 1e-12;
  }
  const double pair_rate =
      0.5 * double(n) * double(n - 1) * opts.particle_weight * M_PI *
      opts.majorant;
  const std::uint64_t candidates = rng.poisson(pair_rate * dt);
  for (std::uint64_t c = 0; c < candidates; ++c) {
    const int i = std::min(int(rng.uniform() * n), n - 1);
    int j = std::min(int(rng.uniform() * (n - 1)), n - 2);
    if (j >= i) ++j;
    const Vec3 rel = velocities[i] - velocities[j];
    const double g = rel.norm();
    if (stats) ++stats->candidates;
    if (g > opts.majorant) {
      // majorant violated: accept (clamped), then double it for later steps
      opts.majorant *= 2.0;
      if (stats) ++stats->majorant_doublings;
    } else if (rng.uniform() * opts.majorant > g) {
      continue;  // null collision
    }
    if (g == 0.0) continue;
    // omega with density ((v-v*). omega)_+ / (pi |v-v*|): cosine-weighted
    // hemisphere around the relative direction
    const Vec3 uhat = rel / g;
    Vec3 e1 = std::abs(uhat.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
    e1 = (e1 - e1.dot(uhat) * uhat).normalized();
    const Vec3 e2 = uhat.cross(e1);
    const double ct = std::sqrt(rng.uniform());
    const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
    const double phi = 2.0 * M_PI * rng.uniform();
    const Vec3 omega = ct * uhat + st * (std::cos(phi) * e1 + std::sin(phi) * e2);
    const auto post = collide(velocities[i], velocities[j], omega);
    velocities[i] = post.v_prime;
    velocities[j] = post.v_star_prime;
    if (stats) ++stats->collisions;
  }
}

GridFunction duhamel_iterate(const CollisionOperator& op,
                             const GridFunction& f0, double t, int n_terms,
                             int time_nodes) {
  if (n_terms <= 0) return f0;
  if (time_nodes < 3) time_nodes = 3;
  const int m = time_nodes;
  const double dt = t / (m - 1);
  std::vector<GridFunction> iterate(m, f0);
  const double norm0 = f0.values.lpNorm<Eigen::Infinity>();

  for (int term = 1; term <= n_terms; ++term) {
    std::vector<GridFunction> rhs;
    rhs.reserve(m);
    for (int k = 0; k < m; ++k) rhs.push_back(op.apply(iterate[k]));
    std::vector<GridFunction> next(m, f0);
    VectorXd acc = VectorXd::Zero(f0.grid.size());
    for (int k = 1; k < m; ++k) {
      acc += 0.5 * dt * (rhs[k - 1].values + rhs[k].values);
      next[k].values = f0.values + acc;
    }
    iterate = std::move(next);
    const double norm = iterate[m - 1].values.lpNorm<Eigen::Infinity>();
    if (norm > 2.0 * norm0) {
      std::ostringstream os;
      os << "Picard iteration diverging at term " << term
         << " (last stable term " << term - 1 << ")";
      throw BoltzmannError(os.str());
    }
  }
  return iterate[m - 1];
}

double weak_form_pairing(const CollisionOperator& op, const GridFunction& f,
                         const TestFunction& psi, int variant) {
  const auto& grid = op.grid();
  const auto& rule = op.config().sphere;
  const double w2 = grid.cell_volume() * grid.cell_volume();
  const int n3 = grid.size();
  const MaxwellianParams ref{1.0, Velocity::Zero(), grid.theta_ref()};

  double total = 0.0;
  for (int i = 0; i < n3; ++i) {
    const Velocity vi = grid.node(i);
    for (int j = 0; j < n3; ++j) {
      const Velocity vj = grid.node(j);
      const Vec3 rel = vi - vj;
      for (int k = 0; k < rule.size(); ++k) {
        const double kern = rel.dot(rule.nodes[k]);
        if (kern <= 0.0) continue;
        const auto post = collide(vi, vj, rule.nodes[k]);
        const double ff = f.values[i] * f.values[j];
        double contrib = 0.0;
        switch (variant) {
          case 1:
            contrib = (psi(post.v_prime) - psi(vi)) * ff;
            break;
          case 2:
            contrib = (psi(post.v_star_prime) - psi(vj)) * ff;
            break;
          case 3:
            contrib = 0.5 *
                      (psi(post.v_prime) + psi(post.v_star_prime) - psi(vi) -
                       psi(vj)) *
                      ff;
            break;
          case 4: {
            // gain uses the same weighted interpolation as the operator
            const auto sa = grid.stencil(post.v_prime);
            const auto sb = grid.stencil(post.v_star_prime);
            double ua = 0.0, ub = 0.0;
            for (int c = 0; c < sa.count; ++c)
              ua += sa.w[c] * f.values[sa.idx[c]] /
                    maxwellian(ref, grid.node(sa.idx[c]));
            for (int c = 0; c < sb.count; ++c)
              ub += sb.w[c] * f.values[sb.idx[c]] /
                    maxwellian(ref, grid.node(sb.idx[c]));
            const double gain =
                maxwellian(ref, vi) * maxwellian(ref, vj) * ua * ub;
            contrib = 0.25 *
                      (psi(vi) + psi(vj) - psi(post.v_prime) -
                       psi(post.v_star_prime)) *
                      (gain - ff);
            break;
          }
          default:
            throw BoltzmannError("weak form variant must be 1..4");
        }
        total += contrib * kern * rule.weights[k] * w2;
      }
    }
  }
  return total;
}

}  // namespace bgl
