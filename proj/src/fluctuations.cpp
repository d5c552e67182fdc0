#include "bgl/fluctuations.hpp"

#include <cmath>
#include <sstream>

#include <unsupported/Eigen/MatrixFunctions>

namespace bgl {

namespace {

// sparse D-stencil of one quadrature term: weights of
// T phi(v') + T phi(v'*) - phi_i - phi_j over node indices
struct DStencil {
  int idx[18];
  double w[18];
  int count = 0;
};

// clipping against the box happens here: stencil corners outside contribute
// nothing (the test-function register extends by zero)
DStencil d_stencil(const VelocityGrid& grid, const CollisionOperator::Term& t,
                   int i, int j) {
  DStencil s;
  const int n = grid.n();
  auto add = [&](int node, double weight) {
    for (int k = 0; k < s.count; ++k)
      if (s.idx[k] == node) {
        s.w[k] += weight;
        return;
      }
    s.idx[s.count] = node;
    s.w[s.count] = weight;
    ++s.count;
  };
  const int iz = i % n, iy = (i / n) % n, ix = i / (n * n);
  const int jz = j % n, jy = (j / n) % n, jx = j / (n * n);
  const Vec3 g = (Vec3(t.doff[0], t.doff[1], t.doff[2]).dot(t.omega)) * t.omega;
  int base_a[3] = {ix, iy, iz}, base_b[3] = {jx, jy, jz};
  for (int a = 0; a < 3; ++a) {
    base_a[a] += static_cast<int>(std::floor(g[a]));
    base_b[a] += static_cast<int>(std::floor(-g[a]));
  }
  int c = 0;
  for (int cx = 0; cx <= 1; ++cx)
    for (int cy = 0; cy <= 1; ++cy)
      for (int cz = 0; cz <= 1; ++cz, ++c) {
        const int ax = base_a[0] + cx, ay = base_a[1] + cy, az = base_a[2] + cz;
        if (ax >= 0 && ax < n && ay >= 0 && ay < n && az >= 0 && az < n)
          add(grid.index(ax, ay, az), t.wa[c]);
        const int bx = base_b[0] + cx, by = base_b[1] + cy, bz = base_b[2] + cz;
        if (bx >= 0 && bx < n && by >= 0 && by < n && bz >= 0 && bz < n)
          add(grid.index(bx, by, bz), t.wb[c]);
      }
  add(i, -1.0);
  add(j, -1.0);
  return s;
}

Eigen::MatrixXd invariant_projector(const VelocityGrid& grid) {
  Eigen::MatrixXd basis(grid.size(), 5);
  for (int i = 0; i < grid.size(); ++i) {
    const Velocity v = grid.node(i);
    basis(i, 0) = 1.0;
    basis(i, 1) = v.x();
    basis(i, 2) = v.y();
    basis(i, 3) = v.z();
    basis(i, 4) = v.squaredNorm();
  }
  // orthonormalize (uniform weights)
  for (int k = 0; k < 5; ++k) {
    for (int l = 0; l < k; ++l)
      basis.col(k) -= basis.col(l).dot(basis.col(k)) * basis.col(l);
    basis.col(k) /= basis.col(k).norm();
  }
  return Eigen::MatrixXd::Identity(grid.size(), grid.size()) -
         basis * basis.transpose();
}

}  // namespace

LinearizedOperator assemble_linearized(const CollisionOperator& op,
                                       const GridFunction& f, bool adjoint) {
  const VelocityGrid& grid = op.grid();
  const int n3 = grid.size();
  const double w = grid.cell_volume();

  // At the reference equilibrium the adjoint is taken from the Dirichlet
  // form of the noise kernel, L* = -M^{-1} Q / (2 w): the same collision
  // kernel rearranged through the exact symmetrization identity
  // <phi, M L* psi> = -(1/2) Cov(phi, psi). This makes the discrete
  // fluctuation-dissipation relation exact: M L*(g) = L(M g) identically,
  // the equilibrium Gaussian measure is exactly stationary for the OU
  // system, and the spectrum is nonpositive.
  const bool at_reference =
      (f.values - op.reference()).lpNorm<Eigen::Infinity>() <=
      1e-12 * op.reference().lpNorm<Eigen::Infinity>();
  if (at_reference) {
    // the raw form keeps invariant annihilation exact and the tail rows
    // Maxwellian-enveloped (the PSD eigen-rebuild would flatten them at the
    // rounding level, which M^{-1} amplifies)
    Eigen::MatrixXd a = (-0.5 / w) * noise_form_raw(op, f);
    for (int i = 0; i < n3; ++i) a.row(i) /= op.reference()[i];
    LinearizedOperator out;
    out.grid = grid;
    out.adjoint = adjoint;
    out.background = f;
    out.matrix = adjoint ? a : Eigen::MatrixXd(a.transpose());
    return out;
  }

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n3, n3);
  for (const auto& t : op.terms()) {
    const double cw = t.weight * t.kernel;  // = w_omega * cell_volume * kernel
    op.for_each_pair(t, [&](int i, int j, int, int) {
      const DStencil s = d_stencil(grid, t, i, j);
      const double ci = cw * f.values[j];
      const double cj = cw * f.values[i];
      for (int k = 0; k < s.count; ++k) {
        a(i, s.idx[k]) += ci * s.w[k];
        a(j, s.idx[k]) += cj * s.w[k];
      }
    });
  }

  if (op.config().conservation_projection) {
    // right-multiplying by the invariant projector makes the adjoint
    // annihilate {1, v, |v|^2} exactly; equivalently the direct transpose
    // gets exactly vanishing output moments
    a = a * invariant_projector(grid);
  }

  LinearizedOperator out;
  out.grid = grid;
  out.adjoint = adjoint;
  out.background = f;
  out.matrix = adjoint ? a : Eigen::MatrixXd(a.transpose());
  return out;
}

Eigen::MatrixXd noise_form_raw(const CollisionOperator& op,
                               const GridFunction& f) {
  const VelocityGrid& grid = op.grid();
  const int n3 = grid.size();
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n3, n3);
  const double w = grid.cell_volume();

  for (const auto& t : op.terms()) {
    const double cw = w * t.weight * t.kernel;  // w^2 w_omega kernel
    op.for_each_pair(t, [&](int i, int j, int, int) {
      const DStencil s = d_stencil(grid, t, i, j);
      const double c = cw * f.values[i] * f.values[j];
      for (int a = 0; a < s.count; ++a)
        for (int b = 0; b < s.count; ++b)
          q(s.idx[a], s.idx[b]) += c * s.w[a] * s.w[b];
    });
  }

  q = 0.5 * (q + q.transpose()).eval();
  if (op.config().conservation_projection) {
    // congruence with the Maxwellian-weighted conservation fix: symmetric,
    // PSD-preserving, annihilates invariant test functions exactly, and the
    // corrections decay like the reference Maxwellian in the tail (a flat
    // orthogonal projector would plant O(poly) corrections on nodes whose
    // reference density is exponentially small)
    const Eigen::MatrixXd c =
        Eigen::MatrixXd::Identity(n3, n3) -
        w * op.correction_directions() * op.invariants().transpose();
    // (I - K)^T annihilates invariant test vectors, so the congruence
    // Q <- (I - K) Q (I - K)^T zeroes their pairings on both slots
    q = (c * q * c.transpose()).eval();
    q = 0.5 * (q + q.transpose()).eval();
  }
  return q;
}

NoiseCovariance noise_covariance(const CollisionOperator& op,
                                 const GridFunction& f) {
  const VelocityGrid& grid = op.grid();
  const int n3 = grid.size();
  Eigen::MatrixXd q = noise_form_raw(op, f);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(q);
  const Eigen::VectorXd lam = eig.eigenvalues();
  const double trace = std::max(lam.sum(), 1e-300);
  double clipped = 0.0;
  Eigen::VectorXd lam_pos = lam;
  for (int k = 0; k < n3; ++k)
    if (lam_pos[k] < 0.0) {
      clipped -= lam_pos[k];
      lam_pos[k] = 0.0;
    }
  if (clipped > 1e-6 * trace) {
    std::ostringstream os;
    os << "noise covariance lost " << clipped / trace
       << " of its trace to PSD clipping; discretization too coarse";
    throw BoltzmannError(os.str());
  }

  NoiseCovariance out;
  out.grid = grid;
  out.background = f;
  out.form = eig.eigenvectors() * lam_pos.asDiagonal() *
             eig.eigenvectors().transpose();
  out.factor = eig.eigenvectors() * lam_pos.cwiseSqrt().asDiagonal();
  out.clipped_trace = clipped / trace;
  return out;
}

double recollision_pairing(const CollisionOperator& op, const GridFunction& g,
                           const GridFunction& phi, const GridFunction& psi) {
  const GridFunction action = recollision_action(op, g, psi);
  // <R, phi x psi> = w^2 sum_i phi_i action_i / w  (action carries one w)
  return op.grid().cell_volume() * phi.values.dot(action.values);
}

GridFunction recollision_action(const CollisionOperator& op,
                                const GridFunction& g,
                                const GridFunction& psi) {
  // same gain/loss structure as the gamma sweep, but never projected:
  // out(v) = int (g' g'* - g g*) psi(v*) ((v-v*).omega)_+ dv* domega
  const VelocityGrid& grid = op.grid();
  const std::vector<double> u = op.padded_ratio(g);
  const int np = grid.n() + 2 * op.pad();
  int corners[8];
  {
    int c = 0;
    for (int cx = 0; cx <= 1; ++cx)
      for (int cy = 0; cy <= 1; ++cy)
        for (int cz = 0; cz <= 1; ++cz, ++c)
          corners[c] = (cx * np + cy) * np + cz;
  }
  const double* up = u.data();
  const double* mr = op.reference().data();
  GridFunction out(grid);
  double* o = out.values.data();
  for (const auto& t : op.terms()) {
    const double cw = t.weight * t.kernel;
    op.for_each_pair(t, [&](int i, int j, int pi, int pj) {
      double ua = 0.0, ub = 0.0;
      for (int c = 0; c < 8; ++c) {
        ua += t.wa[c] * up[pi + t.padded_off_a + corners[c]];
        ub += t.wb[c] * up[pj + t.padded_off_b + corners[c]];
      }
      const double q = cw * (mr[i] * mr[j] * ua * ub -
                             g.values[i] * g.values[j]);
      o[i] += psi.values[j] * q;
      o[j] += psi.values[i] * q;
    });
  }
  // with the projection on, pairings against collision invariants vanish
  // exactly, as they do for the collision integral itself
  if (op.config().conservation_projection) op.project_conserved(out);
  return out;
}

OUPath simulate_ou(const LinearizedOperator& direct, const NoiseCovariance& q,
                   const GridFunction& f_in, const OUOptions& opts,
                   std::uint64_t seed) {
  const VelocityGrid& grid = direct.grid;
  const int n3 = grid.size();
  const double w = grid.cell_volume();
  if (opts.dt * direct.norm_estimate() > 0.5 + 1e-12)
    throw BoltzmannError("simulate_ou: dt violates dt * |L| <= 0.5");

  Rng rng(seed);
  OUPath path;
  path.seed = seed;

  // zeta_0 with <zeta0,phi><zeta0,psi> = int phi psi f_in: independent node
  // amplitudes sqrt(f_i / w)
  VectorXd zeta(n3);
  for (int i = 0; i < n3; ++i)
    zeta[i] = std::sqrt(std::max(0.0, f_in.values[i]) / w) * rng.normal();

  const double scale0 = std::max(zeta.norm(), 1e-12);
  const double sq_dt = std::sqrt(opts.dt);
  const int steps = static_cast<int>(std::round(opts.t_end / opts.dt));
  VectorXd xi(n3);

  path.times.push_back(0.0);
  path.samples.emplace_back(grid, zeta);
  for (int s = 1; s <= steps; ++s) {
    for (int i = 0; i < n3; ++i) xi[i] = rng.normal();
    zeta += opts.dt * (direct.matrix * zeta) + (sq_dt / w) * (q.factor * xi);
    if (zeta.norm() > opts.blowup_factor * scale0 * 10.0)
      throw BoltzmannError("simulate_ou: trajectory norm blew up");
    if (s % opts.sample_stride == 0) {
      path.times.push_back(s * opts.dt);
      path.samples.emplace_back(grid, zeta);
    }
  }
  return path;
}

AdjointPropagator::AdjointPropagator(const CollisionOperator& op,
                                     const GridFunction& m)
    : op_(&op), constant_(true) {
  states_.push_back(m);
  times_.push_back(0.0);
  frozen_.push_back(assemble_linearized(op, m, /*adjoint=*/true));
}

AdjointPropagator::AdjointPropagator(const CollisionOperator& op,
                                     const std::vector<double>& times,
                                     const std::vector<GridFunction>& states,
                                     int rk_steps)
    : op_(&op),
      constant_(false),
      rk_steps_(rk_steps),
      times_(times),
      states_(states) {
  for (const auto& f : states_)
    frozen_.push_back(assemble_linearized(op, f, /*adjoint=*/true));
}

const GridFunction& AdjointPropagator::background_at(double tau) const {
  if (constant_) return states_[0];
  int best = 0;
  double dist = 1e300;
  for (size_t k = 0; k < times_.size(); ++k)
    if (std::abs(times_[k] - tau) < dist) {
      dist = std::abs(times_[k] - tau);
      best = static_cast<int>(k);
    }
  return states_[best];
}

GridFunction AdjointPropagator::apply(double t, double s,
                                      const GridFunction& psi) const {
  if (t < s - 1e-12)
    throw BoltzmannError("AdjointPropagator: needs s <= t");
  if (constant_) {
    const Eigen::MatrixXd e = ((t - s) * frozen_[0].matrix).exp();
    return GridFunction(psi.grid, e * psi.values);
  }
  // backward integration of d/dsigma u = -L*_sigma u from sigma=t to sigma=s
  // with the frozen matrix of the nearest path knot, RK2
  GridFunction u = psi;
  const double span = t - s;
  if (span <= 0.0) return u;
  const int steps = std::max(1, rk_steps_);
  const double h = span / steps;
  for (int k = 0; k < steps; ++k) {
    const double sigma = t - k * h;
    // frozen matrix at the midpoint of the substep
    int knot = 0;
    double dist = 1e300;
    for (size_t q = 0; q < times_.size(); ++q)
      if (std::abs(times_[q] - (sigma - 0.5 * h)) < dist) {
        dist = std::abs(times_[q] - (sigma - 0.5 * h));
        knot = static_cast<int>(q);
      }
    const Eigen::MatrixXd& a = frozen_[knot].matrix;
    const VectorXd k1 = a * u.values;
    const VectorXd k2 = a * (u.values + 0.5 * h * k1);
    u.values += h * k2;
  }
  return u;
}

double spohn_covariance(const CollisionOperator& op,
                        const AdjointPropagator& u, double t, double s,
                        const GridFunction& psi, const GridFunction& phi,
                        int quad_nodes) {
  const double w = op.grid().cell_volume();
  const GridFunction ut = u.apply(t, s, psi);
  const GridFunction& fs = u.background_at(s);
  double first = 0.0;
  for (int i = 0; i < op.grid().size(); ++i)
    first += ut.values[i] * phi.values[i] * fs.values[i];
  first *= w;

  const double upper = std::min(s, t);
  if (upper <= 0.0 || quad_nodes < 1) return first;
  double integral = 0.0;
  for (int k = 0; k <= quad_nodes; ++k) {
    const double tau = upper * k / quad_nodes;
    const GridFunction a = u.apply(t, tau, psi);
    const GridFunction b = u.apply(s, tau, phi);
    const double val =
        recollision_pairing(op, u.background_at(tau), a, b);
    integral += (k == 0 || k == quad_nodes ? 0.5 : 1.0) * val;
  }
  integral *= upper / quad_nodes;
  return first + integral;
}

ResidualReport systchat_residual(const CollisionOperator& op,
                                 const AdjointPropagator& u,
                                 const CovarianceEvaluator& c, double t_end,
                                 const std::vector<GridFunction>& battery,
                                 int quad_nodes) {
  // per-node assemblies are shared across the whole battery
  std::vector<double> taus;
  std::vector<NoiseCovariance> qs;
  std::vector<LinearizedOperator> lstars;
  for (int k = 0; k <= quad_nodes; ++k) {
    const double tau = t_end * k / quad_nodes;
    taus.push_back(tau);
    const GridFunction& f_tau = u.background_at(tau);
    qs.push_back(noise_covariance(op, f_tau));
    lstars.push_back(assemble_linearized(op, f_tau, /*adjoint=*/true));
  }

  ResidualReport rep;
  for (const auto& psi : battery)
    for (const auto& phi : battery) {
      const double lhs = c(t_end, t_end, psi, phi);
      rep.scale = std::max(rep.scale, std::abs(lhs));
      double rhs = c(0.0, 0.0, psi, phi);
      double integral = 0.0;
      for (int k = 0; k <= quad_nodes; ++k) {
        const double tau = taus[k];
        const double cov = qs[k](psi, phi);
        const double drift = c(tau, tau, lstars[k].apply(psi), phi) +
                             c(tau, tau, psi, lstars[k].apply(phi));
        integral += (k == 0 || k == quad_nodes ? 0.5 : 1.0) * (cov + drift);
      }
      rhs += integral * t_end / quad_nodes;
      rep.max_residual = std::max(rep.max_residual, std::abs(lhs - rhs));
    }
  return rep;
}

}  // namespace bgl
