// Hard-sphere Boltzmann collision operator on the velocity grid
// (deterministic quadrature over partner nodes and collision sphere), the
// spatially homogeneous solver, H functional, DSMC, and Picard iteration.
//
// Off-grid post-collisional values are evaluated by trilinear interpolation
// of the ratio f / M_ref against the grid's reference Maxwellian; the
// Gaussian prefactor is restored through the exact invariance
// M_ref(v') M_ref(v'*) = M_ref(v) M_ref(v*). The reference Maxwellian itself
// is therefore annihilated exactly, and the interpolation error acts only on
// the deviation from it.

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "bgl/quadrature.hpp"
#include "bgl/rng.hpp"
#include "bgl/velocity_grid.hpp"

namespace bgl {

struct KineticState {
  GridFunction f;
  double time = 0.0;
};

class BoltzmannError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precomputed quadrature of the collision integral for one (grid, rule)
// pair. Construction enumerates the velocity-difference lattice once;
// application is a streaming pass over ordered node pairs.
class CollisionOperator {
 public:
  CollisionOperator(const VelocityGrid& grid, const QuadratureConfig& cfg);

  const VelocityGrid& grid() const { return grid_; }
  const QuadratureConfig& config() const { return cfg_; }

  // B(f): gain minus loss with the ((v - v*) . omega)_+ kernel.
  GridFunction apply(const GridFunction& f) const;

  // Weighted variant used by the Hamilton-Jacobi module:
  //   integrand (f' f'* e^{-Dq} - f f* e^{+Dq}) ((v-v*) . omega)_+
  // with q interpolated in the test-function register. Throws on overflow
  // with the largest |Dq| in the message.
  GridFunction apply_weighted(const GridFunction& f,
                              const GridFunction& q) const;

  // Gain-loss form of the eta sweep: (eta' eta'* - eta eta*) gamma_* kernel,
  // with eta interpolated plainly (test-function register) and gamma nodal.
  GridFunction apply_eta_equation(const GridFunction& eta,
                                  const GridFunction& gamma) const;

  // (gamma' gamma'* - gamma gamma*) eta_* kernel; gamma weighted, eta nodal.
  GridFunction apply_gamma_equation(const GridFunction& gamma,
                                    const GridFunction& eta) const;

  // Project onto the orthogonal complement of span{1, v, |v|^2} under the
  // grid inner product.
  void project_conserved(GridFunction& g) const;

  // max over nodes of the loss-side collision frequency of f
  double max_collision_frequency(const GridFunction& f) const;

  int term_count() const { return static_cast<int>(terms_.size()); }

  // Internal quadrature term layout, shared with the fluctuation and
  // Hamilton-Jacobi assemblies: one entry per (ordered pair offset, omega)
  // with positive kernel; node pairs stream over the offset rectangle.
  struct Term {
    int doff[3];       // partner offset in node coordinates
    double kernel;     // ((v - v*) . omega)_+ = h |d . omega|
    double weight;     // omega weight times cell volume
    Vec3 omega;
    int padded_off_a;  // stencil base for v'  relative to the padded node i
    int padded_off_b;  // stencil base for v'* relative to the padded node j
    double wa[8], wb[8];
  };
  const std::vector<Term>& terms() const { return terms_; }
  const VectorXd& reference() const { return m_ref_; }

  // collision invariants {1, v, |v|^2} at nodes and the Maxwellian-weighted
  // correction directions of the conservation fix
  const Eigen::MatrixXd& invariants() const { return inv_basis_; }
  const Eigen::MatrixXd& correction_directions() const { return corr_dirs_; }

  // Iterate i over the rectangle where both i and j = i + doff are in the
  // box; fn(i, j, padded_i, padded_j).
  template <typename F>
  void for_each_pair(const Term& t, F&& fn) const {
    const int n = grid_.n(), np = n + 2 * pad_;
    int lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::max(0, -t.doff[a]);
      hi[a] = std::min(n - 1, n - 1 - t.doff[a]);
    }
    const int dlin = (t.doff[0] * n + t.doff[1]) * n + t.doff[2];
    const int dpad = (t.doff[0] * np + t.doff[1]) * np + t.doff[2];
    for (int ix = lo[0]; ix <= hi[0]; ++ix)
      for (int iy = lo[1]; iy <= hi[1]; ++iy) {
        int i = grid_.index(ix, iy, lo[2]);
        int pi = padded_index(ix, iy, lo[2]);
        for (int iz = lo[2]; iz <= hi[2]; ++iz, ++i, ++pi)
          fn(i, i + dlin, pi, pi + dpad);
      }
  }

  std::vector<double> padded_ratio(const GridFunction& f) const;
  int pad() const { return pad_; }
  int padded_index(int ix, int iy, int iz) const {
    const int np = grid_.n() + 2 * pad_;
    return ((ix + pad_) * np + (iy + pad_)) * np + (iz + pad_);
  }

 private:
  VelocityGrid grid_;
  QuadratureConfig cfg_;
  int pad_;
  std::vector<Term> terms_;
  VectorXd m_ref_;               // reference Maxwellian at nodes
  Eigen::MatrixXd inv_basis_;    // collision invariants {1, v, |v|^2} at nodes
  Eigen::MatrixXd corr_dirs_;    // Maxwellian-weighted correction directions
};

// Grid quadrature of f {1, v, |v|^2 / 2}.
struct Moments {
  double mass = 0.0;
  Vec3 momentum = Vec3::Zero();
  double energy = 0.0;
};
Moments moments(const GridFunction& f);

// Maxwellian with the same mass, momentum and energy as f.
MaxwellianParams equilibrium_from_moments(const GridFunction& f);

// sum f log f * cell volume with 0 log 0 = 0. Entries between
// -negativity_tol * max f and 0 count as 0; anything lower raises. Solver
// snapshots carry the solver's own negativity tolerance.
double h_functional(const GridFunction& f, double negativity_tol = 1e-12);

// Directional temperature anisotropy (theta_x - mean theta) / mean theta.
double temperature_anisotropy(const GridFunction& f);

// Mean per-particle collision rate of the density f (loss-side average).
double mean_collision_rate(const CollisionOperator& op, const GridFunction& f);

// Explicit midpoint (RK2) stepping of d f / dt = B(f).
struct SolveOptions {
  double dt = 0.01;
  bool check_stability = true;
  double negativity_tol = 1e-8;  // relative to max f; beyond -> abort
};
std::vector<KineticState> solve_homogeneous(const CollisionOperator& op,
                                            const GridFunction& f0, double t_end,
                                            const SolveOptions& opts,
                                            const std::vector<double>& snapshot_times);

// One RK2 step (exposed for the weighted-equation module).
GridFunction rk2_step(const std::function<GridFunction(const GridFunction&)>& rhs,
                      const GridFunction& f, double dt);

// Bird-type DSMC with null collisions at the majorant rate.
struct DsmcOptions {
  double particle_weight = 1.0;  // rho / N
  double majorant = 0.0;         // upper bound on |v - v*|; 0 = auto
};
struct DsmcStats {
  std::uint64_t candidates = 0;
  std::uint64_t collisions = 0;
  int majorant_doublings = 0;
};
void dsmc_step(std::vector<Velocity>& velocities, double dt, DsmcOptions& opts,
               Rng& rng, DsmcStats* stats = nullptr);

// n_terms Picard iterations of f -> f0 + int_0^t B(f)(s) ds on a fixed time
// grid with Simpson quadrature; returns the final iterate at time t.
GridFunction duhamel_iterate(const CollisionOperator& op,
                             const GridFunction& f0, double t, int n_terms,
                             int time_nodes = 17);

// The four weak-form pairings of <B(f), psi>; algebraic rearrangements of
// one discrete sum. psi evaluated exactly when it carries a closure.
double weak_form_pairing(const CollisionOperator& op, const GridFunction& f,
                         const TestFunction& psi, int variant);

}  // namespace bgl
