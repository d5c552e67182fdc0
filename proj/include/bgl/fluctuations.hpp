// Linearized Boltzmann operators, the fluctuation noise covariance, an
// Ornstein-Uhlenbeck integrator for the fluctuating Boltzmann equation, the
// recollision operator, Spohn's covariance formula and the covariance
// integral-equation residuals -- all in the spatially homogeneous setting.
//
// Conventions: a fluctuation field zeta is a density-like grid vector with
// pairings <zeta, phi> = w sum_i zeta_i phi_i (w the cell volume). The
// adjoint operator L*_t acts on test functions; the direct operator is its
// exact grid transpose, so <L g, phi> = <g, L* phi> holds to rounding.

#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "bgl/boltzmann.hpp"
#include "bgl/rng.hpp"

namespace bgl {

struct LinearizedOperator {
  VelocityGrid grid{1.0, 4};
  bool adjoint = true;
  Eigen::MatrixXd matrix;  // acts on grid-function values
  GridFunction background;

  GridFunction apply(const GridFunction& g) const {
    return GridFunction(grid, matrix * g.values);
  }
  double norm_estimate() const { return matrix.cwiseAbs().rowwise().sum().maxCoeff(); }
};

// Assemble L*_t phi = int D phi f(v*) ((v-v*).omega)_+ dv* domega about the
// background f by the collision quadrature; with cfg.conservation_projection
// the assembled matrix annihilates the collision invariants exactly (and its
// transpose, the direct operator, has exactly vanishing output moments).
// adjoint=false returns the transpose.
LinearizedOperator assemble_linearized(const CollisionOperator& op,
                                       const GridFunction& f, bool adjoint);

struct NoiseCovariance {
  VelocityGrid grid{1.0, 4};
  Eigen::MatrixXd form;    // Cov(phi, psi) = phi^T form psi on test values
  Eigen::MatrixXd factor;  // factor factor^T = form
  double clipped_trace = 0.0;
  GridFunction background;

  double operator()(const GridFunction& phi, const GridFunction& psi) const {
    return phi.values.dot(form * psi.values);
  }
};

// Cov(t, phi, psi) = (1/2) int D phi D psi f f* ((v-v*).omega)_+, assembled
// by the shared quadrature, symmetrized and eigenvalue-clipped at zero.
// Throws if clipping removes more than 1e-6 of the trace.
NoiseCovariance noise_covariance(const CollisionOperator& op,
                                 const GridFunction& f);

// The symmetric conservation-corrected form before PSD clipping; invariant
// pairings vanish exactly and the tail rows stay Maxwellian-enveloped.
Eigen::MatrixXd noise_form_raw(const CollisionOperator& op,
                               const GridFunction& f);

// <R^{1,2}(g,g), phi x psi> with the recollision kernel
// (g' g'* - g g*) ((v-v*).omega)_+ and the homogeneous delta integrated out.
double recollision_pairing(const CollisionOperator& op, const GridFunction& g,
                           const GridFunction& phi, const GridFunction& psi);

// int R^{1,2}(g,g)(z, z*) psi(z*) dz* as a grid function (the factored
// action used by the Sigma identity).
GridFunction recollision_action(const CollisionOperator& op,
                                const GridFunction& g, const GridFunction& psi);

struct OUPath {
  std::vector<double> times;
  std::vector<GridFunction> samples;
  std::uint64_t seed = 0;
};

struct OUOptions {
  double dt = 1e-3;
  double t_end = 1.0;
  int sample_stride = 1;     // keep every k-th step
  double blowup_factor = 10.0;
};

// Euler-Maruyama integration of d zeta = L zeta dt + db with db of
// covariance form Q dt; zeta_0 drawn with covariance <zeta0,phi><zeta0,psi>
// = int phi psi f_in (diagonal in the node basis).
OUPath simulate_ou(const LinearizedOperator& direct, const NoiseCovariance& q,
                   const GridFunction& f_in, const OUOptions& opts,
                   std::uint64_t seed);

// U(t,s)* psi: adjoint two-parameter semigroup of the linearized dynamics.
// Constant backgrounds use the dense matrix exponential; time-dependent
// backgrounds step the frozen assembled matrices with RK2.
class AdjointPropagator {
 public:
  // constant equilibrium background
  AdjointPropagator(const CollisionOperator& op, const GridFunction& m);
  // time-dependent background on the path grid (frozen matrix per knot)
  AdjointPropagator(const CollisionOperator& op,
                    const std::vector<double>& times,
                    const std::vector<GridFunction>& states, int rk_steps);

  GridFunction apply(double t, double s, const GridFunction& psi) const;
  const GridFunction& background_at(double tau) const;

 private:
  const CollisionOperator* op_;
  bool constant_;
  int rk_steps_ = 64;
  std::vector<double> times_;
  std::vector<GridFunction> states_;
  std::vector<LinearizedOperator> frozen_;
  Eigen::MatrixXd equilibrium_matrix_;
};

// Two-term Spohn formula
//   C(t,s,psi,phi) = int (U(t,s)* psi) phi f(s) dz
//                  + int_0^min(s,t) <R(f(tau)), (U(t,tau)* psi) x (U(s,tau)* phi)> dtau
// with the time integral by trapezoid on quad_nodes+1 points.
double spohn_covariance(const CollisionOperator& op,
                        const AdjointPropagator& u, double t, double s,
                        const GridFunction& psi, const GridFunction& phi,
                        int quad_nodes = 16);

// Residual of the first (equal-time) integral equation of the covariance
// system on a battery of test functions:
//   C(t,t,psi,phi) = C(0,0,psi,phi) + int_0^t Cov(s,psi,phi) ds
//                  + int_0^t [ C(s,s,L*_s psi, phi) + C(s,s,psi,L*_s phi) ] ds
// Returns the max absolute residual over the battery, and the max |C| scale.
struct ResidualReport {
  double max_residual = 0.0;
  double scale = 0.0;
};
using CovarianceEvaluator = std::function<double(
    double t, double s, const GridFunction& psi, const GridFunction& phi)>;
ResidualReport systchat_residual(const CollisionOperator& op,
                                 const AdjointPropagator& u,
                                 const CovarianceEvaluator& c, double t_end,
                                 const std::vector<GridFunction>& battery,
                                 int quad_nodes = 16);

}  // namespace bgl
