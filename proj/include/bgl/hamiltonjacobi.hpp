// The Hamilton-Jacobi side of the Boltzmann-Grad laboratory: the Hamiltonian
// H(p, q) of the cumulant generating functional, its p- and q-derivatives,
// the weighted Boltzmann equation, the forward/backward characteristics
// system with opposite time arrows, the value functional along the
// characteristics, and the large-deviations rate functional. Everything is
// spatially homogeneous.

#pragma once

#include <optional>
#include <vector>

#include "bgl/boltzmann.hpp"
#include "bgl/weight_field.hpp"

namespace bgl {

// H(p, q) = (1/2) int (e^{D q} - 1) ((v - v*) . omega)_+ p(v) p(v*).
// p is nodal; q is evaluated exactly when it carries a closure, otherwise by
// plain trilinear interpolation. Throws on overflow with max |Dq| reported.
double hamiltonian(const CollisionOperator& op, const GridFunction& p,
                   const TestFunction& q);

// Exact discrete gradient of the implemented H with respect to p:
// d/d eps H(p + eps ptilde, q) = <grad, ptilde>_grid.
GridFunction dh_dp(const CollisionOperator& op, const GridFunction& p,
                   const TestFunction& q);

// Exact discrete gradient with respect to nodal q values (scatter form):
// d/d eps H(p, q + eps psi) = <grad, psi>_grid for grid psi.
GridFunction dh_dq(const CollisionOperator& op, const GridFunction& p,
                   const GridFunction& q);

// Pairing <dH/dq (p,q), psi> with psi evaluated exactly; vanishes to
// rounding for collision-invariant psi.
double dh_dq_pairing(const CollisionOperator& op, const GridFunction& p,
                     const TestFunction& q, const TestFunction& psi);

// One RK2 step of the weighted Boltzmann equation
//   d phi / dt = int (phi' phi'* e^{-Dq} - phi phi* e^{Dq}) ((v-v*).omega)_+
// (reduces bit-for-bit to the plain solver step when q = 0).
KineticState weighted_boltzmann_step(const CollisionOperator& op,
                                     const KineticState& phi,
                                     const GridFunction& q_slice, double dt);

struct CharacteristicsSolution {
  std::vector<double> times;       // 0 = s_0 < ... < s_m = T
  std::vector<GridFunction> gamma; // gamma_s = phi_s e^{-q_s}, >= 0
  std::vector<GridFunction> eta;   // eta_s = e^{q_s}, > 0
  std::vector<GridFunction> phi;   // phi_s = gamma_s eta_s
  std::vector<GridFunction> q;     // q_s = ln eta_s
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;
};

struct CharacteristicsOptions {
  int substeps_per_knot = 2;  // time refinement of the weight field's knots
  int max_iterations = 40;
  double tolerance = 1e-9;
};

// Picard/alternating sweep for the two-point boundary system: given eta,
// the density phi = gamma eta runs forward through the weighted Boltzmann
// equation from phi(0) = f_in e^{q(0)}; given gamma, eta runs backward from
// eta(T) = e^{g(T)}. Iterates until the successive-sweep sup-change drops
// below tolerance; a residual that grows over three sweeps aborts with a
// horizon estimate.
CharacteristicsSolution solve_characteristics(const CollisionOperator& op,
                                              const WeightField& g,
                                              const GridFunction& f_in,
                                              const CharacteristicsOptions& opts);

// Value functional along the characteristics:
//   hatK(T, g) = <f_in, e^{q(0)} - 1> + <<phi, d_s(q - g)>> + int_0^T H ds
// with the transport bracket taken from the Hamilton equation
// d_s(q - g) = -dH/dp(phi_s, q_s) and trapezoid time quadrature.
double hat_k(const CollisionOperator& op, const WeightField& g,
             const CharacteristicsSolution& sol, const GridFunction& f_in);

struct PathOnGrid {
  std::vector<double> times;
  std::vector<GridFunction> states;
};

struct RateOptions {
  // critical-point mode: the path must solve the weighted Boltzmann
  // equation for q_bar within this relative tolerance
  double consistency_tol = 5e-2;
  // numeric-sup mode: gradient ascent over nodal q from q = 0
  int ascent_iterations = 60;
  double ascent_step = 0.5;
};

// Rate functional K*(T, phi):
//   int (phi(0) ln(phi(0)/f_in) - phi(0) + f_in)
//   + sup_q ( <<d_s phi, q>> - int H(phi(s), q(s)) ds ).
// With q_bar given, the supremum is evaluated at the critical point after a
// consistency check; otherwise gradient ascent from q = 0 gives a certified
// lower bound of the supremum (the objective is concave in q).
double rate_functional(const CollisionOperator& op, const PathOnGrid& phi,
                       const GridFunction& f_in,
                       const std::optional<std::vector<GridFunction>>& q_bar,
                       const RateOptions& opts);

// Entropy term alone (the time-zero part of the rate functional).
double relative_entropy_term(const GridFunction& phi0, const GridFunction& f_in);

}  // namespace bgl
