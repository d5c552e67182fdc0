// Stationary-covariance oracle for the fluctuation dynamics
//   d zeta = L zeta dt + db,   E[db db^T] = Qv dt,   zeta(0) ~ N(0, C0),
// solved with dense linear algebra (complex Schur / Bartels-Stewart), fully
// independent of the Euler-Maruyama integrator it checks.
//
// The operators conserve the collision invariants: L vanishes on the left
// against them and Qv injects no noise there, so the invariant components of
// zeta stay frozen at their initial values. The oracle solves the algebraic
// Lyapunov equation on the complement and propagates the frozen part and its
// cross coupling (through the stationary mean shift) explicitly.

#pragma once

#include <Eigen/Dense>
#include <complex>
#include <stdexcept>

#include "bgl/velocity_grid.hpp"

namespace bgl_test {

// Solve T Y + Y T^H = -Qt for upper-triangular complex T (column recursion).
inline Eigen::MatrixXcd triangular_lyapunov(const Eigen::MatrixXcd& t,
                                            const Eigen::MatrixXcd& qt) {
  const int n = static_cast<int>(t.rows());
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  for (int j = n - 1; j >= 0; --j) {
    Eigen::VectorXcd rhs = -qt.col(j);
    for (int k = j + 1; k < n; ++k) rhs -= std::conj(t(j, k)) * y.col(k);
    Eigen::MatrixXcd a = t;
    a.diagonal().array() += std::conj(t(j, j));
    y.col(j) = a.triangularView<Eigen::Upper>().solve(rhs);
  }
  return y;
}

inline Eigen::MatrixXd lyapunov_solve(const Eigen::MatrixXd& l,
                                      const Eigen::MatrixXd& q) {
  Eigen::ComplexSchur<Eigen::MatrixXd> schur(l);
  const Eigen::MatrixXcd u = schur.matrixU();
  const Eigen::MatrixXcd t = schur.matrixT();
  const Eigen::MatrixXcd qt = u.adjoint() * q.cast<std::complex<double>>() * u;
  const Eigen::MatrixXcd y = triangular_lyapunov(t, qt);
  return (u * y * u.adjoint()).real();
}

// Full stationary covariance of zeta (value space) for conservative L, Qv:
//   S = (P_f + G) C0 (P_f + G)^T + B Stilde B^T
// with P_f the projector onto the invariant span, B an orthonormal basis of
// the complement, Stilde the reduced algebraic Lyapunov solution and
// G = -B (B^T L B)^{-1} B^T L P_f the stationary mean-shift map.
inline Eigen::MatrixXd stationary_covariance(const bgl::VelocityGrid& grid,
                                             const Eigen::MatrixXd& l,
                                             const Eigen::MatrixXd& qv,
                                             const Eigen::MatrixXd& c0) {
  const int n = grid.size();
  Eigen::MatrixXd inv(n, 5);
  for (int i = 0; i < n; ++i) {
    const bgl::Velocity v = grid.node(i);
    inv(i, 0) = 1.0;
    inv(i, 1) = v.x();
    inv(i, 2) = v.y();
    inv(i, 3) = v.z();
    inv(i, 4) = v.squaredNorm();
  }
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(inv);
  const Eigen::MatrixXd qfull = qr.householderQ();
  const Eigen::MatrixXd b = qfull.rightCols(n - 5);
  const Eigen::MatrixXd pf = qfull.leftCols(5) * qfull.leftCols(5).transpose();

  const Eigen::MatrixXd ml = b.transpose() * l * b;
  const Eigen::MatrixXd qb = b.transpose() * qv * b;
  const Eigen::MatrixXd stilde = lyapunov_solve(ml, qb);

  const Eigen::MatrixXd g =
      -b * ml.lu().solve(b.transpose() * l * pf);
  const Eigen::MatrixXd mixer = pf + g;
  return mixer * c0 * mixer.transpose() + b * stilde * b.transpose();
}

}  // namespace bgl_test
