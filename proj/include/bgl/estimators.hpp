// Monte-Carlo estimators over a replica store: empirical pairings, k-particle
// correlation functions, rescaled cumulants (k <= 3), fluctuation-field
// samples, and the cumulant generating functional, including path-space test
// functionals.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bgl/ensemble.hpp"
#include "bgl/weight_field.hpp"

namespace bgl {

struct PairingResult {
  double value = 0.0;
  std::optional<double> std_error;  // undefined for a single replica
  int replicas = 0;
};

// Observable of one particle; homogeneous experiments use velocity closures.
struct ParticleObservable {
  std::string name;
  std::function<double(const TorusPoint&, const Velocity&)> fn;

  double operator()(const TorusPoint& x, const Velocity& v) const {
    return fn(x, v);
  }
  static ParticleObservable velocity(std::string name, VelocityFunction f) {
    return {std::move(name),
            [f = std::move(f)](const TorusPoint&, const Velocity& v) {
              return f(v);
            }};
  }
  static ParticleObservable one() {
    return {"one", [](const TorusPoint&, const Velocity&) { return 1.0; }};
  }
};

// Symmetric k-argument test function, k = 2 or 3: either a tensor product of
// one-particle observables (symmetrized internally; factored evaluation costs
// O(N k)) or a general symmetric closure (O(N^k), checked for symmetry).
class SymmetricKernel {
 public:
  using Closure2 = std::function<double(const TorusPoint&, const Velocity&,
                                        const TorusPoint&, const Velocity&)>;

  static SymmetricKernel tensor(std::vector<ParticleObservable> factors);
  static SymmetricKernel closure2(std::string name, Closure2 fn);

  int order() const { return order_; }
  bool symmetrized_internally() const { return symmetrized_; }
  const std::string& name() const { return name_; }
  bool is_tensor() const { return !factors_.empty(); }
  const std::vector<ParticleObservable>& factors() const { return factors_; }
  const Closure2& closure() const { return closure_; }

 private:
  int order_ = 2;
  bool symmetrized_ = false;
  std::string name_;
  std::vector<ParticleObservable> factors_;
  Closure2 closure_;
};

// <rho, phi> = (1/mu) sum_j phi(z_j)
double pair_empirical(const ParticleSet& state, double mu,
                      const ParticleObservable& phi);

// <rho_k, h_k> = mu^-k sum over injective index tuples. Rejects closures that
// fail a randomized symmetry check.
double pair_empirical_k(const ParticleSet& state, double mu,
                        const SymmetricKernel& h);

// Replica average of <rho_{k,t}, h> with the replica-spread standard error.
PairingResult estimate_correlation(const ReplicaStore& store, double t,
                                   const ParticleObservable& phi);
PairingResult estimate_correlation(const ReplicaStore& store, double t,
                                   const SymmetricKernel& h);

struct CumulantEstimate {
  int order = 1;
  std::vector<std::string> test_functions;
  double value = 0.0;
  std::optional<double> std_error;
  int replicas = 0;
};

// Rescaled cumulant f^eps_k paired with a tensor product of k observables,
// k <= 3: correlation estimates combined with the partition signs
// (-1)^(j-1) (j-1)! and the mu^(k-1) prefactor. Products of expectations are
// estimated by cross-replica U-statistics (no same-replica products), and the
// standard error is a leave-one-replica-out jackknife.
CumulantEstimate estimate_cumulant(const ReplicaStore& store, double t,
                                   const std::vector<ParticleObservable>& factors);

// Per replica r: sqrt(mu) (<rho_r, phi> - mean over the other replicas),
// scaled by sqrt((R-1)/R) so the sample variance is unbiased for
// Var <rho, phi>(scaled by mu). Needs R >= 2.
std::vector<double> fluctuation_samples(const ReplicaStore& store, double t,
                                        const ParticleObservable& phi);

// Declared growth bound of Cramer-type estimates: values of the functional
// on particles must satisfy h <= alpha + (beta0/4) sup_s |v(s)|^2.
struct GrowthBound {
  double alpha = 1.0;
  double beta0 = 1.0;
};

// K_eps(t, h) = (1/mu) ln E exp(sum_j h(z_j(t))), replica Monte Carlo with a
// jackknife standard error. Throws if any replica exponent exceeds 700 or if
// the declared growth bound fails on a sampled particle.
PairingResult cgf_estimate(const ReplicaStore& store, double t,
                           const ParticleObservable& h,
                           const GrowthBound& bound);

// Path-functional variant: h(z([0,t])) = g(t, z(t)) - int_0^t (d_t + v.grad_x)
// g(s, z(s)) ds, evaluated exactly along the piecewise free flight of each
// particle (g linear in t between knots; homogeneous g has no x dependence).
PairingResult cgf_estimate_path(const ReplicaStore& store,
                                const WeightField& g, const GrowthBound& bound);

// Sum of the path functional over the particles of one replica.
double path_functional_sum(const TrajectoryFile& replica, const WeightField& g);

}  // namespace bgl
