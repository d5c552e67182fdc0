#include "bgl/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bgl {

namespace {

double jackknife_sigma(const std::vector<double>& leave_one_out) {
  const int r = static_cast<int>(leave_one_out.size());
  double mean = 0.0;
  for (double v : leave_one_out) mean += v;
  mean /= r;
  double ss = 0.0;
  for (double v : leave_one_out) ss += (v - mean) * (v - mean);
  return std::sqrt((r - 1.0) / r * ss);
}

}  // namespace

SymmetricKernel SymmetricKernel::tensor(
    std::vector<ParticleObservable> factors) {
  if (factors.size() != 2 && factors.size() != 3)
    throw std::invalid_argument("tensor kernels support order 2 or 3");
  SymmetricKernel k;
  k.order_ = static_cast<int>(factors.size());
  std::string name;
  bool identical = true;
  for (size_t a = 1; a < factors.size(); ++a)
    if (factors[a].name != factors[0].name) identical = false;
  for (const auto& f : factors) name += (name.empty() ? "" : "*") + f.name;
  // a non-symmetric tensor product is symmetrized internally; the pairing
  // value is unchanged but the metadata records it
  k.symmetrized_ = !identical;
  k.name_ = (k.symmetrized_ ? "sym(" + name + ")" : name);
  k.factors_ = std::move(factors);
  return k;
}

SymmetricKernel SymmetricKernel::closure2(std::string name, Closure2 fn) {
  SymmetricKernel k;
  k.order_ = 2;
  k.name_ = std::move(name);
  k.closure_ = std::move(fn);
  return k;
}

double pair_empirical(const ParticleSet& state, double mu,
                      const ParticleObservable& phi) {
  double s = 0.0;
  for (int j = 0; j < state.size(); ++j)
    s += phi(state.positions[j], state.velocities[j]);
  return s / mu;
}

double pair_empirical_k(const ParticleSet& state, double mu,
                        const SymmetricKernel& h) {
  const int n = state.size();
  const int k = h.order();
  if (n < k) return 0.0;  // no injective index maps

  if (h.is_tensor()) {
    const auto& f = h.factors();
    std::vector<std::vector<double>> vals(k, std::vector<double>(n));
    for (int a = 0; a < k; ++a)
      for (int j = 0; j < n; ++j)
        vals[a][j] = f[a](state.positions[j], state.velocities[j]);
    if (k == 2) {
      double s1 = 0, s2 = 0, s12 = 0;
      for (int j = 0; j < n; ++j) {
        s1 += vals[0][j];
        s2 += vals[1][j];
        s12 += vals[0][j] * vals[1][j];
      }
      return (s1 * s2 - s12) / (mu * mu);
    }
    double sa = 0, sb = 0, sc = 0, sab = 0, sac = 0, sbc = 0, sabc = 0;
    for (int j = 0; j < n; ++j) {
      const double a = vals[0][j], b = vals[1][j], c = vals[2][j];
      sa += a;
      sb += b;
      sc += c;
      sab += a * b;
      sac += a * c;
      sbc += b * c;
      sabc += a * b * c;
    }
    const double distinct =
        sa * sb * sc - sab * sc - sac * sb - sbc * sa + 2.0 * sabc;
    return distinct / (mu * mu * mu);
  }

  if (k != 2) throw std::invalid_argument("closure kernels support order 2");
  const auto& fn = h.closure();
  // randomized symmetry check on the state's own particles
  for (int probe = 0; probe + 1 < std::min(n, 6); probe += 2) {
    const auto& xa = state.positions[probe];
    const auto& va = state.velocities[probe];
    const auto& xb = state.positions[probe + 1];
    const auto& vb = state.velocities[probe + 1];
    const double ab = fn(xa, va, xb, vb), ba = fn(xb, vb, xa, va);
    if (std::abs(ab - ba) > 1e-10 * (std::abs(ab) + std::abs(ba) + 1.0))
      throw std::invalid_argument(
          "pair_empirical_k: kernel is not symmetric under argument swap");
  }
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      s += fn(state.positions[i], state.velocities[i], state.positions[j],
              state.velocities[j]);
    }
  return s / (mu * mu);
}

namespace {

PairingResult replica_mean(const std::vector<double>& xs) {
  PairingResult out;
  out.replicas = static_cast<int>(xs.size());
  double s = 0.0;
  for (double x : xs) s += x;
  out.value = s / out.replicas;
  if (out.replicas >= 2) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.value) * (x - out.value);
    out.std_error = std::sqrt(ss / (out.replicas - 1.0) / out.replicas);
  }
  return out;
}

}  // namespace

PairingResult estimate_correlation(const ReplicaStore& store, double t,
                                   const ParticleObservable& phi) {
  std::vector<double> xs;
  for (int r = 0; r < store.count(); ++r)
    xs.push_back(pair_empirical(store.state_at(r, t), store.config.mu, phi));
  return replica_mean(xs);
}

PairingResult estimate_correlation(const ReplicaStore& store, double t,
                                   const SymmetricKernel& h) {
  std::vector<double> xs;
  for (int r = 0; r < store.count(); ++r)
    xs.push_back(pair_empirical_k(store.state_at(r, t), store.config.mu, h));
  return replica_mean(xs);
}

namespace {

// sum over distinct replica pairs / triples from power sums
double u_pair(const std::vector<double>& a, const std::vector<double>& b,
              int skip) {
  double sa = 0, sb = 0, sab = 0;
  int r = 0;
  for (size_t q = 0; q < a.size(); ++q) {
    if (static_cast<int>(q) == skip) continue;
    sa += a[q];
    sb += b[q];
    sab += a[q] * b[q];
    ++r;
  }
  return (sa * sb - sab) / (double(r) * (r - 1));
}

double u_triple(const std::vector<double>& a, const std::vector<double>& b,
                const std::vector<double>& c, int skip) {
  double sa = 0, sb = 0, sc = 0, sab = 0, sac = 0, sbc = 0, sabc = 0;
  int r = 0;
  for (size_t q = 0; q < a.size(); ++q) {
    if (static_cast<int>(q) == skip) continue;
    sa += a[q];
    sb += b[q];
    sc += c[q];
    sab += a[q] * b[q];
    sac += a[q] * c[q];
    sbc += b[q] * c[q];
    sabc += a[q] * b[q] * c[q];
    ++r;
  }
  const double distinct =
      sa * sb * sc - sab * sc - sac * sb - sbc * sa + 2.0 * sabc;
  return distinct / (double(r) * (r - 1) * (r - 2));
}

double mean_skip(const std::vector<double>& a, int skip) {
  double s = 0;
  int r = 0;
  for (size_t q = 0; q < a.size(); ++q) {
    if (static_cast<int>(q) == skip) continue;
    s += a[q];
    ++r;
  }
  return s / r;
}

}  // namespace

CumulantEstimate estimate_cumulant(
    const ReplicaStore& store, double t,
    const std::vector<ParticleObservable>& factors) {
  const int k = static_cast<int>(factors.size());
  if (k < 1 || k > 3)
    throw std::invalid_argument(
        "cumulant estimation is limited to orders 1..3");
  const int rr = store.count();
  const double mu = store.config.mu;

  CumulantEstimate out;
  out.order = k;
  out.replicas = rr;
  for (const auto& f : factors) out.test_functions.push_back(f.name);

  // per-replica pairing features
  std::vector<std::vector<double>> x(k, std::vector<double>(rr));
  for (int a = 0; a < k; ++a)
    for (int r = 0; r < rr; ++r)
      x[a][r] = pair_empirical(store.state_at(r, t), mu, factors[a]);

  if (k == 1) {
    const PairingResult p = replica_mean(x[0]);
    out.value = p.value;
    out.std_error = p.std_error;
    return out;
  }

  auto pair_feature = [&](int a, int b) {
    std::vector<double> p(rr);
    const SymmetricKernel h = SymmetricKernel::tensor({factors[a], factors[b]});
    for (int r = 0; r < rr; ++r)
      p[r] = pair_empirical_k(store.state_at(r, t), mu, h);
    return p;
  };

  if (k == 2) {
    if (rr < 2) throw std::invalid_argument("cumulants need >= 2 replicas");
    const std::vector<double> p12 = pair_feature(0, 1);
    auto value_at = [&](int skip) {
      return mu * (mean_skip(p12, skip) - u_pair(x[0], x[1], skip));
    };
    out.value = value_at(-1);
    std::vector<double> loo(rr);
    for (int r = 0; r < rr; ++r) loo[r] = value_at(r);
    out.std_error = jackknife_sigma(loo);
    return out;
  }

  if (rr < 3) throw std::invalid_argument("third cumulants need >= 3 replicas");
  const std::vector<double> p12 = pair_feature(0, 1);
  const std::vector<double> p13 = pair_feature(0, 2);
  const std::vector<double> p23 = pair_feature(1, 2);
  std::vector<double> p123(rr);
  {
    const SymmetricKernel h =
        SymmetricKernel::tensor({factors[0], factors[1], factors[2]});
    for (int r = 0; r < rr; ++r)
      p123[r] = pair_empirical_k(store.state_at(r, t), mu, h);
  }
  auto value_at = [&](int skip) {
    const double term3 = mean_skip(p123, skip);
    const double term21 = u_pair(p12, x[2], skip) + u_pair(p13, x[1], skip) +
                          u_pair(p23, x[0], skip);
    const double term111 = u_triple(x[0], x[1], x[2], skip);
    return mu * mu * (term3 - term21 + 2.0 * term111);
  };
  out.value = value_at(-1);
  std::vector<double> loo(rr);
  for (int r = 0; r < rr; ++r) loo[r] = value_at(r);
  out.std_error = jackknife_sigma(loo);
  return out;
}

std::vector<double> fluctuation_samples(const ReplicaStore& store, double t,
                                        const ParticleObservable& phi) {
  const int rr = store.count();
  if (rr < 2)
    throw std::invalid_argument("fluctuation samples need >= 2 replicas");
  std::vector<double> x(rr);
  double total = 0.0;
  for (int r = 0; r < rr; ++r) {
    x[r] = pair_empirical(store.state_at(r, t), store.config.mu, phi);
    total += x[r];
  }
  // leave-one-out centering; the sqrt((R-1)/R) factor makes the sample
  // variance unbiased for the single-draw variance
  const double scale =
      std::sqrt(store.config.mu) * std::sqrt((rr - 1.0) / rr);
  std::vector<double> out(rr);
  for (int r = 0; r < rr; ++r) {
    const double others = (total - x[r]) / (rr - 1.0);
    out[r] = scale * (x[r] - others);
  }
  return out;
}

namespace {

PairingResult cgf_from_exponents(const std::vector<double>& s, double mu) {
  for (double v : s)
    if (v > 700.0)
      throw std::invalid_argument(
          "cgf_estimate: replica exponent exceeds 700; use a smaller test "
          "function or activity");
  const int rr = static_cast<int>(s.size());
  const double m = *std::max_element(s.begin(), s.end());
  std::vector<double> es(rr);
  double total = 0.0;
  for (int r = 0; r < rr; ++r) {
    es[r] = std::exp(s[r] - m);
    total += es[r];
  }
  PairingResult out;
  out.replicas = rr;
  out.value = (m + std::log(total / rr)) / mu;
  if (rr >= 2) {
    std::vector<double> loo(rr);
    for (int r = 0; r < rr; ++r)
      loo[r] = (m + std::log((total - es[r]) / (rr - 1))) / mu;
    out.std_error = jackknife_sigma(loo);
  }
  return out;
}

}  // namespace

PairingResult cgf_estimate(const ReplicaStore& store, double t,
                           const ParticleObservable& h,
                           const GrowthBound& bound) {
  std::vector<double> s(store.count());
  for (int r = 0; r < store.count(); ++r) {
    const ParticleSet& state = store.state_at(r, t);
    double acc = 0.0;
    for (int j = 0; j < state.size(); ++j) {
      const double val = h(state.positions[j], state.velocities[j]);
      const double env = bound.alpha +
                         bound.beta0 / 4.0 * state.velocities[j].squaredNorm();
      if (val > env + 1e-9)
        throw std::invalid_argument(
            "cgf_estimate: test function violates the declared growth bound");
      acc += val;
    }
    s[r] = acc;
  }
  return cgf_from_exponents(s, store.config.mu);
}

namespace {

// per-particle path functionals of one replica:
// h_j = g(0, v_j(0)) + sum over collisions of j of g(t_c, post) - g(t_c, pre)
// (the exact telescoping of g(T, z(T)) - int (d_t g) along free flight)
std::vector<double> per_particle_path_values(const TrajectoryFile& replica,
                                             const WeightField& g,
                                             std::vector<double>* max_speed2) {
  const ParticleSet& init = replica.trajectory.initial;
  const double t_end = g.t_end();
  if (t_end > replica.trajectory.final_time + 1e-12)
    throw std::invalid_argument(
        "path functional extends beyond the recorded trajectory");
  const int n = init.size();
  std::vector<double> h(n);
  std::vector<Velocity> vel(n);
  if (max_speed2) max_speed2->assign(n, 0.0);
  for (int j = 0; j < n; ++j) {
    vel[j] = init.velocities[j];
    h[j] = g(0.0, vel[j]);
    if (max_speed2) (*max_speed2)[j] = vel[j].squaredNorm();
  }
  for (const auto& e : replica.trajectory.events) {
    if (e.time > t_end) break;
    h[e.i] += g(e.time, e.vi_post) - g(e.time, vel[e.i]);
    h[e.j] += g(e.time, e.vj_post) - g(e.time, vel[e.j]);
    vel[e.i] = e.vi_post;
    vel[e.j] = e.vj_post;
    if (max_speed2) {
      (*max_speed2)[e.i] = std::max((*max_speed2)[e.i], vel[e.i].squaredNorm());
      (*max_speed2)[e.j] = std::max((*max_speed2)[e.j], vel[e.j].squaredNorm());
    }
  }
  return h;
}

}  // namespace

double path_functional_sum(const TrajectoryFile& replica,
                           const WeightField& g) {
  const auto h = per_particle_path_values(replica, g, nullptr);
  double s = 0.0;
  for (double v : h) s += v;
  return s;
}

PairingResult cgf_estimate_path(const ReplicaStore& store,
                                const WeightField& g,
                                const GrowthBound& bound) {
  std::vector<double> s(store.count());
  for (int r = 0; r < store.count(); ++r) {
    std::vector<double> speed2;
    const auto h =
        per_particle_path_values(store.replicas[r].data, g, &speed2);
    double acc = 0.0;
    for (size_t j = 0; j < h.size(); ++j) {
      if (h[j] > bound.alpha + bound.beta0 / 4.0 * speed2[j] + 1e-9)
        throw std::invalid_argument(
            "cgf_estimate_path: functional violates the declared growth "
            "bound");
      acc += h[j];
    }
    s[r] = acc;
  }
  return cgf_from_exponents(s, store.config.mu);
}

}  // namespace bgl
