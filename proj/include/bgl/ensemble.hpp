// Grand-canonical initial data: random particle number with Poisson weights
// mu^n/n! under hard-core exclusion, i.i.d. velocities from the one-particle
// density f_in, plus replica orchestration and persistence.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bgl/event_sim.hpp"
#include "bgl/rng.hpp"
#include "bgl/velocity_grid.hpp"

namespace bgl {

// Velocity part of the initial one-particle density: a mixture of
// Maxwellians or a tabulated grid density (sampled by the alias method with
// uniform jitter inside each cell). The spatial part is uniform on the torus.
class FinSpec {
 public:
  struct Component {
    double weight = 1.0;
    double theta = 1.0;
    Velocity u = Velocity::Zero();
  };

  static FinSpec maxwellian(double theta = 1.0, Velocity u = Velocity::Zero());
  static FinSpec mixture(std::vector<Component> components);
  static FinSpec tabulated(GridFunction density);

  // symmetric two-temperature pair of counter-drifting Maxwellians
  static FinSpec two_bump(double drift, double theta);

  double density(const Velocity& v) const;
  Velocity sample(Rng& rng) const;

  // L^infty_x L^1_v norm of f_in; the spatial part is uniform so this is the
  // velocity-marginal mass, i.e. 1.
  double sup_x_l1_v() const { return 1.0; }

  std::string to_config_string() const;
  static FinSpec parse(const std::string& text);

  bool is_tabulated() const { return tabulated_.has_value(); }
  const std::vector<Component>& components() const { return components_; }

 private:
  FinSpec() = default;
  std::vector<Component> components_;
  std::optional<GridFunction> tabulated_;
  std::vector<double> alias_prob_;
  std::vector<int> alias_index_;
  void build_alias_table();
};

struct GrandCanonicalConfig {
  double epsilon = 0.1;        // in (0, 1/2)
  double mu = 100.0;           // grand-canonical activity; mu_eps = eps^-2
  FinSpec f_in = FinSpec::maxwellian();
  std::uint64_t seed = 1;
  int max_n = 2'000'000;

  // Debug switches. exclusion=false is the eps->0 sampler (pure Poisson);
  // fixed_n realizes the canonical ensemble by plain rejection and is only
  // usable in genuinely dilute regimes.
  bool exclusion = true;
  std::optional<int> fixed_n;

  static double default_mu(double epsilon) { return 1.0 / (epsilon * epsilon); }
};

class EnsembleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Draws (N, positions, velocities) from the grand-canonical law
// proportional to (mu^n / n!) prod f_in(z_i) prod 1_{dist(x_j,x_k) > eps}.
//
// Positions are produced by partial rejection sampling: start from a Poisson
// configuration, then repeatedly delete the points involved in exclusion
// conflicts and replace them by a fresh Poisson configuration thinned to the
// epsilon-neighborhood of the deleted points. Conflict-free points are never
// touched, and the fixed point of the resampling is distributed exactly as
// the conditioned Poisson process.
ParticleSet sample_initial(const GrandCanonicalConfig& config,
                           std::uint64_t replica_seed);

struct ReplicaRecord {
  std::uint64_t seed = 0;
  int resample_count = 0;  // aborted attempts before this one succeeded
  TrajectoryFile data;
};

// Persisted collection of independent runs sharing one configuration.
struct ReplicaStore {
  GrandCanonicalConfig config;
  double horizon = 0.0;
  std::vector<double> sample_times;
  std::vector<ReplicaRecord> replicas;
  std::string config_hash;

  int count() const { return static_cast<int>(replicas.size()); }
  const ParticleSet& state_at(int replica, double t) const;
  std::vector<double> available_times() const { return sample_times; }
};

// R independent sample_initial + advance runs with snapshots persisted at
// sample_times. Replica r uses derive_seed(config.seed, r); a replica that
// aborts on the measure-zero pathological set is resampled with
// derive_seed(config.seed, r + (retry+1) * 0x10000000) and the retry is
// logged in its record. Deterministic given (seed, R).
ReplicaStore run_replicas(const GrandCanonicalConfig& config, double horizon,
                          int replica_count,
                          const std::vector<double>& sample_times,
                          int workers = 1);

// Directory persistence: one trajectory file per replica plus manifest.json
// carrying the configuration and its hash.
void save_store(const ReplicaStore& store, const std::string& dir);
ReplicaStore load_store(const std::string& dir);

// Stable hash of the canonical configuration text.
std::string config_hash(const GrandCanonicalConfig& config, double horizon,
                        const std::vector<double>& sample_times);
std::string config_to_text(const GrandCanonicalConfig& config, double horizon,
                           const std::vector<double>& sample_times);

}  // namespace bgl
