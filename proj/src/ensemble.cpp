#include "bgl/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <atomic>
#include <thread>

#include <json.hpp>

namespace bgl {

// ---------------------------------------------------------------- FinSpec

FinSpec FinSpec::maxwellian(double theta, Velocity u) {
  FinSpec f;
  f.components_.push_back({1.0, theta, u});
  return f;
}

FinSpec FinSpec::mixture(std::vector<Component> components) {
  FinSpec f;
  double total = 0.0;
  for (const auto& c : components) total += c.weight;
  if (total <= 0.0) throw EnsembleError("mixture weights must be positive");
  for (auto& c : components) c.weight /= total;
  f.components_ = std::move(components);
  return f;
}

FinSpec FinSpec::two_bump(double drift, double theta) {
  return mixture({{0.5, theta, Velocity(drift, 0, 0)},
                  {0.5, theta, Velocity(-drift, 0, 0)}});
}

FinSpec FinSpec::tabulated(GridFunction density) {
  FinSpec f;
  const double mass = density.integral();
  if (mass <= 0.0) throw EnsembleError("tabulated density has no mass");
  density.values /= mass;
  f.tabulated_ = std::move(density);
  f.build_alias_table();
  return f;
}

void FinSpec::build_alias_table() {
  const auto& g = *tabulated_;
  const int n = g.grid.size();
  std::vector<double> p(n);
  for (int i = 0; i < n; ++i)
    p[i] = std::max(0.0, g.values[i]) * g.grid.cell_volume() * n;
  alias_prob_.assign(n, 0.0);
  alias_index_.assign(n, 0);
  std::vector<int> small, large;
  for (int i = n - 1; i >= 0; --i) (p[i] < 1.0 ? small : large).push_back(i);
  while (!small.empty() && !large.empty()) {
    const int s = small.back();
    small.pop_back();
    const int l = large.back();
    alias_prob_[s] = p[s];
    alias_index_[s] = l;
    p[l] = (p[l] + p[s]) - 1.0;
    if (p[l] < 1.0) {
      large.pop_back();
      small.push_back(l);
    }
  }
  for (int i : large) alias_prob_[i] = 1.0;
  for (int i : small) alias_prob_[i] = 1.0;
}

double FinSpec::density(const Velocity& v) const {
  if (tabulated_) return std::max(0.0, tabulated_->eval(v));
  double d = 0.0;
  for (const auto& c : components_)
    d += c.weight * bgl::maxwellian(MaxwellianParams{1.0, c.u, c.theta}, v);
  return d;
}

Velocity FinSpec::sample(Rng& rng) const {
  if (tabulated_) {
    const auto& g = *tabulated_;
    const int n = g.grid.size();
    const int slot = std::min(static_cast<int>(rng.uniform() * n), n - 1);
    const int cell =
        rng.uniform() < alias_prob_[slot] ? slot : alias_index_[slot];
    const Velocity center = g.grid.node(cell);
    const double h = g.grid.spacing();
    return center + h * Velocity(rng.uniform() - 0.5, rng.uniform() - 0.5,
                                 rng.uniform() - 0.5);
  }
  double pick = rng.uniform();
  const Component* comp = &components_.back();
  for (const auto& c : components_) {
    if (pick < c.weight) {
      comp = &c;
      break;
    }
    pick -= c.weight;
  }
  const double s = std::sqrt(comp->theta);
  return comp->u + s * Velocity(rng.normal(), rng.normal(), rng.normal());
}

std::string FinSpec::to_config_string() const {
  std::ostringstream os;
  os.precision(17);
  if (tabulated_) {
    const auto& g = *tabulated_;
    os << "tabulated " << g.grid.half_width() << " " << g.grid.n() << " "
       << g.grid.theta_ref();
    for (int i = 0; i < g.grid.size(); ++i) os << " " << g.values[i];
    return os.str();
  }
  if (components_.size() == 1 && components_[0].u.norm() == 0.0) {
    os << "maxwellian " << components_[0].theta;
    return os.str();
  }
  os << "mixture";
  for (const auto& c : components_)
    os << " " << c.weight << " " << c.theta << " " << c.u.x() << " "
       << c.u.y() << " " << c.u.z();
  return os.str();
}

FinSpec FinSpec::parse(const std::string& text) {
  std::istringstream is(text);
  std::string kind;
  is >> kind;
  if (kind == "maxwellian") {
    double theta = 1.0;
    is >> theta;
    return maxwellian(theta);
  }
  if (kind == "mixture") {
    std::vector<Component> comps;
    Component c;
    while (is >> c.weight >> c.theta >> c.u.x() >> c.u.y() >> c.u.z())
      comps.push_back(c);
    if (comps.empty()) throw EnsembleError("empty mixture spec");
    return mixture(comps);
  }
  if (kind == "tabulated") {
    double half_width = 0.0, theta_ref = 1.0;
    int n = 0;
    is >> half_width >> n >> theta_ref;
    GridFunction g(VelocityGrid(half_width, n, theta_ref));
    for (int i = 0; i < g.grid.size(); ++i) is >> g.values[i];
    return tabulated(g);
  }
  throw EnsembleError("unrecognized f_in kind: " + kind);
}

// ---------------------------------------------------------- sample_initial

namespace {

// conflict scan on a coarse position grid; epsilon < cell edge
std::vector<char> conflict_flags(const std::vector<TorusPoint>& pts,
                                 double eps) {
  const int n = static_cast<int>(pts.size());
  std::vector<char> bad(n, 0);
  const int m = std::clamp(static_cast<int>(std::floor(1.0 / eps)), 1, 32);
  const double edge = 1.0 / m;
  std::vector<std::vector<int>> cells(m * m * m);
  auto cell_of = [&](const TorusPoint& p) {
    int c[3];
    for (int a = 0; a < 3; ++a)
      c[a] = std::min(static_cast<int>(p.coords[a] / edge), m - 1);
    return (c[0] * m + c[1]) * m + c[2];
  };
  for (int i = 0; i < n; ++i) cells[cell_of(pts[i])].push_back(i);
  for (int i = 0; i < n; ++i) {
    const int ci = cell_of(pts[i]);
    const int cz = ci % m, cy = (ci / m) % m, cx = ci / (m * m);
    int seen[27];
    int nseen = 0;
    for (int ox = -1; ox <= 1; ++ox)
      for (int oy = -1; oy <= 1; ++oy)
        for (int oz = -1; oz <= 1; ++oz) {
          const int c = (((cx + ox + m) % m) * m + ((cy + oy + m) % m)) * m +
                        ((cz + oz + m) % m);
          bool dup = false;
          for (int k = 0; k < nseen; ++k)
            if (seen[k] == c) dup = true;
          if (dup) continue;
          seen[nseen++] = c;
          for (int j : cells[c]) {
            if (j <= i) continue;
            if (torus_distance(pts[i], pts[j]) <= eps) {
              bad[i] = bad[j] = 1;
            }
          }
        }
  }
  return bad;
}

}  // namespace

ParticleSet sample_initial(const GrandCanonicalConfig& config,
                           std::uint64_t replica_seed) {
  if (!(config.epsilon > 0.0 && config.epsilon < 0.5))
    throw EnsembleError("epsilon must lie in (0, 1/2)");
  Rng rng(replica_seed);

  std::vector<TorusPoint> pts;

  if (config.fixed_n) {
    // canonical debug switch: plain rejection of the whole configuration
    const int n = *config.fixed_n;
    const int max_attempts = 10000;
    for (int attempt = 0;; ++attempt) {
      if (attempt >= max_attempts)
        throw EnsembleError(
            "canonical rejection sampler: acceptance below 1e-4, regime too "
            "dense");
      pts.clear();
      for (int i = 0; i < n; ++i)
        pts.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());
      bool ok = true;
      if (config.exclusion) {
        const auto bad = conflict_flags(pts, config.epsilon);
        for (char b : bad)
          if (b) ok = false;
      }
      if (ok) break;
    }
  } else {
    const auto n0 = rng.poisson(config.mu);
    if (n0 > static_cast<std::uint64_t>(config.max_n))
      throw EnsembleError("Poisson draw exceeded max_n");
    pts.reserve(n0);
    for (std::uint64_t i = 0; i < n0; ++i)
      pts.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());

    if (config.exclusion) {
      const double eps = config.epsilon;
      const int max_rounds = 10000;
      int round = 0;
      while (true) {
        if (++round > max_rounds)
          throw EnsembleError(
              "partial rejection sampler failed to converge, regime too "
              "dense");
        const auto bad = conflict_flags(pts, eps);
        std::vector<TorusPoint> kept, removed;
        for (size_t i = 0; i < pts.size(); ++i)
          (bad[i] ? removed : kept).push_back(pts[i]);
        if (removed.empty()) break;
        // fresh Poisson configuration thinned to the union of eps-balls
        // around the removed points
        const auto k = rng.poisson(config.mu);
        std::vector<TorusPoint> fresh;
        for (std::uint64_t i = 0; i < k; ++i) {
          const TorusPoint cand(rng.uniform(), rng.uniform(), rng.uniform());
          for (const auto& c : removed)
            if (torus_distance(cand, c) <= eps) {
              fresh.push_back(cand);
              break;
            }
        }
        pts = std::move(kept);
        pts.insert(pts.end(), fresh.begin(), fresh.end());
      }
    }
  }

  ParticleSet out;
  out.epsilon = config.epsilon;
  out.time = 0.0;
  out.positions = std::move(pts);
  out.velocities.reserve(out.positions.size());
  for (size_t i = 0; i < out.positions.size(); ++i)
    out.velocities.push_back(config.f_in.sample(rng));
  return out;
}

// ------------------------------------------------------------ run_replicas

std::string config_to_text(const GrandCanonicalConfig& config, double horizon,
                           const std::vector<double>& sample_times) {
  std::ostringstream os;
  os.precision(17);
  os << "epsilon = " << config.epsilon << "\n";
  os << "mu = " << config.mu << "\n";
  os << "f_in = " << config.f_in.to_config_string() << "\n";
  os << "seed = " << config.seed << "\n";
  os << "exclusion = " << (config.exclusion ? "on" : "off") << "\n";
  if (config.fixed_n) os << "fixed_n = " << *config.fixed_n << "\n";
  os << "T = " << horizon << "\n";
  os << "sample_times =";
  for (double t : sample_times) os << " " << t;
  os << "\n";
  return os.str();
}

std::string config_hash(const GrandCanonicalConfig& config, double horizon,
                        const std::vector<double>& sample_times) {
  const std::string text = config_to_text(config, horizon, sample_times);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

const ParticleSet& ReplicaStore::state_at(int replica, double t) const {
  const auto& snaps = replicas[replica].data.snapshots;
  for (const auto& [time, state] : snaps)
    if (std::abs(time - t) <= 1e-12 * std::max(1.0, std::abs(t))) return state;
  std::ostringstream os;
  os << "time " << t << " not sampled; available:";
  for (double s : sample_times) os << " " << s;
  throw EnsembleError(os.str());
}

namespace {

ReplicaRecord run_one_replica(const GrandCanonicalConfig& config,
                              double horizon,
                              const std::vector<double>& sample_times, int r) {
  ReplicaRecord rec;
  for (int retry = 0;; ++retry) {
    if (retry > 64)
      throw EnsembleError("replica kept hitting pathological states");
    rec.seed = retry == 0 ? derive_seed(config.seed, r)
                          : derive_seed(config.seed,
                                        r + std::uint64_t(retry) * 0x10000000ULL);
    rec.resample_count = retry;
    try {
      ParticleSet initial = sample_initial(config, rec.seed);
      HardSphereSimulation sim(initial, /*record=*/true);
      rec.data.seed = rec.seed;
      rec.data.snapshots.clear();
      for (double t : sample_times) {
        sim.advance(t);
        rec.data.snapshots.emplace_back(t, sim.snapshot());
      }
      sim.advance(horizon);
      rec.data.trajectory = sim.trajectory();
      return rec;
    } catch (const SimulationError&) {
      continue;  // resample with a fresh derived seed, logged via retry count
    }
  }
}

}  // namespace

ReplicaStore run_replicas(const GrandCanonicalConfig& config, double horizon,
                          int replica_count,
                          const std::vector<double>& sample_times,
                          int workers) {
  if (replica_count < 1) throw EnsembleError("need at least one replica");
  std::vector<double> times = sample_times;
  std::sort(times.begin(), times.end());
  for (double t : times)
    if (t < 0.0 || t > horizon)
      throw EnsembleError("sample times must lie in [0, T]");

  ReplicaStore store;
  store.config = config;
  store.horizon = horizon;
  store.sample_times = times;
  store.config_hash = config_hash(config, horizon, times);
  store.replicas.resize(replica_count);

  workers = std::max(1, workers);
  if (workers == 1) {
    for (int r = 0; r < replica_count; ++r)
      store.replicas[r] = run_one_replica(config, horizon, times, r);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    auto work = [&]() {
      while (true) {
        const int r = next.fetch_add(1);
        if (r >= replica_count) return;
        store.replicas[r] = run_one_replica(config, horizon, times, r);
      }
    };
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  return store;
}

// -------------------------------------------------------------- persistence

void save_store(const ReplicaStore& store, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::json manifest;
  manifest["format"] = "bgl-store v1";
  manifest["config_text"] =
      config_to_text(store.config, store.horizon, store.sample_times);
  manifest["config_hash"] = store.config_hash;
  manifest["replicas"] = store.count();
  nlohmann::json seeds = nlohmann::json::array();
  nlohmann::json resamples = nlohmann::json::array();
  for (const auto& r : store.replicas) {
    seeds.push_back(r.seed);
    resamples.push_back(r.resample_count);
  }
  manifest["seeds"] = seeds;
  manifest["resample_counts"] = resamples;
  {
    std::ofstream os(fs::path(dir) / "manifest.json");
    os << manifest.dump(2) << "\n";
  }
  for (int r = 0; r < store.count(); ++r) {
    char name[64];
    std::snprintf(name, sizeof name, "replica_%05d.txt", r);
    std::ofstream os(fs::path(dir) / name);
    write_trajectory(os, store.replicas[r].data.trajectory,
                     store.replicas[r].seed, store.replicas[r].data.snapshots);
  }
}

ReplicaStore load_store(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream ms(fs::path(dir) / "manifest.json");
  if (!ms) throw EnsembleError("no manifest.json in " + dir);
  nlohmann::json manifest;
  ms >> manifest;

  ReplicaStore store;
  const std::string text = manifest["config_text"];
  std::istringstream is(text);
  std::string line;
  GrandCanonicalConfig cfg;
  std::vector<double> times;
  double horizon = 0.0;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
        s.erase(s.begin());
      while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
        s.pop_back();
    };
    trim(key);
    trim(val);
    if (key == "epsilon") cfg.epsilon = std::stod(val);
    else if (key == "mu") cfg.mu = std::stod(val);
    else if (key == "f_in") cfg.f_in = FinSpec::parse(val);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else if (key == "exclusion") cfg.exclusion = val == "on";
    else if (key == "fixed_n") cfg.fixed_n = std::stoi(val);
    else if (key == "T") horizon = std::stod(val);
    else if (key == "sample_times") {
      std::istringstream ts(val);
      double t;
      while (ts >> t) times.push_back(t);
    }
  }
  store.config = cfg;
  store.horizon = horizon;
  store.sample_times = times;
  store.config_hash = manifest["config_hash"];

  const int count = manifest["replicas"];
  store.replicas.resize(count);
  for (int r = 0; r < count; ++r) {
    char name[64];
    std::snprintf(name, sizeof name, "replica_%05d.txt", r);
    std::ifstream ts(fs::path(dir) / name);
    if (!ts) throw EnsembleError(std::string("missing ") + name);
    store.replicas[r].data = read_trajectory(ts);
    store.replicas[r].seed = manifest["seeds"][r];
    store.replicas[r].resample_count = manifest["resample_counts"][r];
  }
  return store;
}

}  // namespace bgl
