#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "bgl/ensemble.hpp"
#include "bgl/rng.hpp"

using namespace bgl;

namespace {

double min_pair_distance(const ParticleSet& s) {
  double d = 1e300;
  for (int i = 0; i < s.size(); ++i)
    for (int j = i + 1; j < s.size(); ++j)
      d = std::min(d, torus_distance(s.positions[i], s.positions[j]));
  return d;
}

// Full-configuration rejection sampler: the textbook realization of the
// grand-canonical density, feasible only when mu^2 eps^3 is small. Used as
// the exactness oracle for the partial rejection sampler.
ParticleSet full_rejection_sample(const GrandCanonicalConfig& cfg, Rng& rng) {
  while (true) {
    const auto n = rng.poisson(cfg.mu);
    std::vector<TorusPoint> pts;
    for (std::uint64_t i = 0; i < n; ++i)
      pts.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());
    bool ok = true;
    for (size_t i = 0; i < pts.size() && ok; ++i)
      for (size_t j = i + 1; j < pts.size() && ok; ++j)
        if (torus_distance(pts[i], pts[j]) <= cfg.epsilon) ok = false;
    if (!ok) continue;
    ParticleSet out;
    out.epsilon = cfg.epsilon;
    out.positions = std::move(pts);
    for (size_t i = 0; i < out.positions.size(); ++i)
      out.velocities.push_back(cfg.f_in.sample(rng));
    return out;
  }
}

double erf_cdf(double x, double mean, double theta) {
  return 0.5 * (1.0 + std::erf((x - mean) / std::sqrt(2.0 * theta)));
}

}  // namespace

TEST_CASE("sample_initial: mu=0 gives the empty state") {
  GrandCanonicalConfig cfg;
  cfg.mu = 0.0;
  cfg.epsilon = 0.1;
  for (int k = 0; k < 50; ++k) {
    const ParticleSet s = sample_initial(cfg, derive_seed(9, k));
    CHECK(s.size() == 0);
  }
}

TEST_CASE("sample_initial: exclusion-off counts are exactly Poisson(mu)") {
  GrandCanonicalConfig cfg;
  cfg.mu = 40.0;
  cfg.epsilon = 0.05;
  cfg.exclusion = false;
  const int draws = 10000;
  double sum = 0.0, sum2 = 0.0;
  for (int k = 0; k < draws; ++k) {
    const ParticleSet s = sample_initial(cfg, derive_seed(17, k));
    sum += s.size();
    sum2 += double(s.size()) * s.size();
  }
  const double mean = sum / draws;
  const double var = sum2 / draws - mean * mean;
  const double sigma_mean = std::sqrt(cfg.mu / draws);
  CHECK(std::abs(mean - cfg.mu) <= 3.0 * sigma_mean);
  // Poisson variance equals the mean; allow a wide band for the sample
  // variance of 1e4 draws
  CHECK(std::abs(var - cfg.mu) <= 6.0 * cfg.mu / std::sqrt(double(draws)));
}

TEST_CASE("sample_initial: exclusion holds exactly on every accepted state") {
  GrandCanonicalConfig cfg;
  cfg.mu = 150.0;
  cfg.epsilon = 0.06;
  for (int k = 0; k < 30; ++k) {
    const ParticleSet s = sample_initial(cfg, derive_seed(4, k));
    CHECK(min_pair_distance(s) > cfg.epsilon);
  }
}

TEST_CASE("sample_initial: mean N within the excluded-volume bracket") {
  // E(N) in [mu (1 - (4/3) pi C eps^3 mu), mu] with C = 1 for uniform-x data
  GrandCanonicalConfig cfg;
  cfg.mu = 200.0;
  cfg.epsilon = 0.05;
  const int draws = 3000;
  double sum = 0.0;
  for (int k = 0; k < draws; ++k)
    sum += sample_initial(cfg, derive_seed(23, k)).size();
  const double mean = sum / draws;
  const double sigma = std::sqrt(cfg.mu / draws);  // Poisson-scale error bar
  const double lo =
      cfg.mu * (1.0 - 4.0 / 3.0 * M_PI * std::pow(cfg.epsilon, 3) * cfg.mu);
  CHECK(mean >= lo - 3.0 * sigma);
  CHECK(mean <= cfg.mu + 3.0 * sigma);
  // the excluded volume actually bites at these parameters
  CHECK(mean < cfg.mu - 3.0 * sigma);
}

TEST_CASE("partial rejection sampling matches full rejection in distribution") {
  // feasible full-rejection regime: acceptance ~ exp(-mu^2 (2/3) pi eps^3)
  GrandCanonicalConfig cfg;
  cfg.mu = 8.0;
  cfg.epsilon = 0.15;
  const int draws = 20000;

  Rng oracle_rng(777);
  double sum_prs = 0.0, sum_full = 0.0;
  std::map<int, int> hist_prs, hist_full;
  // pair-distance statistic: fraction of draws with min distance < 1.3 eps
  int close_prs = 0, close_full = 0;
  for (int k = 0; k < draws; ++k) {
    const ParticleSet a = sample_initial(cfg, derive_seed(100, k));
    const ParticleSet b = full_rejection_sample(cfg, oracle_rng);
    sum_prs += a.size();
    sum_full += b.size();
    hist_prs[a.size()]++;
    hist_full[b.size()]++;
    if (a.size() >= 2 && min_pair_distance(a) < 1.3 * cfg.epsilon) ++close_prs;
    if (b.size() >= 2 && min_pair_distance(b) < 1.3 * cfg.epsilon) ++close_full;
  }
  const double mean_prs = sum_prs / draws;
  const double mean_full = sum_full / draws;
  const double sigma = std::sqrt(2.0 * cfg.mu / draws);
  CHECK(std::abs(mean_prs - mean_full) <= 3.0 * sigma);

  // count histogram: chi-square-style comparison over bins with >50 expected
  for (const auto& [n, c_full] : hist_full) {
    if (c_full < 50) continue;
    const double c_prs = hist_prs.count(n) ? hist_prs[n] : 0.0;
    const double band = 3.0 * std::sqrt(2.0 * c_full);
    CHECK(std::abs(c_prs - c_full) <= band + 10.0);
  }

  // geometry statistic sensitive to pair correlations near contact
  const double p = double(close_full) / draws;
  const double band3 = 3.0 * std::sqrt(2.0 * p * (1 - p) * draws);
  CHECK(std::abs(close_prs - close_full) <= band3 + 10.0);
}

TEST_CASE("velocity marginal: KS per component at the 1% level") {
  GrandCanonicalConfig cfg;
  cfg.mu = 50.0;
  cfg.epsilon = 0.02;
  cfg.exclusion = false;
  cfg.f_in = FinSpec::two_bump(1.2, 0.5);

  std::vector<double> xs, ys;
  for (int k = 0; k < 400; ++k) {
    const ParticleSet s = sample_initial(cfg, derive_seed(31, k));
    for (const auto& v : s.velocities) {
      xs.push_back(v.x());
      ys.push_back(v.y());
    }
  }
  auto ks = [](std::vector<double>& data, auto cdf) {
    std::sort(data.begin(), data.end());
    double worst = 0.0;
    const double n = double(data.size());
    for (size_t i = 0; i < data.size(); ++i) {
      const double f = cdf(data[i]);
      worst = std::max(worst, std::abs(f - (i + 1) / n));
      worst = std::max(worst, std::abs(f - i / n));
    }
    return worst;
  };
  const double crit = 1.628 / std::sqrt(double(xs.size()));  // 1% level
  const double dx = ks(xs, [](double x) {
    return 0.5 * erf_cdf(x, 1.2, 0.5) + 0.5 * erf_cdf(x, -1.2, 0.5);
  });
  const double dy = ks(ys, [](double y) { return erf_cdf(y, 0.0, 0.5); });
  CHECK(dx <= crit);
  CHECK(dy <= crit);
}

TEST_CASE("tabulated f_in sampled by alias method matches its density") {
  const VelocityGrid grid(3.0, 8);
  GridFunction dens =
      GridFunction::sample(grid, [](const Velocity& v) {
        return std::exp(-0.7 * v.squaredNorm()) * (2.0 + v.x());
      });
  FinSpec fin = FinSpec::tabulated(dens);

  Rng rng(5150);
  const int draws = 200000;
  double mean_x = 0.0;
  for (int k = 0; k < draws; ++k) mean_x += fin.sample(rng).x();
  mean_x /= draws;
  // exact mean of the normalized piecewise-constant density
  GridFunction norm = dens;
  norm.values /= dens.integral();
  double expect = 0.0;
  for (int i = 0; i < grid.size(); ++i)
    expect += grid.node(i).x() * norm.values[i] * grid.cell_volume();
  CHECK(mean_x == doctest::Approx(expect).epsilon(0.02));
}

TEST_CASE("run_replicas: determinism, invariants, persistence round-trip") {
  GrandCanonicalConfig cfg;
  cfg.epsilon = 0.1;
  cfg.mu = 60.0;
  cfg.seed = 99;
  const std::vector<double> times = {0.0, 0.1, 0.2};

  ReplicaStore a = run_replicas(cfg, 0.2, 12, times);
  ReplicaStore b = run_replicas(cfg, 0.2, 12, times);

  namespace fs = std::filesystem;
  const std::string da = "/tmp/bgl_store_a", db = "/tmp/bgl_store_b";
  fs::remove_all(da);
  fs::remove_all(db);
  save_store(a, da);
  save_store(b, db);
  for (const auto& entry : fs::directory_iterator(da)) {
    std::ifstream fa(entry.path(), std::ios::binary);
    std::ifstream fb(fs::path(db) / entry.path().filename(),
                     std::ios::binary);
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    CHECK(sa.str() == sb.str());
  }

  // no-overlap and conservation on every snapshot
  for (int r = 0; r < a.count(); ++r) {
    const ParticleSet& s0 = a.state_at(r, 0.0);
    Vec3 p0 = Vec3::Zero();
    double e0 = 0.0;
    for (const auto& v : s0.velocities) {
      p0 += v;
      e0 += v.squaredNorm();
    }
    for (double t : times) {
      const ParticleSet& st = a.state_at(r, t);
      CHECK(min_pair_distance(st) >= cfg.epsilon - 1e-9);
      Vec3 p = Vec3::Zero();
      double e = 0.0;
      for (const auto& v : st.velocities) {
        p += v;
        e += v.squaredNorm();
      }
      CHECK((p - p0).norm() <= 1e-10 * std::max(1.0, p0.norm()));
      CHECK(std::abs(e - e0) <= 1e-10 * std::max(1.0, e0));
    }
  }

  // store round-trip preserves states and seeds
  const ReplicaStore back = load_store(da);
  CHECK(back.config_hash == a.config_hash);
  CHECK(back.count() == a.count());
  for (int r = 0; r < a.count(); ++r) {
    CHECK(back.replicas[r].seed == a.replicas[r].seed);
    const ParticleSet& x = back.state_at(r, 0.2);
    const ParticleSet& y = a.state_at(r, 0.2);
    REQUIRE(x.size() == y.size());
    for (int i = 0; i < x.size(); ++i)
      CHECK(torus_distance(x.positions[i], y.positions[i]) == 0.0);
  }

  // worker pool gives the identical store (order-fixed reduction)
  ReplicaStore c = run_replicas(cfg, 0.2, 12, times, /*workers=*/3);
  for (int r = 0; r < a.count(); ++r) {
    CHECK(c.replicas[r].seed == a.replicas[r].seed);
    const ParticleSet& x = c.state_at(r, 0.2);
    const ParticleSet& y = a.state_at(r, 0.2);
    for (int i = 0; i < x.size(); ++i)
      CHECK(torus_distance(x.positions[i], y.positions[i]) == 0.0);
  }

  // unknown sample time reports the available ones
  CHECK_THROWS_WITH_AS((void)a.state_at(0, 0.123), doctest::Contains("0.1"),
                       EnsembleError);
}

TEST_CASE("f_in config strings round-trip") {
  const FinSpec a = FinSpec::two_bump(1.5, 0.8);
  const FinSpec b = FinSpec::parse(a.to_config_string());
  Rng r1(7), r2(7);
  for (int k = 0; k < 200; ++k)
    CHECK((a.sample(r1) - b.sample(r2)).norm() == 0.0);

  const FinSpec m = FinSpec::maxwellian(0.7);
  const FinSpec m2 = FinSpec::parse(m.to_config_string());
  for (int k = 0; k < 50; ++k) {
    const Velocity v(0.3 * k - 7.0, 0.1 * k, 0.05 * k);
    CHECK(m.density(v) == doctest::Approx(m2.density(v)).epsilon(1e-14));
  }
}
