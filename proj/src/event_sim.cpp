#include "bgl/event_sim.hpp"

#include "bgl/kinetic.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace bgl {

namespace {

constexpr double kGrazeTol = 1e-10;

// Earliest positive root of |dx + t dv| = eps with closing approach, for one
// fixed image offset. Returns +inf if none.
double image_root(const Vec3& dx, const Vec3& dv, double eps) {
  const double a = dv.squaredNorm();
  if (a == 0.0) return std::numeric_limits<double>::infinity();
  const double b = dv.dot(dx);
  if (b >= 0.0) return std::numeric_limits<double>::infinity();  // separating
  const double c = dx.squaredNorm() - eps * eps;
  double disc = b * b - a * c;
  if (disc < -1e-20) return std::numeric_limits<double>::infinity();
  if (disc < 0.0) disc = 0.0;
  const double root_speed = std::sqrt(disc);
  // grazing contact: no velocity change would result, ignore it
  if (root_speed <= kGrazeTol * (std::sqrt(a) + 1.0))
    return std::numeric_limits<double>::infinity();
  const double t = (-b - root_speed) / a;
  return t >= 0.0 ? t : 0.0;
}

}  // namespace

std::optional<double> pair_collision_time(const PhasePoint& z1,
                                          const PhasePoint& z2, double epsilon,
                                          double horizon) {
  const Vec3 dx0 = torus_separation(z1.x, z2.x);
  if (dx0.norm() < epsilon * (1.0 - 1e-9))
    throw SimulationError("pair_collision_time: spheres overlap on entry");
  const Vec3 dv = z2.v - z1.v;
  if (dv.squaredNorm() == 0.0) return std::nullopt;

  // Expand the image search window until it provably covers the horizon.
  double window = std::min(horizon, 1.0 / std::max(dv.norm(), 1e-30));
  while (true) {
    int kx[3];
    for (int a = 0; a < 3; ++a)
      kx[a] = 1 + static_cast<int>(
                      std::floor(0.5 + window * std::abs(dv[a]) + epsilon));
    double best = std::numeric_limits<double>::infinity();
    for (int nx = -kx[0]; nx <= kx[0]; ++nx)
      for (int ny = -kx[1]; ny <= kx[1]; ++ny)
        for (int nz = -kx[2]; nz <= kx[2]; ++nz) {
          const Vec3 dx = dx0 + Vec3(nx, ny, nz);
          best = std::min(best, image_root(dx, dv, epsilon));
        }
    if (best <= window) return best;
    if (window >= horizon) return std::nullopt;
    window = std::min(horizon, window * 4.0);
  }
}

HardSphereSimulation::HardSphereSimulation(const ParticleSet& initial,
                                           bool record_trajectory)
    : epsilon_(initial.epsilon),
      n_(initial.size()),
      time_(initial.time),
      record_(record_trajectory) {
  if (!(epsilon_ > 0.0 && epsilon_ < 0.5))
    throw SimulationError("epsilon must lie in (0, 1/2)");

  m_ = std::clamp(static_cast<int>(std::floor(1.0 / epsilon_)), 2, 16);
  edge_ = 1.0 / m_;

  pos_.resize(n_);
  vel_.resize(n_);
  anchor_.assign(n_, time_);
  stamp_.assign(n_, 0);
  cell_.assign(n_, 0);
  cell_coord_.resize(n_);
  cell_members_.assign(m_ * m_ * m_, {});

  for (int i = 0; i < n_; ++i) {
    pos_[i] = initial.positions[i].coords;
    vel_[i] = initial.velocities[i];
    const int c = cell_of_position(pos_[i]);
    cell_[i] = c;
    insert_into_cell(i, c);
  }

  // admissibility check
  for (int i = 0; i < n_; ++i)
    for (int j = i + 1; j < n_; ++j)
      if (torus_distance(TorusPoint(pos_[i]), TorusPoint(pos_[j])) <
          epsilon_ * (1.0 - 1e-9))
        throw SimulationError("initial state has overlapping spheres");

  if (record_) {
    trajectory_.initial = initial;
    trajectory_.final_time = time_;
  }

  for (int i = 0; i < n_; ++i) schedule(i, time_);
}

int HardSphereSimulation::cell_of_position(const Vec3& unwrapped) const {
  int c[3];
  for (int a = 0; a < 3; ++a) {
    const double w = wrap_unit(unwrapped[a]);
    c[a] = std::min(static_cast<int>(w * m_), m_ - 1);
  }
  return cell_index(c[0], c[1], c[2]);
}

void HardSphereSimulation::insert_into_cell(int i, int cell) {
  cell_members_[cell].push_back(i);
  const int cz = cell % m_;
  const int cy = (cell / m_) % m_;
  const int cx = cell / (m_ * m_);
  cell_coord_[i] = {cx, cy, cz};
}

void HardSphereSimulation::remove_from_cell(int i, int cell) {
  auto& v = cell_members_[cell];
  v.erase(std::find(v.begin(), v.end(), i));
}

// Collision time of pair (i, j) measured from `now`, using the minimum image
// plus the 27 adjacent ones. Valid while both fly freely; cell crossings
// bound each flight so the window never exceeds the search box.
std::optional<double> HardSphereSimulation::pair_time_local(int i, int j,
                                                            double now) const {
  const Vec3 xi = position_at(i, now);
  const Vec3 xj = position_at(j, now);
  const Vec3 dx0 = torus_separation(TorusPoint(xi), TorusPoint(xj));
  const Vec3 dv = vel_[j] - vel_[i];
  if (dv.squaredNorm() == 0.0) return std::nullopt;
  double best = std::numeric_limits<double>::infinity();
  for (int nx = -1; nx <= 1; ++nx)
    for (int ny = -1; ny <= 1; ++ny)
      for (int nz = -1; nz <= 1; ++nz)
        best = std::min(best,
                        image_root(dx0 + Vec3(nx, ny, nz), dv, epsilon_));
  if (!std::isfinite(best)) return std::nullopt;
  return best;
}

void HardSphereSimulation::schedule(int i, double now) {
  Event best;
  best.t = std::numeric_limits<double>::infinity();
  best.i = i;
  best.j = -2;  // none

  // next cell crossing; the offset into the cell is reduced modulo the torus
  // period so boundary positions right after a wrap do not go negative
  const Vec3 xi = position_at(i, now);
  const auto& cc = cell_coord_[i];
  for (int a = 0; a < 3; ++a) {
    const double v = vel_[i][a];
    if (v == 0.0) continue;
    double u = wrap_unit(xi[a]) - cc[a] * edge_;
    u -= std::round(u);
    u = std::clamp(u, 0.0, edge_);
    const double dt = (v > 0.0 ? edge_ - u : u) / std::abs(v);
    if (now + dt < best.t) {
      best.t = now + dt;
      best.j = -1;
      best.axis = a;
      best.dir = v > 0.0 ? +1 : -1;
    }
  }

  // candidate partners from the 3^3 cell neighborhood (deduplicated; with few
  // cells per axis the offsets alias)
  int seen[27];
  int nseen = 0;
  for (int ox = -1; ox <= 1; ++ox)
    for (int oy = -1; oy <= 1; ++oy)
      for (int oz = -1; oz <= 1; ++oz) {
        const int cx = (cc[0] + ox + m_) % m_;
        const int cy = (cc[1] + oy + m_) % m_;
        const int cz = (cc[2] + oz + m_) % m_;
        const int c = cell_index(cx, cy, cz);
        bool dup = false;
        for (int k = 0; k < nseen; ++k)
          if (seen[k] == c) dup = true;
        if (dup) continue;
        seen[nseen++] = c;
        for (int j : cell_members_[c]) {
          if (j == i) continue;
          const auto dt = pair_time_local(i, j, now);
          if (dt && now + *dt < best.t) {
            best.t = now + *dt;
            best.j = j;
          }
        }
      }

  if (best.j == -2) return;  // motionless and collisionless
  best.stamp_i = stamp_[i];
  best.stamp_j = best.j >= 0 ? stamp_[best.j] : 0;
  queue_.push(best);
}

void HardSphereSimulation::process_collision(const Event& ev) {
  const int i = ev.i, j = ev.j;
  pos_[i] = position_at(i, ev.t);
  pos_[j] = position_at(j, ev.t);
  anchor_[i] = anchor_[j] = ev.t;

  const Vec3 d = torus_separation(TorusPoint(pos_[i]), TorusPoint(pos_[j]));
  const double r = d.norm();
  const Vec3 omega = d / r;  // n_ij = (x_j - x_i)/eps at contact
  // Any closing approach gets the impulse; grazing roots are filtered out at
  // scheduling time. Skipping the impulse on a scheduled contact would leave
  // the pair approaching and re-detect the same root forever.
  const double approach = (vel_[i] - vel_[j]).dot(omega);
  if (approach > 0.0) {
    const CollisionPair post = collide(vel_[i], vel_[j], omega);
    vel_[i] = post.v_prime;
    vel_[j] = post.v_star_prime;

    if (last_collision_i_ >= 0 && ev.t - last_collision_time_ <= 1e-12 &&
        (i == last_collision_i_ || i == last_collision_j_ ||
         j == last_collision_i_ || j == last_collision_j_)) {
      std::ostringstream msg;
      msg << "near-simultaneous triple contact at t=" << ev.t << " (pairs "
          << last_collision_i_ << "," << last_collision_j_ << " and " << i
          << "," << j << "); aborting on the measure-zero pathological set";
      throw SimulationError(msg.str());
    }
    last_collision_time_ = ev.t;
    last_collision_i_ = i;
    last_collision_j_ = j;

    ++collisions_;
    if (collisions_ > max_collisions)
      throw SimulationError("runaway event count: more than " +
                            std::to_string(max_collisions) + " collisions");
    if (record_)
      trajectory_.events.push_back({ev.t, i, j, vel_[i], vel_[j]});
  }

  ++stamp_[i];
  ++stamp_[j];
  schedule(i, ev.t);
  schedule(j, ev.t);
}

void HardSphereSimulation::process_crossing(const Event& ev) {
  const int i = ev.i;
  pos_[i] = position_at(i, ev.t);
  anchor_[i] = ev.t;
  remove_from_cell(i, cell_[i]);
  auto cc = cell_coord_[i];
  cc[ev.axis] = (cc[ev.axis] + ev.dir + m_) % m_;
  const int c = cell_index(cc[0], cc[1], cc[2]);
  cell_[i] = c;
  cell_members_[c].push_back(i);
  cell_coord_[i] = cc;
  ++stamp_[i];
  schedule(i, ev.t);
}

void HardSphereSimulation::advance(double t_target) {
  if (t_target < time_)
    throw SimulationError("advance target precedes current time");
  while (!queue_.empty() && queue_.top().t <= t_target) {
    const Event ev = queue_.top();
    queue_.pop();
    ++events_processed_;
    if (stamp_[ev.i] != ev.stamp_i) continue;
    if (ev.j >= 0 && stamp_[ev.j] != ev.stamp_j) continue;
    if (ev.j >= 0)
      process_collision(ev);
    else
      process_crossing(ev);
  }
  time_ = t_target;
  if (record_) trajectory_.final_time = t_target;
}

ParticleSet HardSphereSimulation::snapshot() const {
  ParticleSet out;
  out.epsilon = epsilon_;
  out.time = time_;
  out.positions.reserve(n_);
  out.velocities.reserve(n_);
  for (int i = 0; i < n_; ++i) {
    out.positions.emplace_back(position_at(i, time_));
    out.velocities.push_back(vel_[i]);
  }
  return out;
}

ParticleSet advance(const ParticleSet& state, double t_target) {
  HardSphereSimulation sim(state);
  sim.advance(t_target);
  return sim.snapshot();
}

std::pair<ParticleSet, Trajectory> advance_recorded(const ParticleSet& state,
                                                    double t_target) {
  HardSphereSimulation sim(state, true);
  sim.advance(t_target);
  return {sim.snapshot(), sim.trajectory()};
}

ParticleSet reverse_velocities(const ParticleSet& state) {
  ParticleSet out = state;
  out.time = 0.0;
  for (auto& v : out.velocities) v = -v;
  return out;
}

ParticleSet replay(const Trajectory& traj) {
  ParticleSet s = traj.initial;
  const int n = s.size();
  std::vector<Vec3> pos(n), vel(n);
  std::vector<double> anchor(n, s.time);
  for (int i = 0; i < n; ++i) {
    pos[i] = s.positions[i].coords;
    vel[i] = s.velocities[i];
  }
  for (const auto& e : traj.events) {
    for (int k : {e.i, e.j}) {
      pos[k] += (e.time - anchor[k]) * vel[k];
      anchor[k] = e.time;
    }
    vel[e.i] = e.vi_post;
    vel[e.j] = e.vj_post;
  }
  ParticleSet out;
  out.epsilon = s.epsilon;
  out.time = traj.final_time;
  for (int i = 0; i < n; ++i) {
    out.positions.emplace_back(pos[i] + (traj.final_time - anchor[i]) * vel[i]);
    out.velocities.push_back(vel[i]);
  }
  return out;
}

namespace {

void write_state_lines(std::ostream& os, const ParticleSet& s) {
  char buf[256];
  for (int i = 0; i < s.size(); ++i) {
    const auto& x = s.positions[i].coords;
    const auto& v = s.velocities[i];
    std::snprintf(buf, sizeof buf,
                  "%.17g %.17g %.17g %.17g %.17g %.17g\n", x.x(), x.y(),
                  x.z(), v.x(), v.y(), v.z());
    os << buf;
  }
}

ParticleSet read_state_lines(std::istream& is, int n, double eps, double t) {
  ParticleSet s;
  s.epsilon = eps;
  s.time = t;
  for (int i = 0; i < n; ++i) {
    double x, y, z, vx, vy, vz;
    is >> x >> y >> z >> vx >> vy >> vz;
    s.positions.emplace_back(x, y, z);
    s.velocities.emplace_back(vx, vy, vz);
  }
  return s;
}

}  // namespace

void write_trajectory(std::ostream& os, const Trajectory& traj,
                      std::uint64_t seed,
                      const std::vector<std::pair<double, ParticleSet>>&
                          snapshots) {
  char buf[512];
  os << "bgl-trajectory v1\n";
  os << "N " << traj.initial.size() << "\n";
  std::snprintf(buf, sizeof buf, "epsilon %.17g\n", traj.initial.epsilon);
  os << buf;
  os << "seed " << seed << "\n";
  std::snprintf(buf, sizeof buf, "time0 %.17g\n", traj.initial.time);
  os << buf;
  write_state_lines(os, traj.initial);
  for (const auto& e : traj.events) {
    std::snprintf(buf, sizeof buf,
                  "E %.17g %d %d %.17g %.17g %.17g %.17g %.17g %.17g\n",
                  e.time, e.i, e.j, e.vi_post.x(), e.vi_post.y(),
                  e.vi_post.z(), e.vj_post.x(), e.vj_post.y(), e.vj_post.z());
    os << buf;
  }
  for (const auto& [t, state] : snapshots) {
    std::snprintf(buf, sizeof buf, "S %.17g\n", t);
    os << buf;
    write_state_lines(os, state);
  }
  std::snprintf(buf, sizeof buf, "F %.17g\n", traj.final_time);
  os << buf;
}

TrajectoryFile read_trajectory(std::istream& is) {
  TrajectoryFile out;
  std::string tag, version;
  is >> tag >> version;
  if (tag != "bgl-trajectory" || version != "v1")
    throw SimulationError("unrecognized trajectory format");
  int n = 0;
  double eps = 0.0, t0 = 0.0;
  is >> tag >> n;        // N
  is >> tag >> eps;      // epsilon
  is >> tag >> out.seed; // seed
  is >> tag >> t0;       // time0
  out.trajectory.initial = read_state_lines(is, n, eps, t0);
  while (is >> tag) {
    if (tag == "E") {
      TrajectoryEvent e;
      is >> e.time >> e.i >> e.j;
      is >> e.vi_post.x() >> e.vi_post.y() >> e.vi_post.z();
      is >> e.vj_post.x() >> e.vj_post.y() >> e.vj_post.z();
      out.trajectory.events.push_back(e);
    } else if (tag == "S") {
      double t;
      is >> t;
      out.snapshots.emplace_back(t, read_state_lines(is, n, eps, t));
    } else if (tag == "F") {
      is >> out.trajectory.final_time;
    } else {
      throw SimulationError("unrecognized trajectory record: " + tag);
    }
  }
  return out;
}

}  // namespace bgl
