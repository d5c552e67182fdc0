// Event-driven simulation of N hard spheres of diameter epsilon on the unit
// torus: exact free flight between events, exact pairwise collision times,
// priority queue with lazy invalidation, cell lists for candidate pruning.

#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <queue>
#include <stdexcept>
#include <utility>
#include <vector>

#include "bgl/geometry.hpp"

namespace bgl {

struct ParticleSet {
  double epsilon = 0.1;  // sphere diameter, in (0, 1/2)
  std::vector<TorusPoint> positions;
  std::vector<Velocity> velocities;
  double time = 0.0;

  int size() const { return static_cast<int>(positions.size()); }
};

struct TrajectoryEvent {
  double time;
  int i, j;
  Velocity vi_post, vj_post;
};

// Event record of one run; replaying the events from the initial state
// reproduces the final state.
struct Trajectory {
  ParticleSet initial;
  std::vector<TrajectoryEvent> events;
  double final_time = 0.0;
};

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Earliest t > 0 at which the pair reaches distance epsilon while closing,
// searching periodic images as far as the horizon requires. nullopt if the
// spheres never meet before the horizon.
std::optional<double> pair_collision_time(const PhasePoint& z1,
                                          const PhasePoint& z2, double epsilon,
                                          double horizon = 1e3);

class HardSphereSimulation {
 public:
  explicit HardSphereSimulation(const ParticleSet& initial,
                                bool record_trajectory = false);

  // Process all events up to t_target; the state is left at exactly t_target.
  // May be called repeatedly with increasing targets; the event stream is
  // identical to a single call with the final target.
  void advance(double t_target);

  ParticleSet snapshot() const;
  double time() const { return time_; }
  std::uint64_t collisions() const { return collisions_; }
  std::uint64_t events_processed() const { return events_processed_; }
  const Trajectory& trajectory() const { return trajectory_; }

  // Velocities of a particle at the current time (free flight between its
  // events, so this is just the stored velocity).
  const Velocity& velocity(int i) const { return vel_[i]; }

  // Runaway guard; exceeded -> SimulationError with diagnostics.
  std::uint64_t max_collisions = 1'000'000;

 private:
  struct Event {
    double t = 0.0;
    int i = -1;    // owner
    int j = -1;    // partner, or -1 for a cell crossing
    int axis = 0;  // crossing axis
    int dir = 0;   // crossing direction, +1/-1
    std::uint64_t stamp_i = 0, stamp_j = 0;
  };
  struct EventLater {
    bool operator()(const Event& a, const Event& b) const {
      if (a.t != b.t) return a.t > b.t;
      if (a.i != b.i) return a.i > b.i;
      if (a.j != b.j) return a.j > b.j;
      if (a.axis != b.axis) return a.axis > b.axis;
      return a.stamp_i > b.stamp_i;
    }
  };

  Vec3 position_at(int i, double t) const {
    return pos_[i] + (t - anchor_[i]) * vel_[i];
  }
  int cell_of_position(const Vec3& unwrapped) const;
  int cell_index(int cx, int cy, int cz) const {
    return (cx * m_ + cy) * m_ + cz;
  }
  void insert_into_cell(int i, int cell);
  void remove_from_cell(int i, int cell);
  void schedule(int i, double now);
  std::optional<double> pair_time_local(int i, int j, double now) const;
  void process_collision(const Event& ev);
  void process_crossing(const Event& ev);

  double epsilon_;
  int n_;
  int m_;            // cells per axis
  double edge_;      // cell edge = 1/m
  double time_ = 0.0;

  std::vector<Vec3> pos_;        // unwrapped anchor positions
  std::vector<Vec3> vel_;
  std::vector<double> anchor_;   // anchor times
  std::vector<std::uint64_t> stamp_;
  std::vector<int> cell_;        // cx, cy, cz packed
  std::vector<std::array<int, 3>> cell_coord_;
  std::vector<std::vector<int>> cell_members_;

  std::priority_queue<Event, std::vector<Event>, EventLater> queue_;

  std::uint64_t collisions_ = 0;
  std::uint64_t events_processed_ = 0;
  double last_collision_time_ = -1.0;
  int last_collision_i_ = -1, last_collision_j_ = -1;

  bool record_;
  Trajectory trajectory_;
};

// One-shot advance; positions are materialized at t_target.
ParticleSet advance(const ParticleSet& state, double t_target);

// Advance while recording the event stream.
std::pair<ParticleSet, Trajectory> advance_recorded(const ParticleSet& state,
                                                    double t_target);

// Negates all velocities and resets the clock to zero.
ParticleSet reverse_velocities(const ParticleSet& state);

// Replay a trajectory's event records from its initial state.
ParticleSet replay(const Trajectory& traj);

// Versioned text serialization. Snapshots may be appended by the caller.
void write_trajectory(std::ostream& os, const Trajectory& traj,
                      std::uint64_t seed,
                      const std::vector<std::pair<double, ParticleSet>>&
                          snapshots = {});
struct TrajectoryFile {
  Trajectory trajectory;
  std::uint64_t seed = 0;
  std::vector<std::pair<double, ParticleSet>> snapshots;
};
TrajectoryFile read_trajectory(std::istream& is);

}  // namespace bgl
