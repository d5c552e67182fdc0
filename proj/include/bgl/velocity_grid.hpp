// Truncated Cartesian velocity grid and functions sampled on it. Nodes are
// cell centers of a uniform lattice over [-V, V]^3; every node carries the
// same quadrature weight (the cell volume). Off-node evaluation is trilinear
// with extrapolation by zero outside the truncation box.

#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>

#include "bgl/kinetic.hpp"

namespace bgl {

using Eigen::VectorXd;

class VelocityGrid {
 public:
  VelocityGrid(double half_width, int points_per_axis, double theta_ref = 1.0)
      : half_width_(half_width), n_(points_per_axis), theta_ref_(theta_ref) {
    if (points_per_axis < 4) throw std::invalid_argument("grid needs n >= 4");
    if (half_width <= 0.0) throw std::invalid_argument("grid needs V > 0");
    h_ = 2.0 * half_width_ / n_;
    cell_volume_ = h_ * h_ * h_;
  }

  // Default desk-scale grid: n = 12 nodes per axis, V = 6 sqrt(theta_ref).
  // Gaussian mass outside |v_i| > 6 sqrt(theta) is below 1e-8 per axis.
  static VelocityGrid standard(double theta_ref = 1.0) {
    return VelocityGrid(6.0 * std::sqrt(theta_ref), 12, theta_ref);
  }

  int n() const { return n_; }
  int size() const { return n_ * n_ * n_; }
  double half_width() const { return half_width_; }
  double spacing() const { return h_; }
  double cell_volume() const { return cell_volume_; }
  double theta_ref() const { return theta_ref_; }

  double axis_coord(int k) const { return -half_width_ + (k + 0.5) * h_; }

  int index(int ix, int iy, int iz) const { return (ix * n_ + iy) * n_ + iz; }

  Velocity node(int i) const {
    const int iz = i % n_;
    const int iy = (i / n_) % n_;
    const int ix = i / (n_ * n_);
    return Velocity(axis_coord(ix), axis_coord(iy), axis_coord(iz));
  }

  bool operator==(const VelocityGrid& o) const {
    return n_ == o.n_ && half_width_ == o.half_width_ &&
           theta_ref_ == o.theta_ref_;
  }

  // Trilinear stencil of a point: up to 8 (node index, weight) pairs.
  // Corners falling outside the box are dropped (zero extension).
  struct Stencil {
    std::array<int, 8> idx;
    std::array<double, 8> w;
    int count = 0;
    bool clipped = false;
  };

  Stencil stencil(const Velocity& v) const {
    Stencil s;
    int base[3];
    double frac[3];
    for (int a = 0; a < 3; ++a) {
      const double t = (v[a] + half_width_) / h_ - 0.5;
      const double fl = std::floor(t);
      base[a] = static_cast<int>(fl);
      frac[a] = t - fl;
    }
    for (int cx = 0; cx <= 1; ++cx)
      for (int cy = 0; cy <= 1; ++cy)
        for (int cz = 0; cz <= 1; ++cz) {
          const int ix = base[0] + cx, iy = base[1] + cy, iz = base[2] + cz;
          const double wgt = (cx ? frac[0] : 1.0 - frac[0]) *
                             (cy ? frac[1] : 1.0 - frac[1]) *
                             (cz ? frac[2] : 1.0 - frac[2]);
          if (ix < 0 || ix >= n_ || iy < 0 || iy >= n_ || iz < 0 || iz >= n_) {
            if (wgt != 0.0) s.clipped = true;
            continue;
          }
          s.idx[s.count] = index(ix, iy, iz);
          s.w[s.count] = wgt;
          ++s.count;
        }
    return s;
  }

 private:
  double half_width_;
  int n_;
  double theta_ref_;
  double h_;
  double cell_volume_;
};

// Scalar function sampled at grid nodes. The grid is a small value type and
// is stored by value, so grid functions are freely copyable and returnable.
struct GridFunction {
  VelocityGrid grid{1.0, 4};
  VectorXd values;

  GridFunction() = default;
  explicit GridFunction(const VelocityGrid& g)
      : grid(g), values(VectorXd::Zero(g.size())) {}
  GridFunction(const VelocityGrid& g, VectorXd vals)
      : grid(g), values(std::move(vals)) {
    if (values.size() != g.size())
      throw std::invalid_argument("GridFunction size mismatch");
  }

  static GridFunction sample(const VelocityGrid& g, const VelocityFunction& f) {
    GridFunction out(g);
    for (int i = 0; i < g.size(); ++i) out.values[i] = f(g.node(i));
    return out;
  }

  static GridFunction maxwellian_on(const VelocityGrid& g,
                                    const MaxwellianParams& p) {
    return sample(g, [&](const Velocity& v) { return maxwellian(p, v); });
  }

  double eval(const Velocity& v, bool* clipped = nullptr) const {
    const auto s = grid.stencil(v);
    if (clipped && s.clipped) *clipped = true;
    double out = 0.0;
    for (int k = 0; k < s.count; ++k) out += s.w[k] * values[s.idx[k]];
    return out;
  }

  double integral() const { return grid.cell_volume() * values.sum(); }

  // Grid pairing <f, g> = sum f_i g_i * cell_volume.
  double inner(const GridFunction& other) const {
    return grid.cell_volume() * values.dot(other.values);
  }
};

// Test function with dual representation: an exact closure for molecular
// pairings, a grid sample for the PDE modules. Conversion between the two is
// nearest-node sampling.
class TestFunction {
 public:
  TestFunction() = default;
  TestFunction(std::string name, VelocityFunction fn)
      : name_(std::move(name)), closure_(std::move(fn)) {}
  TestFunction(std::string name, GridFunction values)
      : name_(std::move(name)), gridded_(std::move(values)) {}

  const std::string& name() const { return name_; }
  bool has_closure() const { return static_cast<bool>(closure_); }

  double operator()(const Velocity& v) const {
    if (closure_) return closure_(v);
    return gridded_.eval(v);
  }

  GridFunction on_grid(const VelocityGrid& g) const {
    if (closure_) return GridFunction::sample(g, closure_);
    if (!(gridded_.grid == g))
      throw std::invalid_argument("test function tabulated on another grid");
    return gridded_;
  }

 private:
  std::string name_;
  VelocityFunction closure_;
  GridFunction gridded_;
};

}  // namespace bgl
