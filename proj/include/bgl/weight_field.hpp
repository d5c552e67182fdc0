// Time-dependent test/weight function g(t, v) on a time grid, linear in t
// between knots. Carries the declared envelope parameters of the bounded
// class it must live in: |g(t,v)| <= alpha + (beta0/8) |v|^2.

#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bgl/velocity_grid.hpp"

namespace bgl {

class WeightField {
 public:
  WeightField(std::vector<double> times, std::vector<TestFunction> slices,
              double alpha, double beta0)
      : times_(std::move(times)),
        slices_(std::move(slices)),
        alpha_(alpha),
        beta0_(beta0) {
    if (times_.size() < 2 || times_.size() != slices_.size())
      throw std::invalid_argument("weight field needs matching time knots");
    for (size_t k = 1; k < times_.size(); ++k)
      if (times_[k] <= times_[k - 1])
        throw std::invalid_argument("weight field times must increase");
  }

  // g(t, v) = a(t) psi(v) on a uniform time grid over [0, T]
  static WeightField separable(const std::string& name, double t_end,
                               int knots, const VelocityFunction& psi,
                               const std::function<double(double)>& amplitude,
                               double alpha, double beta0) {
    std::vector<double> times;
    std::vector<TestFunction> slices;
    for (int k = 0; k < knots; ++k) {
      const double t = t_end * k / (knots - 1);
      times.push_back(t);
      const double a = amplitude(t);
      slices.emplace_back(name, [psi, a](const Velocity& v) {
        return a * psi(v);
      });
    }
    return WeightField(std::move(times), std::move(slices), alpha, beta0);
  }

  static WeightField constant(const std::string& name, double t_end,
                              const VelocityFunction& psi, double alpha,
                              double beta0) {
    return separable(name, t_end, 2, psi, [](double) { return 1.0; }, alpha,
                     beta0);
  }

  double t_begin() const { return times_.front(); }
  double t_end() const { return times_.back(); }
  const std::vector<double>& times() const { return times_; }
  int knots() const { return static_cast<int>(times_.size()); }
  const TestFunction& slice(int k) const { return slices_[k]; }
  double alpha() const { return alpha_; }
  double beta0() const { return beta0_; }

  double operator()(double t, const Velocity& v) const {
    if (t <= times_.front()) return slices_.front()(v);
    if (t >= times_.back()) return slices_.back()(v);
    const auto it =
        std::upper_bound(times_.begin(), times_.end(), t) - times_.begin();
    const int k = static_cast<int>(it) - 1;
    const double w = (t - times_[k]) / (times_[k + 1] - times_[k]);
    return (1.0 - w) * slices_[k](v) + w * slices_[k + 1](v);
  }

  GridFunction slice_on_grid(int k, const VelocityGrid& grid) const {
    return slices_[k].on_grid(grid);
  }

  // envelope of the bounded class: sup |g| <= alpha + (beta0/8)|v|^2,
  // checked on the grid nodes of every time slice
  void check_envelope(const VelocityGrid& grid) const {
    for (int k = 0; k < knots(); ++k) {
      const GridFunction s = slice_on_grid(k, grid);
      for (int i = 0; i < grid.size(); ++i) {
        const double env =
            alpha_ + beta0_ / 8.0 * grid.node(i).squaredNorm() + 1e-12;
        if (std::abs(s.values[i]) > env)
          throw std::invalid_argument(
              "weight field exceeds its declared envelope");
      }
    }
  }

 private:
  std::vector<double> times_;
  std::vector<TestFunction> slices_;
  double alpha_, beta0_;
};

}  // namespace bgl
