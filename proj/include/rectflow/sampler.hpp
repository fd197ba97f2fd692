#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "rectflow/flow.hpp"

namespace rectflow {

/// Boundaries 0 = t_0 < t_1 < ... < t_K = 1.
class TimeWindows {
 public:
  /// K equal windows.
  static TimeWindows uniform(int count);
  explicit TimeWindows(std::vector<double> boundaries);

  int count() const noexcept { return static_cast<int>(boundaries_.size()) - 1; }
  double begin(int window) const { return boundaries_.at(static_cast<std::size_t>(window)); }
  double end(int window) const { return boundaries_.at(static_cast<std::size_t>(window) + 1); }
  const std::vector<double>& boundaries() const noexcept { return boundaries_; }

 private:
  std::vector<double> boundaries_;
};

struct TrajectoryState {
  double t = 0.0;
  Vector z;
  /// True for t = 0, t = 1 and every window boundary.
  bool boundary = false;
};

struct Trajectory {
  std::vector<TrajectoryState> states;
  /// Extrapolated endpoint z^e of every window, in window order.
  std::vector<Vector> segment_endpoints;
  std::uint64_t field_version = 0;

  const Vector& start() const { return states.front().z; }
  const Vector& end() const { return states.back().z; }
  /// Throws DomainError when times are not strictly increasing from 0 to 1
  /// or a state is non-finite.
  void validate() const;
};

/// z_{t + h} = z_t + h v(z_t, t) with h = 1 / n_steps.
Trajectory euler_sample(const VelocityModel& field, const Vector& z0, int n_steps);

/// One straight segment per window: the velocity at the window entry is held
/// across the window (substeps = 1) or Euler-refined. The segment endpoint
/// extrapolates the last substep's velocity to the window end.
Trajectory piecewise_sample(const VelocityModel& field, const Vector& z0, const TimeWindows& windows,
                            int substeps_per_window = 1);

/// End of a single segment started at `start` over [t_begin, t_end].
Vector advance_segment(const VelocityModel& field, const Vector& start, double t_begin, double t_end,
                       int substeps);

/// (d end / d start)^T u for one segment, by reverse sweep through the
/// Euler substeps.
Vector segment_vjp(const VelocityModel& field, const Vector& start, double t_begin, double t_end, int substeps,
                   const Vector& cotangent);

/// Mean over interior states of the distance to the chord z_0 -> z_1,
/// divided by the chord length. Zero for a degenerate chord.
double straightness_deviation(const Trajectory& traj);

/// u^T (d z_1 / d z_0) through the piecewise sampler started at z0.
/// Without straight-through the whole sampler is one tape; with it each
/// window is swept separately and the boundary Jacobian is the identity.
Vector endpoint_vjp(const VelocityModel& field, const Vector& z0, const TimeWindows& windows,
                    const Vector& cotangent, bool straight_through, int substeps_per_window = 1);

/// Full Jacobian d z_1 / d z_0 of the piecewise sampler, assembled from
/// one VJP per output coordinate.
Matrix endpoint_jacobian(const VelocityModel& field, const Vector& z0, const TimeWindows& windows,
                         int substeps_per_window = 1);

/// CSV schema `trajectory` v1: t, z0..z{d-1}, segment_flag.
void write_trajectory_csv(std::ostream& out, const Trajectory& traj);

}  // namespace rectflow
