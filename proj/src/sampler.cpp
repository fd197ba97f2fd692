#include "rectflow/sampler.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "rectflow/csv.hpp"
#include "rectflow/error.hpp"

namespace rectflow {

TimeWindows TimeWindows::uniform(int count) {
  if (count < 1) throw DomainError(fmt::format("window count must be positive, got {}", count));
  std::vector<double> b(static_cast<std::size_t>(count) + 1);
  for (int k = 0; k <= count; ++k) b[static_cast<std::size_t>(k)] = static_cast<double>(k) / count;
  b.back() = 1.0;
  return TimeWindows(std::move(b));
}

TimeWindows::TimeWindows(std::vector<double> boundaries) : boundaries_(std::move(boundaries)) {
  if (boundaries_.size() < 2) throw DomainError("time windows need at least two boundaries");
  if (boundaries_.front() != 0.0 || boundaries_.back() != 1.0) {
    throw DomainError("time windows must start at 0 and end at 1");
  }
  for (std::size_t i = 1; i < boundaries_.size(); ++i) {
    if (!(boundaries_[i] > boundaries_[i - 1])) throw DomainError("time window boundaries must strictly increase");
  }
}

void Trajectory::validate() const {
  if (states.size() < 2) throw DomainError("trajectory needs at least two states");
  if (states.front().t != 0.0 || states.back().t != 1.0) throw DomainError("trajectory must span [0, 1]");
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (!states[i].z.allFinite()) throw DomainError(fmt::format("trajectory state {} is non-finite", i));
    if (i > 0 && !(states[i].t > states[i - 1].t)) throw DomainError("trajectory times must strictly increase");
  }
}

namespace {

void require_dim(const VelocityModel& field, const Vector& z) {
  if (z.size() != field.dim()) {
    throw DimensionError(fmt::format("state has dimension {}, field expects {}", z.size(), field.dim()));
  }
}

double substep_time(double t_begin, double t_end, int j, int substeps) {
  return j == substeps ? t_end : t_begin + (t_end - t_begin) * static_cast<double>(j) / substeps;
}

void check_finite(const Vector& z, double t) {
  if (!z.allFinite()) throw NonFiniteError(fmt::format("sampler state became non-finite at t = {}", t));
}

// Appends the substep states after `start` (the end state is flagged as a
// boundary) and returns the end.
Vector run_segment(const VelocityModel& field, Vector z, double t_begin, double t_end, int substeps,
                   std::vector<TrajectoryState>* out) {
  if (substeps < 1) throw DomainError("a segment needs at least one substep");
  for (int j = 0; j < substeps; ++j) {
    const double t = substep_time(t_begin, t_end, j, substeps);
    const double t_next = substep_time(t_begin, t_end, j + 1, substeps);
    z += (t_next - t) * field.evaluate(z, t);
    check_finite(z, t_next);
    if (out) out->push_back({t_next, z, j + 1 == substeps});
  }
  return z;
}

// Records the segment on `tape` starting from node `z`.
ad::Var record_segment(ad::Tape& tape, const VelocityModel& field, ad::Var z, double t_begin, double t_end,
                       int substeps) {
  for (int j = 0; j < substeps; ++j) {
    const double t = substep_time(t_begin, t_end, j, substeps);
    const double t_next = substep_time(t_begin, t_end, j + 1, substeps);
    z = z + (t_next - t) * field.build(tape, z, Vector::Constant(1, t));
  }
  return z;
}

Matrix as_row(const Vector& v) { return v.transpose(); }

}  // namespace

Trajectory euler_sample(const VelocityModel& field, const Vector& z0, int n_steps) {
  require_dim(field, z0);
  if (n_steps < 1) throw DomainError(fmt::format("Euler sampling needs at least one step, got {}", n_steps));
  Trajectory traj;
  traj.field_version = field.version();
  traj.states.reserve(static_cast<std::size_t>(n_steps) + 1);
  traj.states.push_back({0.0, z0, true});
  const Vector end = run_segment(field, z0, 0.0, 1.0, n_steps, &traj.states);
  traj.segment_endpoints.push_back(end);
  return traj;
}

Trajectory piecewise_sample(const VelocityModel& field, const Vector& z0, const TimeWindows& windows,
                            int substeps_per_window) {
  require_dim(field, z0);
  if (substeps_per_window < 1) throw DomainError("substeps per window must be positive");
  Trajectory traj;
  traj.field_version = field.version();
  traj.states.reserve(static_cast<std::size_t>(windows.count() * substeps_per_window) + 1);
  traj.states.push_back({0.0, z0, true});
  Vector z = z0;
  for (int k = 0; k < windows.count(); ++k) {
    z = run_segment(field, z, windows.begin(k), windows.end(k), substeps_per_window, &traj.states);
    traj.segment_endpoints.push_back(z);
  }
  return traj;
}

Vector advance_segment(const VelocityModel& field, const Vector& start, double t_begin, double t_end,
                       int substeps) {
  require_dim(field, start);
  return run_segment(field, start, t_begin, t_end, substeps, nullptr);
}

Vector segment_vjp(const VelocityModel& field, const Vector& start, double t_begin, double t_end, int substeps,
                   const Vector& cotangent) {
  require_dim(field, start);
  if (cotangent.size() != start.size()) throw DimensionError("segment VJP: cotangent dimension mismatch");
  if (substeps < 1) throw DomainError("a segment needs at least one substep");
  ad::Tape tape;
  ad::Var z0 = tape.input(as_row(start));
  ad::Var end = record_segment(tape, field, z0, t_begin, t_end, substeps);
  return tape.backward(end, as_row(cotangent)).wrt(z0).row(0).transpose();
}

double straightness_deviation(const Trajectory& traj) {
  if (traj.states.size() < 3) return 0.0;
  const Vector& a = traj.start();
  const Vector chord = traj.end() - a;
  const double length2 = chord.squaredNorm();
  if (!(length2 > 0.0)) return 0.0;
  double total = 0.0;
  for (std::size_t i = 1; i + 1 < traj.states.size(); ++i) {
    const Vector p = traj.states[i].z - a;
    const double lambda = std::clamp(p.dot(chord) / length2, 0.0, 1.0);
    total += (p - lambda * chord).norm();
  }
  return total / static_cast<double>(traj.states.size() - 2) / std::sqrt(length2);
}

Vector endpoint_vjp(const VelocityModel& field, const Vector& z0, const TimeWindows& windows,
                    const Vector& cotangent, bool straight_through, int substeps_per_window) {
  require_dim(field, z0);
  if (cotangent.size() != z0.size()) throw DimensionError("endpoint VJP: cotangent dimension mismatch");
  if (substeps_per_window < 1) throw DomainError("substeps per window must be positive");

  if (!straight_through) {
    ad::Tape tape;
    ad::Var start = tape.input(as_row(z0));
    ad::Var z = start;
    for (int k = 0; k < windows.count(); ++k) {
      z = record_segment(tape, field, z, windows.begin(k), windows.end(k), substeps_per_window);
    }
    if (!z.value().allFinite()) throw NonFiniteError("endpoint VJP: sampler became non-finite");
    return tape.backward(z, as_row(cotangent)).wrt(start).row(0).transpose();
  }

  std::vector<Vector> starts{z0};
  for (int k = 0; k + 1 < windows.count(); ++k) {
    starts.push_back(advance_segment(field, starts.back(), windows.begin(k), windows.end(k), substeps_per_window));
  }
  Vector u = cotangent;
  for (int k = windows.count() - 1; k >= 0; --k) {
    u = segment_vjp(field, starts[static_cast<std::size_t>(k)], windows.begin(k), windows.end(k),
                    substeps_per_window, u);
  }
  return u;
}

Matrix endpoint_jacobian(const VelocityModel& field, const Vector& z0, const TimeWindows& windows,
                         int substeps_per_window) {
  const Eigen::Index d = z0.size();
  Matrix j(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    j.row(i) = endpoint_vjp(field, z0, windows, Vector::Unit(d, i), false, substeps_per_window).transpose();
  }
  return j;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj) {
  if (traj.states.empty()) throw DomainError("cannot write an empty trajectory");
  std::vector<std::string> cols{"t"};
  const Eigen::Index d = traj.start().size();
  for (Eigen::Index i = 0; i < d; ++i) cols.push_back(fmt::format("z{}", i));
  cols.emplace_back("segment_flag");
  write_csv_preamble(out, "trajectory", cols);
  for (const auto& s : traj.states) {
    out << format_double(s.t);
    for (Eigen::Index i = 0; i < d; ++i) out << ',' << format_double(s.z(i));
    out << ',' << (s.boundary ? 1 : 0) << '\n';
  }
}

}  // namespace rectflow
