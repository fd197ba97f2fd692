#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rectflow/objectives.hpp"
#include "rectflow/sampler.hpp"

namespace rectflow {

enum class ReturnPolicy { Last, BestObjective };

std::string to_string(ReturnPolicy p);
ReturnPolicy return_policy_from_string(const std::string& name);

struct GuidanceConfig {
  /// Guidance scale s >= 0 (0 switches guidance off).
  double scale = 1.0;
  int iterations = 100;
  int windows = 4;
  /// On the l2 change of the guided endpoint per iteration.
  double residual_tolerance = 1e-4;
  bool normalize_gradient = true;
  ReturnPolicy return_policy = ReturnPolicy::BestObjective;
  /// Stop once the residual drops to the tolerance instead of running all
  /// iterations.
  bool stop_on_tolerance = false;
  /// Identity Jacobian across window boundaries. Off, the guidance signal
  /// is not propagated past the last window.
  bool straight_through = true;
  int substeps = 1;
  /// Re-evaluate the objective gradient per window at the endpoint reached
  /// by flowing that window's target through the remaining reference
  /// segments, instead of sharing one endpoint gradient.
  bool per_window_gradient = false;

  void validate() const;
  nlohmann::json to_json() const;
};

struct SolverReport {
  std::string method;
  /// l2 change of the guided endpoint, one entry per iteration.
  std::vector<double> residual_series;
  /// Objective at the guided endpoint after each iteration.
  std::vector<double> objective_series;
  bool converged = false;
  int iterations_used = 0;
  bool divergence_flag = false;
  /// Returned trajectory (per the return policy).
  Trajectory final_trajectory;
  Vector reference_endpoint;
  /// Objective at reference_endpoint.
  double reference_objective = 0.0;
  /// Objective at the returned endpoint.
  double final_objective = 0.0;
  /// ||returned endpoint - reference endpoint||.
  double anchoring_distance = 0.0;
  /// Least-squares slope of log residuals against the iteration index, and
  /// its exponential (the per-iteration contraction factor). NaN when fewer
  /// than two residuals lie above the noise floor.
  double log_residual_slope = 0.0;
  double convergence_rate = 0.0;
  /// 0 means the starting point itself was returned.
  int best_iteration = 0;
  /// Solver settings echoed into the run record.
  nlohmann::json config;

  const Vector& endpoint() const { return final_trajectory.end(); }
  void validate() const;
  nlohmann::json to_json() const;
};

/// g / ||g|| when ||g|| > 1e-12, else the zero vector.
Vector normalize_gradient(const Vector& g);

/// v(z, t) + s grad_z log p(c | z, t).
Vector vanilla_guided_velocity(const VelocityModel& field, const NoiseAwareObjective& objective, const Vector& z,
                               double t, double scale);

/// Euler integration of the guided velocity.
Trajectory guided_ode_sample(const VelocityModel& field, const NoiseAwareObjective& objective, const Vector& z0,
                             int n_steps, double scale);

/// z <- z0 + v(z, 1) + s g(z), started from `start` or, by default, from
/// the unguided piecewise endpoint.
SolverReport unanchored_fixed_point(const VelocityModel& field, const Objective& objective, const Vector& z0,
                                    const GuidanceConfig& config, const std::optional<Vector>& start = std::nullopt);

/// z_hat <- z1 + s J^T g(z_hat) with a single window: z1 and J are those
/// of the one-segment sampler started at z0.
SolverReport anchored_fixed_point_straight(const VelocityModel& field, const Objective& objective, const Vector& z0,
                                           const GuidanceConfig& config);

/// Reference and target trajectories at the window boundaries.
struct PiecewiseState {
  /// Reference starting points z_{t_k}, k = 0..K (index 0 is z0).
  std::vector<Vector> reference;
  /// Reference segment endpoints z^e_{t_k}, k = 1..K stored at k - 1.
  std::vector<Vector> endpoints;
  /// Target states z_hat_{t_k}, k = 0..K.
  std::vector<Vector> target;
  int iteration = 0;

  /// Reference tracked by a fresh sampler run; the target equals it.
  static PiecewiseState initial(const VelocityModel& field, const Vector& z0, const TimeWindows& windows,
                                int substeps);
  Trajectory target_trajectory(const TimeWindows& windows, std::uint64_t field_version) const;
  Trajectory reference_trajectory(const TimeWindows& windows, std::uint64_t field_version) const;
};

/// Moves reference starting points by the change in segment endpoints plus
/// the target's lead over the previous endpoints, window by window. Each new
/// endpoint is recomputed from the freshly updated start of its window.
PiecewiseState reference_update(const PiecewiseState& state, const VelocityModel& field,
                                const TimeWindows& windows, int substeps);

/// The same update with precomputed new endpoints (one per window).
PiecewiseState reference_update(const PiecewiseState& state, const std::vector<Vector>& new_endpoints);

/// Places every target state at its reference endpoint plus s times the
/// endpoint gradient pulled back to the window start. `gradients` holds
/// one shared gradient or one per window.
PiecewiseState target_update(const PiecewiseState& state, const std::vector<Vector>& gradients,
                             const VelocityModel& field, const TimeWindows& windows, const GuidanceConfig& config);

SolverReport anchored_piecewise_solve(const VelocityModel& field, const Objective& objective, const Vector& z0,
                                      const GuidanceConfig& config);

struct NoiseGdConfig {
  double learning_rate = 0.4;
  double momentum = 0.9;
  double l2_coeff = 1.0;
  int iterations = 100;
  int windows = 4;
  int substeps = 1;
  double residual_tolerance = 1e-4;
  ReturnPolicy return_policy = ReturnPolicy::Last;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Heavy-ball ascent on log p(z1(z0)) - (l2 / 2) ||z0 - z0_init||^2 with the
/// gradient backpropagated exactly through the piecewise sampler.
SolverReport noise_gradient_descent(const VelocityModel& field, const Objective& objective, const Vector& z0,
                                    const NoiseGdConfig& config);

struct ProbeRegion {
  Vector center;
  double radius = 1.0;
};

struct ContractionEstimate {
  double l1 = 0.0;
  double l2 = 0.0;
  double s_max = 0.0;
};

/// l1: largest spectral norm of the endpoint Jacobian over the probes; l2:
/// largest gradient difference quotient over probe pairs; s_max = 1/(l1 l2).
/// Probes are drawn uniformly from the ball with a fixed seed. Throws
/// DomainError for fewer than two probes or a zero radius.
ContractionEstimate contraction_estimate(const VelocityModel& field, const Objective& objective,
                                         const ProbeRegion& region, int n_probes, int windows = 1,
                                         std::uint64_t seed = 0);

}  // namespace rectflow
