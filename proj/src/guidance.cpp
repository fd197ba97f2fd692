#include "rectflow/guidance.hpp"

#include <cmath>
#include <limits>
#include <random>

#include <fmt/format.h>

#include "rectflow/error.hpp"

namespace rectflow {

std::string to_string(ReturnPolicy p) { return p == ReturnPolicy::Last ? "last" : "best-objective"; }

ReturnPolicy return_policy_from_string(const std::string& name) {
  if (name == "last") return ReturnPolicy::Last;
  if (name == "best-objective") return ReturnPolicy::BestObjective;
  throw ConfigError(fmt::format("unknown return policy '{}' (expected last or best-objective)", name));
}

void GuidanceConfig::validate() const {
  if (!(scale >= 0.0) || !std::isfinite(scale)) throw ConfigError(fmt::format("guidance scale {} must be >= 0", scale));
  if (iterations < 1) throw ConfigError("guidance iterations must be >= 1");
  if (windows < 1) throw ConfigError("guidance windows must be >= 1");
  if (!(residual_tolerance > 0.0)) throw ConfigError("residual tolerance must be positive");
  if (substeps < 1) throw ConfigError("substeps must be >= 1");
}

nlohmann::json GuidanceConfig::to_json() const {
  return {{"scale", scale},
          {"iterations", iterations},
          {"windows", windows},
          {"residual_tolerance", residual_tolerance},
          {"normalize_gradient", normalize_gradient},
          {"return_policy", to_string(return_policy)},
          {"stop_on_tolerance", stop_on_tolerance},
          {"straight_through", straight_through},
          {"substeps", substeps},
          {"per_window_gradient", per_window_gradient}};
}

void NoiseGdConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("noise-gd learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("noise-gd momentum must lie in [0, 1)");
  if (l2_coeff < 0.0) throw ConfigError("noise-gd l2 coefficient must be non-negative");
  if (iterations < 1) throw ConfigError("noise-gd iterations must be >= 1");
  if (windows < 1 || substeps < 1) throw ConfigError("noise-gd windows and substeps must be >= 1");
  if (!(residual_tolerance > 0.0)) throw ConfigError("residual tolerance must be positive");
}

nlohmann::json NoiseGdConfig::to_json() const {
  return {{"learning_rate", learning_rate}, {"momentum", momentum},   {"l2_coeff", l2_coeff},
          {"iterations", iterations},       {"windows", windows},     {"substeps", substeps},
          {"residual_tolerance", residual_tolerance}, {"return_policy", to_string(return_policy)}};
}

void SolverReport::validate() const {
  const auto n = static_cast<std::size_t>(iterations_used);
  if (residual_series.size() != n || objective_series.size() != n) {
    throw DomainError("solver report series lengths differ from iterations_used");
  }
  if (converged && (residual_series.empty() || !(residual_series.back() <= config.value("residual_tolerance", 0.0)))) {
    throw DomainError("solver report claims convergence above tolerance");
  }
  final_trajectory.validate();
}

namespace {

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

nlohmann::json finite_or_null(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(); }

}  // namespace

nlohmann::json SolverReport::to_json() const {
  nlohmann::json states = nlohmann::json::array();
  for (const auto& s : final_trajectory.states) states.push_back({{"t", s.t}, {"z", to_std(s.z)}});
  return {{"method", method},
          {"config", config},
          {"iterations_used", iterations_used},
          {"converged", converged},
          {"divergence_flag", divergence_flag},
          {"best_iteration", best_iteration},
          {"final_objective", final_objective},
          {"reference_objective", reference_objective},
          {"anchoring_distance", anchoring_distance},
          {"log_residual_slope", finite_or_null(log_residual_slope)},
          {"convergence_rate", finite_or_null(convergence_rate)},
          {"endpoint", to_std(endpoint())},
          {"reference_endpoint", to_std(reference_endpoint)},
          {"residual_series", residual_series},
          {"objective_series", objective_series},
          {"final_trajectory", states}};
}

Vector normalize_gradient(const Vector& g) {
  const double n = g.norm();
  if (n > 1e-12) return g / n;
  return Vector::Zero(g.size());
}

Vector vanilla_guided_velocity(const VelocityModel& field, const NoiseAwareObjective& objective, const Vector& z,
                               double t, double scale) {
  Vector v = field.evaluate(z, t);
  if (scale == 0.0) return v;
  const Vector g = objective.gradient(z, t);
  if (!g.allFinite()) throw NonFiniteError(fmt::format("guidance gradient is non-finite at t = {}", t));
  return v + scale * g;
}

Trajectory guided_ode_sample(const VelocityModel& field, const NoiseAwareObjective& objective, const Vector& z0,
                             int n_steps, double scale) {
  if (z0.size() != field.dim()) throw DimensionError("guided sampling: state dimension mismatch");
  if (n_steps < 1) throw DomainError("guided sampling needs at least one step");
  Trajectory traj;
  traj.field_version = field.version();
  traj.states.push_back({0.0, z0, true});
  Vector z = z0;
  for (int k = 0; k < n_steps; ++k) {
    const double t = static_cast<double>(k) / n_steps;
    const double t_next = k + 1 == n_steps ? 1.0 : static_cast<double>(k + 1) / n_steps;
    z += (t_next - t) * vanilla_guided_velocity(field, objective, z, t, scale);
    if (!z.allFinite()) throw NonFiniteError(fmt::format("guided sampling became non-finite at t = {}", t_next));
    traj.states.push_back({t_next, z, k + 1 == n_steps});
  }
  traj.segment_endpoints.push_back(z);
  return traj;
}

namespace {

constexpr int kDivergenceStreak = 10;
constexpr double kResidualFloor = 1e-12;

Trajectory endpoint_trajectory(const Vector& z0, const Vector& z1, std::uint64_t version) {
  Trajectory t;
  t.field_version = version;
  t.states = {{0.0, z0, true}, {1.0, z1, true}};
  t.segment_endpoints = {z1};
  return t;
}

// Bookkeeping shared by every solver: residuals, divergence, stopping and
// the return policy.
class IterationLog {
 public:
  IterationLog(std::string method, ReturnPolicy policy, double tolerance, bool stop_on_tolerance)
      : policy_(policy), tolerance_(tolerance), stop_on_tolerance_(stop_on_tolerance) {
    report_.method = std::move(method);
  }

  void set_reference(const Vector& endpoint, double objective) {
    report_.reference_endpoint = endpoint;
    report_.reference_objective = objective;
  }

  // Iteration 0: the point the iteration starts from.
  void start(Trajectory traj, double objective) {
    previous_ = traj.end();
    best_ = traj;
    last_ = std::move(traj);
    best_objective_ = objective;
  }

  // Returns false when the solver should stop.
  bool push(Trajectory traj, double objective) {
    const Vector& z = traj.end();
    if (!z.allFinite() || !std::isfinite(objective)) {
      report_.divergence_flag = true;
      return false;
    }
    const double residual = (z - previous_).norm();
    if (!report_.residual_series.empty() && residual > report_.residual_series.back()) {
      ++streak_;
    } else {
      streak_ = 0;
    }
    report_.residual_series.push_back(residual);
    report_.objective_series.push_back(objective);
    ++report_.iterations_used;
    previous_ = z;
    if (objective > best_objective_) {
      best_objective_ = objective;
      best_ = traj;
      report_.best_iteration = report_.iterations_used;
    }
    last_ = std::move(traj);
    last_objective_ = objective;
    if (streak_ >= kDivergenceStreak) {
      report_.divergence_flag = true;
      return false;
    }
    return !(stop_on_tolerance_ && residual <= tolerance_);
  }

  void diverged() { report_.divergence_flag = true; }

  SolverReport finish(nlohmann::json config) {
    SolverReport r = std::move(report_);
    r.config = std::move(config);
    if (policy_ == ReturnPolicy::BestObjective) {
      r.final_trajectory = std::move(best_);
      r.final_objective = best_objective_;
    } else {
      r.final_trajectory = std::move(last_);
      r.final_objective = r.iterations_used > 0 ? last_objective_ : best_objective_;
      r.best_iteration = r.iterations_used;
    }
    r.converged = !r.divergence_flag && !r.residual_series.empty() && r.residual_series.back() <= tolerance_;
    r.anchoring_distance = (r.final_trajectory.end() - r.reference_endpoint).norm();
    fit_rate(r);
    return r;
  }

 private:
  static void fit_rate(SolverReport& r) {
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < r.residual_series.size(); ++i) {
      if (r.residual_series[i] > kResidualFloor) {
        xs.push_back(static_cast<double>(i));
        ys.push_back(std::log(r.residual_series[i]));
      }
    }
    if (xs.size() < 2) {
      r.log_residual_slope = r.convergence_rate = std::numeric_limits<double>::quiet_NaN();
      return;
    }
    const double n = static_cast<double>(xs.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i] / n, my += ys[i] / n;
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      sxy += (xs[i] - mx) * (ys[i] - my);
      sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    r.log_residual_slope = sxy / sxx;
    r.convergence_rate = std::exp(r.log_residual_slope);
  }

  SolverReport report_;
  ReturnPolicy policy_;
  double tolerance_;
  bool stop_on_tolerance_;
  Vector previous_;
  Trajectory best_, last_;
  double best_objective_ = -std::numeric_limits<double>::infinity();
  double last_objective_ = 0.0;
  int streak_ = 0;
};

Vector guidance_direction(const Vector& g, bool normalize) { return normalize ? normalize_gradient(g) : g; }

void require_dims(const VelocityModel& field, const Objective& objective, const Vector& z0) {
  if (z0.size() != field.dim() || objective.dim() != field.dim()) {
    throw DimensionError(fmt::format("field dimension {}, objective dimension {}, z0 dimension {}", field.dim(),
                                     objective.dim(), z0.size()));
  }
}

}  // namespace

SolverReport unanchored_fixed_point(const VelocityModel& field, const Objective& objective, const Vector& z0,
                                    const GuidanceConfig& config, const std::optional<Vector>& start) {
  config.validate();
  require_dims(field, objective, z0);
  const TimeWindows windows = TimeWindows::uniform(config.windows);
  const Vector reference = piecewise_sample(field, z0, windows, config.substeps).end();
  IterationLog log("unanchored", config.return_policy, config.residual_tolerance, config.stop_on_tolerance);
  log.set_reference(reference, objective.value(reference));

  Vector z = start.value_or(reference);
  if (z.size() != z0.size()) throw DimensionError("unanchored start has the wrong dimension");
  auto [value, grad] = objective.value_and_gradient(z);
  log.start(endpoint_trajectory(z0, z, field.version()), value);
  for (int i = 0; i < config.iterations; ++i) {
    try {
      z = z0 + field.evaluate(z, 1.0) + config.scale * guidance_direction(grad, config.normalize_gradient);
      if (!z.allFinite()) {
        log.diverged();
        break;
      }
      std::tie(value, grad) = objective.value_and_gradient(z);
    } catch (const NonFiniteError&) {
      log.diverged();
      break;
    }
    if (!log.push(endpoint_trajectory(z0, z, field.version()), value)) break;
  }
  return log.finish(config.to_json());
}

SolverReport anchored_fixed_point_straight(const VelocityModel& field, const Objective& objective, const Vector& z0,
                                           const GuidanceConfig& config) {
  config.validate();
  require_dims(field, objective, z0);
  const Vector z1 = advance_segment(field, z0, 0.0, 1.0, config.substeps);
  IterationLog log("straight-anchored", config.return_policy, config.residual_tolerance, config.stop_on_tolerance);
  auto [value, grad] = objective.value_and_gradient(z1);
  log.set_reference(z1, value);
  log.start(endpoint_trajectory(z0, z1, field.version()), value);

  Vector z_hat = z1;
  for (int i = 0; i < config.iterations; ++i) {
    try {
      const Vector pulled = segment_vjp(field, z0, 0.0, 1.0, config.substeps,
                                        guidance_direction(grad, config.normalize_gradient));
      z_hat = z1 + config.scale * pulled;
      if (!z_hat.allFinite()) {
        log.diverged();
        break;
      }
      std::tie(value, grad) = objective.value_and_gradient(z_hat);
    } catch (const NonFiniteError&) {
      log.diverged();
      break;
    }
    Trajectory traj = endpoint_trajectory(z0, z_hat, field.version());
    traj.segment_endpoints = {z1};
    if (!log.push(std::move(traj), value)) break;
  }
  return log.finish(config.to_json());
}

// ---------------------------------------------------------------------------
// Piecewise anchored solver

PiecewiseState PiecewiseState::initial(const VelocityModel& field, const Vector& z0, const TimeWindows& windows,
                                       int substeps) {
  PiecewiseState s;
  s.reference.push_back(z0);
  for (int k = 0; k < windows.count(); ++k) {
    s.endpoints.push_back(advance_segment(field, s.reference.back(), windows.begin(k), windows.end(k), substeps));
    s.reference.push_back(s.endpoints.back());
  }
  s.target = s.reference;
  return s;
}

namespace {

Trajectory boundary_trajectory(const std::vector<Vector>& states, const std::vector<Vector>& endpoints,
                               const TimeWindows& windows, std::uint64_t version) {
  Trajectory t;
  t.field_version = version;
  const auto& b = windows.boundaries();
  for (std::size_t k = 0; k < states.size(); ++k) t.states.push_back({b.at(k), states[k], true});
  t.segment_endpoints = endpoints;
  return t;
}

void require_state_shape(const PiecewiseState& s, std::size_t windows) {
  if (s.reference.size() != windows + 1 || s.target.size() != windows + 1 || s.endpoints.size() != windows) {
    throw DimensionError("piecewise state does not match the window count");
  }
}

Vector moved_start(const Vector& start, const Vector& old_endpoint, const Vector& new_endpoint,
                   const Vector& target) {
  if (start.size() != old_endpoint.size() || start.size() != new_endpoint.size() || start.size() != target.size()) {
    throw DimensionError("reference update: dimension mismatch");
  }
  return start + (new_endpoint - old_endpoint) + (target - old_endpoint);
}

}  // namespace

Trajectory PiecewiseState::target_trajectory(const TimeWindows& windows, std::uint64_t field_version) const {
  return boundary_trajectory(target, endpoints, windows, field_version);
}

Trajectory PiecewiseState::reference_trajectory(const TimeWindows& windows, std::uint64_t field_version) const {
  return boundary_trajectory(reference, endpoints, windows, field_version);
}

PiecewiseState reference_update(const PiecewiseState& state, const std::vector<Vector>& new_endpoints) {
  require_state_shape(state, new_endpoints.size());
  PiecewiseState next = state;
  next.iteration = state.iteration + 1;
  for (std::size_t k = 1; k < state.reference.size(); ++k) {
    next.endpoints[k - 1] = new_endpoints[k - 1];
    next.reference[k] = moved_start(state.reference[k], state.endpoints[k - 1], new_endpoints[k - 1],
                                    state.target[k]);
  }
  return next;
}

PiecewiseState reference_update(const PiecewiseState& state, const VelocityModel& field,
                                const TimeWindows& windows, int substeps) {
  const auto k_count = static_cast<std::size_t>(windows.count());
  require_state_shape(state, k_count);
  PiecewiseState next = state;
  next.iteration = state.iteration + 1;
  for (std::size_t k = 1; k <= k_count; ++k) {
    const int w = static_cast<int>(k) - 1;
    const Vector e = advance_segment(field, next.reference[k - 1], windows.begin(w), windows.end(w), substeps);
    next.endpoints[k - 1] = e;
    next.reference[k] = moved_start(state.reference[k], state.endpoints[k - 1], e, state.target[k]);
  }
  return next;
}

PiecewiseState target_update(const PiecewiseState& state, const std::vector<Vector>& gradients,
                             const VelocityModel& field, const TimeWindows& windows, const GuidanceConfig& config) {
  const int K = windows.count();
  require_state_shape(state, static_cast<std::size_t>(K));
  if (gradients.size() != 1 && gradients.size() != static_cast<std::size_t>(K)) {
    throw DimensionError("target update needs one gradient or one per window");
  }
  const Eigen::Index d = state.reference.front().size();
  for (const auto& g : gradients) {
    if (g.size() != d) throw DimensionError("target update: gradient dimension mismatch");
  }

  auto pull_back = [&](int k, const Vector& u) {
    return segment_vjp(field, state.reference[static_cast<std::size_t>(k)], windows.begin(k), windows.end(k),
                       config.substeps, u);
  };

  // pulled[k] is the endpoint gradient carried back to the start of window k.
  std::vector<Vector> pulled(static_cast<std::size_t>(K), Vector::Zero(d));
  if (gradients.size() == 1) {
    Vector w = gradients.front();
    for (int k = K - 1; k >= 0; --k) {
      w = pull_back(k, w);
      pulled[static_cast<std::size_t>(k)] = w;
      if (!config.straight_through) break;
    }
  } else {
    for (int k = K - 1; k >= 0; --k) {
      if (!config.straight_through && k != K - 1) break;
      Vector w = gradients[static_cast<std::size_t>(k)];
      for (int j = K - 1; j >= k; --j) w = pull_back(j, w);
      pulled[static_cast<std::size_t>(k)] = w;
    }
  }

  PiecewiseState next = state;
  next.target.front() = state.reference.front();
  for (int k = 0; k < K; ++k) {
    const auto i = static_cast<std::size_t>(k);
    next.target[i + 1] = state.endpoints[i] + config.scale * pulled[i];
  }
  return next;
}

SolverReport anchored_piecewise_solve(const VelocityModel& field, const Objective& objective, const Vector& z0,
                                      const GuidanceConfig& config) {
  config.validate();
  require_dims(field, objective, z0);
  const TimeWindows windows = TimeWindows::uniform(config.windows);
  const int K = windows.count();
  PiecewiseState state = PiecewiseState::initial(field, z0, windows, config.substeps);

  IterationLog log("anchored", config.return_policy, config.residual_tolerance, config.stop_on_tolerance);
  auto [value, grad] = objective.value_and_gradient(state.target.back());
  log.set_reference(state.reference.back(), value);
  log.start(state.target_trajectory(windows, field.version()), value);

  for (int i = 0; i < config.iterations; ++i) {
    try {
      std::vector<Vector> grads;
      if (config.per_window_gradient) {
        for (int k = 1; k <= K; ++k) {
          Vector e = state.target[static_cast<std::size_t>(k)];
          for (int j = k; j < K; ++j) e = advance_segment(field, e, windows.begin(j), windows.end(j), config.substeps);
          grads.push_back(guidance_direction(k == K ? grad : objective.gradient(e), config.normalize_gradient));
        }
      } else {
        grads.push_back(guidance_direction(grad, config.normalize_gradient));
      }
      PiecewiseState next = reference_update(state, field, windows, config.substeps);
      state = target_update(next, grads, field, windows, config);
      if (!state.target.back().allFinite()) {
        log.diverged();
        break;
      }
      std::tie(value, grad) = objective.value_and_gradient(state.target.back());
    } catch (const NonFiniteError&) {
      log.diverged();
      break;
    }
    if (!log.push(state.target_trajectory(windows, field.version()), value)) break;
  }
  return log.finish(config.to_json());
}

// ---------------------------------------------------------------------------

SolverReport noise_gradient_descent(const VelocityModel& field, const Objective& objective, const Vector& z0,
                                    const NoiseGdConfig& config) {
  config.validate();
  require_dims(field, objective, z0);
  const TimeWindows windows = TimeWindows::uniform(config.windows);
  IterationLog log("noise-gd", config.return_policy, config.residual_tolerance, false);

  Trajectory traj = piecewise_sample(field, z0, windows, config.substeps);
  auto [value, grad] = objective.value_and_gradient(traj.end());
  log.set_reference(traj.end(), value);
  log.start(traj, value);

  Vector x = z0;
  Vector velocity = Vector::Zero(z0.size());
  for (int i = 0; i < config.iterations; ++i) {
    try {
      const Vector ascent = endpoint_vjp(field, x, windows, grad, false, config.substeps) -
                            config.l2_coeff * (x - z0);
      velocity = config.momentum * velocity + ascent;
      x += config.learning_rate * velocity;
      if (!x.allFinite()) {
        log.diverged();
        break;
      }
      traj = piecewise_sample(field, x, windows, config.substeps);
      std::tie(value, grad) = objective.value_and_gradient(traj.end());
    } catch (const NonFiniteError&) {
      log.diverged();
      break;
    }
    if (!log.push(traj, value)) break;
  }
  return log.finish(config.to_json());
}

ContractionEstimate contraction_estimate(const VelocityModel& field, const Objective& objective,
                                         const ProbeRegion& region, int n_probes, int windows, std::uint64_t seed) {
  if (n_probes < 2) throw DomainError("contraction estimate needs at least two probes");
  if (!(region.radius > 0.0)) throw DomainError("contraction estimate: degenerate probe region (zero radius)");
  if (region.center.size() != field.dim() || objective.dim() != field.dim()) {
    throw DimensionError("contraction estimate: dimension mismatch");
  }
  const Eigen::Index d = field.dim();
  const TimeWindows tw = TimeWindows::uniform(windows);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;

  std::vector<Vector> probes;
  for (int p = 0; p < n_probes; ++p) {
    Vector dir(d);
    for (Eigen::Index i = 0; i < d; ++i) dir(i) = normal(rng);
    const double r = region.radius * std::pow(unit(rng), 1.0 / static_cast<double>(d));
    probes.push_back(region.center + r * dir / dir.norm());
  }

  ContractionEstimate est;
  std::vector<Vector> grads;
  for (const auto& p : probes) {
    const Matrix j = endpoint_jacobian(field, p, tw);
    est.l1 = std::max(est.l1, Eigen::JacobiSVD<Matrix>(j).singularValues()(0));
    grads.push_back(objective.gradient(p));
  }
  bool any_pair = false;
  for (std::size_t a = 0; a < probes.size(); ++a) {
    for (std::size_t b = a + 1; b < probes.size(); ++b) {
      const double dist = (probes[a] - probes[b]).norm();
      if (dist <= 1e-12) continue;
      any_pair = true;
      est.l2 = std::max(est.l2, (grads[a] - grads[b]).norm() / dist);
    }
  }
  if (!any_pair) throw DomainError("contraction estimate: degenerate probe region (all probes identical)");
  const double product = est.l1 * est.l2;
  est.s_max = product > 0.0 ? 1.0 / product : std::numeric_limits<double>::infinity();
  return est;
}

}  // namespace rectflow
