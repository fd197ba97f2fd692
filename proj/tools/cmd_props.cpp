#include <cmath>
#include <iostream>
#include <sstream>

#include <fmt/format.h>

#include "commands.hpp"
#include "rectflow/error.hpp"

namespace rectflow::cli {

namespace {

const std::vector<KeySpec> kPropsSchema = {
    {"run.seed", "0"},
    {"run.out", ""},
    {"props.divergence_scales", "0.01,0.1,0.5,1.0"},
    {"props.lipschitz", "2.0"},
    {"props.divergence_iterations", "20"},
    {"props.contraction_scales", "0.1,0.25,0.5,0.9"},
    {"props.contraction_iterations", "60"},
    {"props.mean", "1,1"},
    {"props.probes", "16"},
};

std::vector<double> grid(const RunConfig& config, const std::string& key) {
  if (config.get(key).empty()) throw ConfigError(fmt::format("{} is empty", key));
  auto values = config.get_doubles(key);
  if (values.empty()) throw ConfigError(fmt::format("{} is empty", key));
  for (double s : values) {
    if (!(s >= 0.0)) throw ConfigError(fmt::format("{} entries must be >= 0", key));
  }
  return values;
}

std::string num(double x) {
  if (std::isinf(x)) return "inf";
  return std::isfinite(x) ? format_double(x) : "nan";
}

}  // namespace

int cmd_props(const CommonOptions& opts) {
  const RunConfig config = load_config(opts, kPropsSchema, "props");
  persist_config(config);
  const auto dir = output_dir(config);
  const auto div_scales = grid(config, "props.divergence_scales");
  const auto con_scales = grid(config, "props.contraction_scales");
  const double lipschitz = config.get_double("props.lipschitz");
  const int div_iters = static_cast<int>(config.get_int("props.divergence_iterations"));
  const int con_iters = static_cast<int>(config.get_int("props.contraction_iterations"));
  const int probes = static_cast<int>(config.get_int("props.probes"));
  const auto mean_values = config.get_doubles("props.mean");
  const Vector mean = Eigen::Map<const Vector>(mean_values.data(), static_cast<Eigen::Index>(mean_values.size()));
  if (mean.size() < 1) throw ConfigError("props.mean is empty");
  if (div_iters < 1 || con_iters < 1) throw ConfigError("props iteration counts must be >= 1");

  std::ostringstream out;
  write_csv_preamble(out, "prop-verdicts",
                     {"proposition", "scale", "diverged", "measured_rate", "predicted_rate", "s_max", "verdict"});
  bool all_pass = true;
  auto row = [&](const std::string& prop, double s, bool diverged, double measured, double predicted, double s_max,
                 bool pass) {
    all_pass = all_pass && pass;
    out << csv_row({prop, format_double(s), diverged ? "1" : "0", num(measured), num(predicted), num(s_max),
                    pass ? "pass" : "fail"});
  };

  // Velocity at t = 1 and objective gradient are both z -> L z.
  const DivergentPair pair = divergent_pair(lipschitz);
  const Vector one = Vector::Ones(1);
  const ContractionEstimate pair_est =
      contraction_estimate(*pair.velocity, *pair.objective, {one, 0.5}, probes, 1, config.get_int("run.seed"));
  for (double s : div_scales) {
    GuidanceConfig g;
    g.scale = s;
    g.iterations = div_iters;
    g.windows = 1;
    g.normalize_gradient = false;
    g.return_policy = ReturnPolicy::Last;
    const SolverReport r = unanchored_fixed_point(*pair.velocity, *pair.objective, one, g, one);
    row("unanchored-divergence", s, r.divergence_flag, r.convergence_rate, lipschitz * (1.0 + s), pair_est.s_max,
        r.divergence_flag);
  }

  // Same objective, anchored on a constant field: contracts for s below s_max.
  const ConstantVelocity still(Vector::Zero(1));
  const ContractionEstimate still_est =
      contraction_estimate(still, *pair.objective, {one, 0.5}, probes, 1, config.get_int("run.seed"));
  for (double s : div_scales) {
    if (!(s < still_est.s_max)) continue;
    GuidanceConfig g;
    g.scale = s;
    g.iterations = 200;
    g.windows = 1;
    g.normalize_gradient = false;
    g.return_policy = ReturnPolicy::Last;
    g.residual_tolerance = 1e-10;
    const SolverReport r = anchored_fixed_point_straight(still, *pair.objective, one, g);
    row("anchored-below-s-max", s, r.divergence_flag, r.convergence_rate, lipschitz * s, still_est.s_max,
        r.converged && !r.divergence_flag);
  }

  // Constant field, Gaussian objective: the error contracts by s per step.
  const ConstantVelocity zero(Vector::Zero(mean.size()));
  const GaussianObjective gaussian(mean, 1.0);
  const ContractionEstimate con_est =
      contraction_estimate(zero, gaussian, {Vector::Zero(mean.size()), 1.0}, probes, 1, config.get_int("run.seed"));
  for (double s : con_scales) {
    GuidanceConfig g;
    g.scale = s;
    g.iterations = con_iters;
    g.windows = 1;
    g.normalize_gradient = false;
    g.return_policy = ReturnPolicy::Last;
    const SolverReport r = anchored_fixed_point_straight(zero, gaussian, Vector::Zero(mean.size()), g);
    const bool pass = !r.divergence_flag && std::isfinite(r.convergence_rate) &&
                      std::abs(r.convergence_rate - s) <= 0.1 * s;
    row("anchored-contraction", s, r.divergence_flag, r.convergence_rate, s, con_est.s_max, pass);
  }

  write_file(dir / "verdicts.csv", out.str());
  std::cout << fmt::format("props: verdicts -> {}{}\n", (dir / "verdicts.csv").string(),
                           all_pass ? "" : " (some verdicts failed)");
  return all_pass ? kOk : kFailure;
}

}  // namespace rectflow::cli
