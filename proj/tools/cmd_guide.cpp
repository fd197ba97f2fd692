#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <sstream>

#include <fmt/format.h>

#include "commands.hpp"
#include "rectflow/checkpoint.hpp"
#include "rectflow/error.hpp"
#include "rectflow/parallel.hpp"
#include "rectflow/svg.hpp"

namespace rectflow::cli {

namespace {

std::vector<KeySpec> guide_schema() {
  return {
      {"run.seed", "0"},
      {"run.out", ""},
      {"guide.method", "anchored"},
      {"guide.flow", std::nullopt},
      {"guide.classifier", ""},
      {"guide.noise_classifier", ""},
      {"guide.scale", "1.0"},
      {"guide.iterations", "100"},
      {"guide.windows", "4"},
      {"guide.tolerance", "1e-4"},
      {"guide.normalize", "true"},
      {"guide.return_policy", "best-objective"},
      {"guide.stop_on_tolerance", "false"},
      {"guide.straight_through", "true"},
      {"guide.substeps", "1"},
      {"guide.per_window_gradient", "false"},
      {"guide.seeds", "8"},
      {"guide.threads", "0"},
      {"guide.plots", "true"},
      {"guide.oracle_steps", "1000"},
      {"objective.kind", "classifier"},
      {"objective.target_class", "cycle"},
      {"objective.mean", "1,1"},
      {"objective.scale", "1.0"},
      {"objective.reference", ""},
      {"objective.l1_coeff", "0"},
      {"noise_gd.learning_rate", "0.4"},
      {"noise_gd.momentum", "0.9"},
      {"noise_gd.l2", "1.0"},
  };
}

const std::vector<std::string> kMethods{"anchored", "unanchored", "straight-anchored", "noise-gd", "oracle-ode"};

Vector to_vector(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())); }

std::shared_ptr<Classifier> load_classifier(const std::string& path, CheckpointKind expected) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.kind != expected) {
    throw ConfigError(fmt::format("'{}' holds a {} checkpoint, expected {}", path, to_string(ckpt.kind),
                                  to_string(expected)));
  }
  return classifier_from_checkpoint(ckpt);
}

struct GuideSetup {
  std::string method;
  std::shared_ptr<const VelocityField> field;
  Eigen::Index dim = 0;
  std::string objective_kind;
  std::string classifier_path;
  std::shared_ptr<const Classifier> classifier;
  std::shared_ptr<const Classifier> noise_classifier;
  std::optional<int> fixed_target;
  Vector mean;
  double objective_scale = 1.0;
  Vector feature_reference;
  double l1_coeff = 0.0;
  GuidanceConfig guidance;
  NoiseGdConfig noise_gd;
  int oracle_steps = 1000;
  int seeds = 0;
  unsigned threads = 0;
  std::uint64_t run_seed = 0;

  int num_classes() const { return classifier ? classifier->architecture().num_classes
                                             : noise_classifier ? noise_classifier->architecture().num_classes : 0; }

  int target_for(int index) const {
    if (fixed_target) return *fixed_target;
    const int n = num_classes();
    return n > 0 ? index % n : -1;
  }

  std::shared_ptr<const Objective> objective(int index, const Vector& reference_endpoint) const {
    std::shared_ptr<const Objective> primary;
    if (objective_kind == "classifier") {
      auto obj = std::make_shared<ClassifierObjective>(classifier, target_for(index));
      obj->set_source(classifier_path);
      primary = obj;
    } else if (objective_kind == "gaussian") {
      primary = std::make_shared<GaussianObjective>(mean, objective_scale);
    } else {
      primary = std::make_shared<FeatureSimilarityObjective>(FeatureEncoder::identity(dim), feature_reference);
    }
    if (l1_coeff > 0.0) return std::make_shared<CompositeObjective>(primary, reference_endpoint, l1_coeff);
    return primary;
  }

  std::shared_ptr<const NoiseAwareObjective> noise_objective(int index, const Vector& reference_endpoint) const {
    if (objective_kind == "classifier" && noise_classifier && l1_coeff == 0.0) {
      return std::make_shared<NoiseAwareClassifierObjective>(noise_classifier, target_for(index));
    }
    return std::make_shared<TimeIndependentObjective>(objective(index, reference_endpoint));
  }
};

GuideSetup setup_from_config(const RunConfig& config) {
  GuideSetup s;
  s.method = config.get("guide.method");
  if (std::find(kMethods.begin(), kMethods.end(), s.method) == kMethods.end()) {
    throw ConfigError(fmt::format("unknown guide.method '{}'", s.method));
  }
  const std::string flow_path = config.get("guide.flow");
  if (flow_path.empty()) throw ConfigError("guide.flow must name a flow checkpoint");
  const Checkpoint flow_ckpt = load_checkpoint(flow_path);
  if (flow_ckpt.kind != CheckpointKind::Flow) {
    throw ConfigError(fmt::format("'{}' is not a flow checkpoint", flow_path));
  }
  s.field = std::make_shared<const VelocityField>(field_from_checkpoint(flow_ckpt));
  s.dim = s.field->dim();

  s.classifier_path = config.get("guide.classifier");
  if (!s.classifier_path.empty()) s.classifier = load_classifier(s.classifier_path, CheckpointKind::CleanClassifier);
  const std::string noise_path = config.get("guide.noise_classifier");
  if (!noise_path.empty()) s.noise_classifier = load_classifier(noise_path, CheckpointKind::NoiseAwareClassifier);

  s.objective_kind = config.get("objective.kind");
  if (s.objective_kind == "classifier") {
    if (!s.classifier) throw ConfigError("objective.kind=classifier needs guide.classifier");
    if (s.classifier->architecture().input_dim != s.dim) throw ConfigError("classifier and flow dimensions differ");
  } else if (s.objective_kind == "gaussian") {
    s.mean = to_vector(config.get_doubles("objective.mean"));
    s.objective_scale = config.get_double("objective.scale");
    if (s.mean.size() != s.dim) throw ConfigError("objective.mean length differs from the flow dimension");
  } else if (s.objective_kind == "feature-similarity") {
    if (config.get("objective.reference").empty()) throw ConfigError("objective.kind=feature-similarity needs objective.reference");
    s.feature_reference = to_vector(config.get_doubles("objective.reference"));
    if (s.feature_reference.size() != s.dim) throw ConfigError("objective.reference length differs from the flow dimension");
  } else {
    throw ConfigError(fmt::format("unknown objective.kind '{}'", s.objective_kind));
  }
  if (s.noise_classifier && s.noise_classifier->architecture().input_dim != s.dim) {
    throw ConfigError("noise-aware classifier and flow dimensions differ");
  }

  const std::string target = config.get("objective.target_class");
  if (target != "cycle") {
    s.fixed_target = static_cast<int>(config.get_int("objective.target_class"));
    const int n = s.num_classes();
    if (n > 0 && (*s.fixed_target < 0 || *s.fixed_target >= n)) {
      throw ConfigError(fmt::format("objective.target_class {} outside [0, {})", *s.fixed_target, n));
    }
  }
  s.l1_coeff = config.get_double("objective.l1_coeff");
  if (s.l1_coeff < 0.0) throw ConfigError("objective.l1_coeff must be non-negative");

  GuidanceConfig& g = s.guidance;
  g.scale = config.get_double("guide.scale");
  g.iterations = static_cast<int>(config.get_int("guide.iterations"));
  g.windows = static_cast<int>(config.get_int("guide.windows"));
  g.residual_tolerance = config.get_double("guide.tolerance");
  g.normalize_gradient = config.get_bool("guide.normalize");
  g.return_policy = return_policy_from_string(config.get("guide.return_policy"));
  g.stop_on_tolerance = config.get_bool("guide.stop_on_tolerance");
  g.straight_through = config.get_bool("guide.straight_through");
  g.substeps = static_cast<int>(config.get_int("guide.substeps"));
  g.per_window_gradient = config.get_bool("guide.per_window_gradient");
  g.validate();

  NoiseGdConfig& n = s.noise_gd;
  n.learning_rate = config.get_double("noise_gd.learning_rate");
  n.momentum = config.get_double("noise_gd.momentum");
  n.l2_coeff = config.get_double("noise_gd.l2");
  n.iterations = g.iterations;
  n.windows = g.windows;
  n.substeps = g.substeps;
  n.residual_tolerance = g.residual_tolerance;
  n.validate();

  s.oracle_steps = static_cast<int>(config.get_int("guide.oracle_steps"));
  if (s.oracle_steps < 1) throw ConfigError("guide.oracle_steps must be >= 1");
  const long seeds = config.get_int("guide.seeds");
  if (seeds < 1) throw ConfigError("guide.seeds must be >= 1");
  s.seeds = static_cast<int>(seeds);
  const long threads = config.get_int("guide.threads");
  if (threads < 0) throw ConfigError("guide.threads must be >= 0");
  s.threads = static_cast<unsigned>(threads);
  s.run_seed = static_cast<std::uint64_t>(config.get_int("run.seed"));
  return s;
}

struct SeedRun {
  int index = 0;
  int target = -1;
  Vector z0;
  Trajectory reference;
  SolverReport report;
};

SolverReport oracle_report(const GuideSetup& s, const NoiseAwareObjective& guided, const Objective& scored,
                           const Vector& z0, const Vector& reference_endpoint) {
  SolverReport r;
  r.method = "oracle-ode";
  r.final_trajectory = guided_ode_sample(*s.field, guided, z0, s.oracle_steps, s.guidance.scale);
  r.reference_endpoint = reference_endpoint;
  r.reference_objective = scored.value(reference_endpoint);
  r.final_objective = scored.value(r.endpoint());
  r.anchoring_distance = (r.endpoint() - reference_endpoint).norm();
  r.log_residual_slope = std::numeric_limits<double>::quiet_NaN();
  r.convergence_rate = std::numeric_limits<double>::quiet_NaN();
  r.config = {{"scale", s.guidance.scale}, {"steps", s.oracle_steps}};
  return r;
}

SeedRun run_seed(const GuideSetup& s, const std::string& method, const GuidanceConfig& g, int index) {
  SeedRun run;
  run.index = index;
  run.target = s.target_for(index);
  run.z0 = noise_sample(s.run_seed, static_cast<std::uint64_t>(index), s.dim);
  // The straight solver anchors to a single segment.
  const int windows = method == "straight-anchored" ? 1 : g.windows;
  run.reference = piecewise_sample(*s.field, run.z0, TimeWindows::uniform(windows), g.substeps);
  const auto objective = s.objective(index, run.reference.end());
  if (method == "anchored") {
    run.report = anchored_piecewise_solve(*s.field, *objective, run.z0, g);
  } else if (method == "unanchored") {
    run.report = unanchored_fixed_point(*s.field, *objective, run.z0, g);
  } else if (method == "straight-anchored") {
    run.report = anchored_fixed_point_straight(*s.field, *objective, run.z0, g);
  } else if (method == "noise-gd") {
    run.report = noise_gradient_descent(*s.field, *objective, run.z0, s.noise_gd);
  } else {
    run.report = oracle_report(s, *s.noise_objective(index, run.reference.end()), *objective, run.z0,
                               run.reference.end());
  }
  return run;
}

std::vector<SeedRun> run_all(const GuideSetup& s, const std::string& method, const GuidanceConfig& g) {
  std::vector<SeedRun> runs(static_cast<std::size_t>(s.seeds));
  parallel_for(runs.size(), s.threads, [&](std::size_t i) { runs[i] = run_seed(s, method, g, static_cast<int>(i)); });
  return runs;
}

std::string fmt_or_nan(double x) { return std::isfinite(x) ? format_double(x) : "nan"; }

std::string endpoints_csv(const std::vector<SeedRun>& runs, bool reference) {
  std::ostringstream out;
  std::vector<std::string> cols{"seed"};
  for (auto& c : state_columns(runs.front().z0.size())) cols.push_back(c);
  write_csv_preamble(out, "endpoints", cols);
  for (const auto& r : runs) {
    const Vector& z = reference ? r.reference.end() : r.report.endpoint();
    out << r.index;
    for (Eigen::Index i = 0; i < z.size(); ++i) out << ',' << format_double(z(i));
    out << '\n';
  }
  return out.str();
}

const std::vector<std::string> kRunColumns{"method",          "seed",          "target_class",
                                           "final_objective", "reference_objective", "converged",
                                           "diverged",        "iterations_used",     "anchoring_distance",
                                           "convergence_rate"};

void write_plots(const std::filesystem::path& dir, const std::vector<SeedRun>& runs) {
  std::vector<PlotSeries> residuals;
  for (const auto& r : runs) {
    if (r.report.residual_series.empty()) continue;
    PlotSeries p{fmt::format("seed {}", r.index), {}, {}, false};
    for (std::size_t i = 0; i < r.report.residual_series.size(); ++i) {
      p.x.push_back(static_cast<double>(i + 1));
      p.y.push_back(r.report.residual_series[i]);
    }
    residuals.push_back(std::move(p));
    if (residuals.size() == 8) break;
  }
  if (!residuals.empty()) {
    write_file(dir / "residuals.svg",
               render_plot({"Fixed-point residual", "iteration", "residual", true, false}, residuals));
  }
  if (runs.front().z0.size() != 2) return;

  PlotSeries guided{"guided", {}, {}, true};
  PlotSeries reference{"reference", {}, {}, true};
  for (const auto& r : runs) {
    guided.x.push_back(r.report.endpoint()(0));
    guided.y.push_back(r.report.endpoint()(1));
    reference.x.push_back(r.reference.end()(0));
    reference.y.push_back(r.reference.end()(1));
  }
  write_file(dir / "endpoints.svg",
             render_plot({"Guided vs reference endpoints", "z0", "z1", false, true}, {reference, guided}));

  std::vector<PlotSeries> paths;
  for (std::size_t i = 0; i < std::min<std::size_t>(runs.size(), 4); ++i) {
    PlotSeries ref{fmt::format("reference {}", runs[i].index), {}, {}, false};
    for (const auto& st : runs[i].reference.states) {
      ref.x.push_back(st.z(0));
      ref.y.push_back(st.z(1));
    }
    PlotSeries gd{fmt::format("guided {}", runs[i].index), {}, {}, false};
    for (const auto& st : runs[i].report.final_trajectory.states) {
      gd.x.push_back(st.z(0));
      gd.y.push_back(st.z(1));
    }
    paths.push_back(std::move(ref));
    paths.push_back(std::move(gd));
  }
  write_file(dir / "trajectories.svg", render_plot({"Trajectories", "z0", "z1", false, true}, paths));
}

}  // namespace

int cmd_guide(const CommonOptions& opts) {
  const auto schema = guide_schema();
  const RunConfig config = load_config(opts, schema, "guide");
  persist_config(config);
  const auto dir = output_dir(config);
  const GuideSetup setup = setup_from_config(config);
  const std::vector<SeedRun> runs = run_all(setup, setup.method, setup.guidance);

  std::ostringstream table;
  write_csv_preamble(table, "guide-runs", kRunColumns);
  std::ostringstream residuals;
  write_csv_preamble(residuals, "residual-series", {"seed", "iteration", "residual", "objective"});
  bool any_diverged = false;
  double total = 0.0;
  int converged = 0;
  for (const auto& r : runs) {
    const SolverReport& rep = r.report;
    any_diverged = any_diverged || rep.divergence_flag;
    total += rep.final_objective;
    converged += rep.converged ? 1 : 0;
    table << csv_row({setup.method, std::to_string(r.index), std::to_string(r.target), fmt_or_nan(rep.final_objective),
                      fmt_or_nan(rep.reference_objective), rep.converged ? "1" : "0",
                      rep.divergence_flag ? "1" : "0", std::to_string(rep.iterations_used),
                      fmt_or_nan(rep.anchoring_distance), fmt_or_nan(rep.convergence_rate)});
    for (std::size_t i = 0; i < rep.residual_series.size(); ++i) {
      residuals << csv_row({std::to_string(r.index), std::to_string(i + 1), fmt_or_nan(rep.residual_series[i]),
                            fmt_or_nan(rep.objective_series[i])});
    }
    nlohmann::json record = rep.to_json();
    record["seed"] = r.index;
    record["target_class"] = r.target;
    write_file(dir / "reports" / fmt::format("seed_{}.json", r.index), record.dump(2) + "\n");
    std::ostringstream traj;
    write_trajectory_csv(traj, rep.final_trajectory);
    write_file(dir / "trajectories" / fmt::format("seed_{}.csv", r.index), traj.str());
    std::ostringstream ref;
    write_trajectory_csv(ref, r.reference);
    write_file(dir / "trajectories" / fmt::format("seed_{}_reference.csv", r.index), ref.str());
  }
  write_file(dir / "runs.csv", table.str());
  write_file(dir / "residuals.csv", residuals.str());
  write_file(dir / "endpoints.csv", endpoints_csv(runs, false));
  write_file(dir / "reference_endpoints.csv", endpoints_csv(runs, true));
  if (config.get_bool("guide.plots")) write_plots(dir, runs);

  const double mean = total / static_cast<double>(runs.size());
  nlohmann::json summary{{"method", setup.method},
                         {"seeds", setup.seeds},
                         {"mean_final_objective", std::isfinite(mean) ? nlohmann::json(mean) : nlohmann::json()},
                         {"convergence_fraction", static_cast<double>(converged) / static_cast<double>(runs.size())},
                         {"any_diverged", any_diverged}};
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  std::cout << fmt::format("{}: {} seeds, mean final objective {:.6g}, converged {}/{}{}\n", setup.method,
                           setup.seeds, mean, converged, setup.seeds, any_diverged ? ", DIVERGED" : "");
  return any_diverged ? kDivergence : kOk;
}

int cmd_ablate(const CommonOptions& opts) {
  auto schema = guide_schema();
  schema.push_back({"ablate.scales", "0,0.5,1"});
  schema.push_back({"ablate.iterations", "20,50,100"});
  const RunConfig config = load_config(opts, schema, "ablate");
  persist_config(config);
  const auto dir = output_dir(config);
  const GuideSetup setup = setup_from_config(config);
  if (setup.method != "anchored" && setup.method != "unanchored" && setup.method != "straight-anchored") {
    throw ConfigError(fmt::format("ablate sweeps scale and iterations of fixed-point methods, not '{}'", setup.method));
  }
  const std::vector<double> scales = config.get("ablate.scales").empty() ? std::vector<double>{}
                                                                          : config.get_doubles("ablate.scales");
  const std::vector<long> counts = config.get("ablate.iterations").empty() ? std::vector<long>{}
                                                                            : config.get_ints("ablate.iterations");
  if (scales.empty() || counts.empty()) throw ConfigError("ablate grid is empty");
  for (long n : counts) {
    if (n < 1) throw ConfigError("ablate.iterations entries must be >= 1");
  }
  const int n_max = static_cast<int>(*std::max_element(counts.begin(), counts.end()));

  // One solver run per (scale, seed) at the largest N; shorter budgets are prefixes.
  const std::size_t cells = scales.size() * static_cast<std::size_t>(setup.seeds);
  std::vector<SeedRun> runs(cells);
  parallel_for(cells, setup.threads, [&](std::size_t c) {
    GuidanceConfig g = setup.guidance;
    g.scale = scales[c / static_cast<std::size_t>(setup.seeds)];
    g.iterations = n_max;
    g.validate();
    runs[c] = run_seed(setup, setup.method, g, static_cast<int>(c % static_cast<std::size_t>(setup.seeds)));
  });

  const bool best = setup.guidance.return_policy == ReturnPolicy::BestObjective;
  std::ostringstream per_run;
  write_csv_preamble(per_run, "ablation-runs", {"scale", "iterations", "seed", "objective", "converged"});
  std::ostringstream table;
  write_csv_preamble(table, "ablation",
                     {"row", "scale", "iterations", "mean_objective", "std_objective", "convergence_fraction"});
  std::vector<PlotSeries> curves;
  bool any_diverged = false;
  for (std::size_t si = 0; si < scales.size(); ++si) {
    PlotSeries curve{fmt::format("s = {}", scales[si]), {}, {}, true};
    for (long n : counts) {
      std::vector<double> values;
      int converged = 0;
      for (int seed = 0; seed < setup.seeds; ++seed) {
        const SolverReport& rep = runs[si * static_cast<std::size_t>(setup.seeds) + static_cast<std::size_t>(seed)].report;
        any_diverged = any_diverged || rep.divergence_flag;
        const auto used = std::min<std::size_t>(static_cast<std::size_t>(n), rep.objective_series.size());
        double value = rep.reference_objective;
        if (best) {
          for (std::size_t i = 0; i < used; ++i) value = std::max(value, rep.objective_series[i]);
        } else if (used > 0) {
          value = rep.objective_series[used - 1];
        }
        const bool ok = used > 0 && !rep.divergence_flag && rep.residual_series[used - 1] <= setup.guidance.residual_tolerance;
        converged += ok ? 1 : 0;
        values.push_back(value);
        per_run << csv_row({format_double(scales[si]), std::to_string(n), std::to_string(seed), fmt_or_nan(value),
                            ok ? "1" : "0"});
      }
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= static_cast<double>(values.size());
      double var = 0.0;
      for (double v : values) var += (v - mean) * (v - mean);
      var /= static_cast<double>(values.size());
      table << csv_row({"cell", format_double(scales[si]), std::to_string(n), fmt_or_nan(mean),
                        fmt_or_nan(std::sqrt(var)),
                        format_double(static_cast<double>(converged) / static_cast<double>(values.size()))});
      curve.x.push_back(static_cast<double>(n));
      curve.y.push_back(mean);
    }
    curves.push_back(std::move(curve));
  }
  double base = 0.0;
  for (int seed = 0; seed < setup.seeds; ++seed) base += runs[static_cast<std::size_t>(seed)].report.reference_objective;
  base /= static_cast<double>(setup.seeds);
  table << csv_row({"baseline", "", "", fmt_or_nan(base), "", ""});
  write_file(dir / "ablation_runs.csv", per_run.str());
  write_file(dir / "ablation.csv", table.str());
  if (config.get_bool("guide.plots")) {
    PlotSeries baseline{"unguided", {}, {}, false};
    for (long n : counts) {
      baseline.x.push_back(static_cast<double>(n));
      baseline.y.push_back(base);
    }
    curves.push_back(std::move(baseline));
    write_file(dir / "ablation.svg",
               render_plot({"Objective vs iterations", "iterations N", "mean objective", false, false}, curves));
  }
  std::cout << fmt::format("ablate: {} scales x {} budgets x {} seeds -> {}\n", scales.size(), counts.size(),
                           setup.seeds, (dir / "ablation.csv").string());
  return any_diverged ? kDivergence : kOk;
}

}  // namespace rectflow::cli
