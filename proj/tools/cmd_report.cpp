#include <cmath>
#include <iostream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "commands.hpp"
#include "rectflow/error.hpp"
#include "rectflow/svg.hpp"

namespace rectflow::cli {

namespace {

const std::vector<KeySpec> kReportSchema = {{"run.seed", "0"}, {"run.out", ""}};

struct MethodTotals {
  int runs = 0;
  double objective = 0.0;
  int converged = 0;
  double anchoring = 0.0;
};

double parse_number(const std::string& cell, const std::string& where) {
  if (cell == "nan") return std::nan("");
  try {
    std::size_t used = 0;
    const double x = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return x;
  } catch (const std::exception&) {
    throw FormatError(fmt::format("{}: '{}' is not a number", where, cell));
  }
}

}  // namespace

int cmd_report(const CommonOptions& opts, const std::vector<std::string>& run_dirs) {
  if (run_dirs.empty()) throw ConfigError("report needs at least one run directory");
  const RunConfig config = load_config(opts, kReportSchema, "report");
  persist_config(config);
  const auto dir = output_dir(config);

  // Keyed by method, in first-seen order.
  std::vector<std::string> order;
  std::map<std::string, MethodTotals> totals;
  for (const auto& run_dir : run_dirs) {
    const auto path = std::filesystem::path(run_dir) / "runs.csv";
    const CsvTable table = read_csv(path);
    if (table.schema != "guide-runs") {
      throw FormatError(fmt::format("{}: expected schema guide-runs, found {}", path.string(), table.schema));
    }
    const auto method = table.column("method");
    const auto objective = table.column("final_objective");
    const auto converged = table.column("converged");
    const auto anchoring = table.column("anchoring_distance");
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      const auto& row = table.rows[i];
      const std::string& m = row[method];
      if (!totals.count(m)) order.push_back(m);
      MethodTotals& t = totals[m];
      const std::string where = fmt::format("{} row {}", path.string(), i + 1);
      t.runs += 1;
      t.objective += parse_number(row[objective], where);
      t.converged += row[converged] == "1" ? 1 : 0;
      t.anchoring += parse_number(row[anchoring], where);
    }
  }

  std::ostringstream out;
  write_csv_preamble(out, "comparison",
                     {"method", "runs", "mean_final_objective", "convergence_fraction", "mean_anchoring_distance"});
  PlotSeries bars{"mean final objective", {}, {}, true};
  for (std::size_t i = 0; i < order.size(); ++i) {
    const MethodTotals& t = totals[order[i]];
    const double n = static_cast<double>(t.runs);
    const double mean = t.objective / n;
    out << csv_row({order[i], std::to_string(t.runs), std::isfinite(mean) ? format_double(mean) : "nan",
                    format_double(t.converged / n), format_double(t.anchoring / n)});
    bars.x.push_back(static_cast<double>(i));
    bars.y.push_back(mean);
  }
  write_file(dir / "comparison.csv", out.str());
  std::string title = "Mean final objective by method:";
  for (std::size_t i = 0; i < order.size(); ++i) title += fmt::format(" {}={}", i, order[i]);
  write_file(dir / "comparison.svg", render_plot({title, "method index", "mean final objective", false, false}, {bars}));
  std::cout << fmt::format("report: {} methods from {} runs -> {}\n", order.size(), run_dirs.size(),
                           (dir / "comparison.csv").string());
  return kOk;
}

}  // namespace rectflow::cli
