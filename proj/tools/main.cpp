#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "rectflow/error.hpp"

namespace {

void add_common(CLI::App* cmd, rectflow::cli::CommonOptions& opts) {
  cmd->add_option("--config", opts.config_path, "INI config file");
  cmd->add_option("--seed", opts.seed, "global seed (sets run.seed)");
  cmd->add_option("--out", opts.out, "output directory (sets run.out)");
  cmd->add_option("--set", opts.overrides, "section.key=value override, repeatable")->take_all();
}

}  // namespace

int main(int argc, char** argv) {
  using namespace rectflow;
  CLI::App app{"rectflow: flow matching, piecewise sampling and anchored guidance on toy data"};
  app.require_subcommand(1);
  cli::CommonOptions opts;
  std::vector<std::string> run_dirs;

  auto* train = app.add_subcommand("train", "train a flow or a classifier");
  auto* guide = app.add_subcommand("guide", "run a guidance method over a batch of seeds");
  auto* ablate = app.add_subcommand("ablate", "sweep guidance scale and iteration budget");
  auto* props = app.add_subcommand("props", "divergence and contraction checks on analytic problems");
  auto* report = app.add_subcommand("report", "merge guide runs into a comparison table");
  for (auto* cmd : {train, guide, ablate, props, report}) add_common(cmd, opts);
  report->add_option("runs", run_dirs, "guide output directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kConfigError;
  }

  try {
    if (*train) return cli::cmd_train(opts);
    if (*guide) return cli::cmd_guide(opts);
    if (*ablate) return cli::cmd_ablate(opts);
    if (*props) return cli::cmd_props(opts);
    return cli::cmd_report(opts, run_dirs);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return cli::kConfigError;
  } catch (const DomainError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return cli::kConfigError;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return cli::kIoError;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return cli::kIoError;
  } catch (const NonFiniteError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return cli::kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kFailure;
  }
}
