#pragma once

#include <string>
#include <vector>

#include "cli_common.hpp"

namespace rectflow::cli {

int cmd_train(const CommonOptions& opts);
int cmd_guide(const CommonOptions& opts);
int cmd_ablate(const CommonOptions& opts);
int cmd_props(const CommonOptions& opts);
int cmd_report(const CommonOptions& opts, const std::vector<std::string>& run_dirs);

}  // namespace rectflow::cli
