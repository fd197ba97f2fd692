#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rectflow/config.hpp"
#include "rectflow/csv.hpp"
#include "rectflow/guidance.hpp"
#include "rectflow/sampler.hpp"

namespace rectflow::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kDivergence = 3, kIoError = 4 };

struct CommonOptions {
  std::optional<std::string> config_path;
  std::optional<long> seed;
  std::optional<std::string> out;
  std::vector<std::string> overrides;
};

/// File config, then --seed / --out, then --set overrides, resolved against
/// `schema`. `run.out` is replaced by the effective output directory, which
/// is created.
RunConfig load_config(const CommonOptions& opts, std::span<const KeySpec> schema, const std::string& command);

/// Writes resolved_config.ini into the output directory.
void persist_config(const RunConfig& config);

std::filesystem::path output_dir(const RunConfig& config);

/// Throws IoError on failure.
void write_file(const std::filesystem::path& path, const std::string& content);

std::string csv_row(const std::vector<std::string>& cells);
std::vector<std::string> state_columns(Eigen::Index dim);

/// Deterministic noise for run seed `seed`, sample `index`.
Vector noise_sample(std::uint64_t seed, std::uint64_t index, Eigen::Index dim);

DatasetSpec dataset_from_config(const RunConfig& config);
std::vector<Eigen::Index> widths(const RunConfig& config, const std::string& key);

}  // namespace rectflow::cli
