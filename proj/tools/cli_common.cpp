#include "cli_common.hpp"

#include <cstdlib>
#include <fstream>

#include <fmt/format.h>

#include "rectflow/error.hpp"

namespace rectflow::cli {

RunConfig load_config(const CommonOptions& opts, std::span<const KeySpec> schema, const std::string& command) {
  RunConfig raw = opts.config_path ? RunConfig::load(*opts.config_path) : RunConfig();
  if (opts.seed) raw.set("run.seed", std::to_string(*opts.seed));
  if (opts.out) raw.set("run.out", *opts.out);
  for (const auto& o : opts.overrides) raw.apply_override(o);
  RunConfig config = raw.resolve(schema);

  if (config.get_int("run.seed") < 0) throw ConfigError("run.seed must be non-negative");
  std::filesystem::path out = config.get("run.out");
  if (out.empty()) {
    const char* root = std::getenv("RECTFLOW_OUT");
    out = std::filesystem::path(root && *root ? root : "rectflow-out") /
          fmt::format("{}-seed{}", command, config.get("run.seed"));
  }
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError(fmt::format("cannot create output directory '{}': {}", out.string(), ec.message()));
  config.set("run.out", out.string());
  return config;
}

void persist_config(const RunConfig& config) {
  write_file(output_dir(config) / "resolved_config.ini", config.to_ini());
}

std::filesystem::path output_dir(const RunConfig& config) { return config.get("run.out"); }

void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out << content;
  if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

std::string csv_row(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) s += ',';
    s += cells[i];
  }
  s += '\n';
  return s;
}

std::vector<std::string> state_columns(Eigen::Index dim) {
  std::vector<std::string> cols;
  for (Eigen::Index i = 0; i < dim; ++i) cols.push_back(fmt::format("z{}", i));
  return cols;
}

Vector noise_sample(std::uint64_t seed, std::uint64_t index, Eigen::Index dim) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x9e37u};
  std::mt19937_64 rng(seq);
  return standard_normal(1, dim, rng).row(0).transpose();
}

DatasetSpec dataset_from_config(const RunConfig& config) {
  DatasetSpec spec;
  spec.kind = dataset_kind_from_string(config.get("dataset.kind"));
  spec.dim = config.get_int("dataset.dim");
  spec.components = static_cast<int>(config.get_int("dataset.components"));
  spec.radius = config.get_double("dataset.radius");
  spec.stddev = config.get_double("dataset.stddev");
  spec.seed = static_cast<std::uint64_t>(config.get_int("run.seed"));
  return spec;
}

std::vector<Eigen::Index> widths(const RunConfig& config, const std::string& key) {
  std::vector<Eigen::Index> out;
  for (long w : config.get_ints(key)) {
    if (w < 1) throw ConfigError(fmt::format("config key '{}' needs positive layer widths", key));
    out.push_back(w);
  }
  return out;
}

}  // namespace rectflow::cli
