#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace rectflow {

/// Every CSV file starts with a preamble line
///   # rectflow-csv schema=<name> version=<n>
/// followed by the column header row. Bump the version when a schema's
/// columns change.
inline constexpr int kCsvSchemaVersion = 1;

/// Round-trip exact, locale independent.
std::string format_double(double value);

void write_csv_preamble(std::ostream& out, std::string_view schema, const std::vector<std::string>& columns);

struct CsvTable {
  std::string schema;
  int version = 0;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;
};

/// Throws IoError when unreadable and FormatError for a missing or malformed
/// preamble, or a version other than kCsvSchemaVersion.
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace rectflow
