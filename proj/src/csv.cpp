#include "rectflow/csv.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "rectflow/error.hpp"

namespace rectflow {

std::string format_double(double value) { return fmt::format("{:.17g}", value); }

void write_csv_preamble(std::ostream& out, std::string_view schema, const std::vector<std::string>& columns) {
  out << "# rectflow-csv schema=" << schema << " version=" << kCsvSchemaVersion << '\n';
  for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
  out << '\n';
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return i;
  }
  throw FormatError(fmt::format("CSV schema '{}' has no column '{}'", schema, name));
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::string line;
  if (!std::getline(in, line)) throw FormatError(fmt::format("'{}' is empty", path.string()));

  CsvTable table;
  constexpr std::string_view prefix = "# rectflow-csv schema=";
  if (line.rfind(prefix, 0) != 0) throw FormatError(fmt::format("'{}' lacks a schema preamble", path.string()));
  const auto rest = line.substr(prefix.size());
  const auto space = rest.find(" version=");
  if (space == std::string::npos) throw FormatError(fmt::format("'{}' preamble lacks a version", path.string()));
  table.schema = rest.substr(0, space);
  try {
    table.version = std::stoi(rest.substr(space + 9));
  } catch (const std::exception&) {
    throw FormatError(fmt::format("'{}' has an unreadable schema version", path.string()));
  }
  if (table.version != kCsvSchemaVersion) {
    throw FormatError(fmt::format("'{}' uses schema version {} but this build reads version {}", path.string(),
                                  table.version, kCsvSchemaVersion));
  }
  if (!std::getline(in, line)) throw FormatError(fmt::format("'{}' lacks a header row", path.string()));
  table.columns = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split(line);
    if (row.size() != table.columns.size()) {
      throw FormatError(fmt::format("'{}': row with {} cells, header has {}", path.string(), row.size(),
                                    table.columns.size()));
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace rectflow
