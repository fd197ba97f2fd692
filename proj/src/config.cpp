#include "rectflow/config.hpp"

#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "rectflow/error.hpp"

namespace rectflow {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

void require_qualified(const std::string& key) {
  const auto dot = key.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == key.size() || key.find('.', dot + 1) != std::string::npos) {
    throw ConfigError(fmt::format("config key '{}' must have the form section.key", key));
  }
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(fmt::format("malformed config: {}", e.message()));
  }
  RunConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError(fmt::format("config key '{}' lies outside any [section]", section));
    for (const auto& [key, value] : body) c.values_[section + "." + key] = trim(value.data());
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open config '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError(fmt::format("override '{}' lacks '='", assignment));
  const std::string key = trim(assignment.substr(0, eq));
  require_qualified(key);
  values_[key] = trim(assignment.substr(eq + 1));
}

RunConfig RunConfig::resolve(std::span<const KeySpec> schema) const {
  std::map<std::string, const KeySpec*> known;
  for (const auto& k : schema) known[k.key] = &k;
  for (const auto& [key, _] : values_) {
    if (!known.count(key)) throw ConfigError(fmt::format("unknown config key '{}'", key));
  }
  RunConfig out;
  for (const auto& k : schema) {
    if (auto it = values_.find(k.key); it != values_.end()) {
      out.values_[k.key] = it->second;
    } else if (k.default_value) {
      out.values_[k.key] = *k.default_value;
    } else {
      throw ConfigError(fmt::format("missing required config key '{}'", k.key));
    }
  }
  return out;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(fmt::format("missing required config key '{}'", key));
  return it->second;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError(fmt::format("config key '{}' expects a number, got '{}'", key, v));
}

long RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const long n = std::stol(v, &used);
    if (used == v.size()) return n;
  } catch (const std::exception&) {
  }
  throw ConfigError(fmt::format("config key '{}' expects an integer, got '{}'", key, v));
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(fmt::format("config key '{}' expects a boolean, got '{}'", key, v));
}

std::vector<double> RunConfig::get_doubles(const std::string& key) const {
  std::vector<double> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    RunConfig tmp;
    tmp.values_[key] = item;
    out.push_back(tmp.get_double(key));
  }
  return out;
}

std::vector<long> RunConfig::get_ints(const std::string& key) const {
  std::vector<long> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    RunConfig tmp;
    tmp.values_[key] = item;
    out.push_back(tmp.get_int(key));
  }
  return out;
}

std::string RunConfig::to_ini() const {
  std::ostringstream out;
  std::string section;
  for (const auto& [key, value] : values_) {
    const auto dot = key.find('.');
    const std::string s = key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out << '\n';
      out << '[' << s << "]\n";
      section = s;
    }
    out << key.substr(dot + 1) << " = " << value << '\n';
  }
  return out.str();
}

}  // namespace rectflow
