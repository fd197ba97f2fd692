#include "rectflow/dataset.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "rectflow/error.hpp"

namespace rectflow {

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::GaussianMixture: return "gaussian-mixture";
    case DatasetKind::RingPair: return "ring-pair";
    case DatasetKind::Checkerboard: return "checkerboard";
    case DatasetKind::LabeledClusters: return "labeled-clusters";
  }
  return "gaussian-mixture";
}

DatasetKind dataset_kind_from_string(const std::string& name) {
  if (name == "gaussian-mixture") return DatasetKind::GaussianMixture;
  if (name == "ring-pair") return DatasetKind::RingPair;
  if (name == "checkerboard") return DatasetKind::Checkerboard;
  if (name == "labeled-clusters") return DatasetKind::LabeledClusters;
  throw ConfigError(fmt::format("unknown dataset kind '{}'", name));
}

nlohmann::json DatasetSpec::to_json() const {
  nlohmann::json j;
  j["kind"] = to_string(kind);
  j["dim"] = dim;
  j["components"] = components;
  j["radius"] = radius;
  j["stddev"] = stddev;
  j["seed"] = seed;
  auto m = nlohmann::json::array();
  for (const auto& mean : means) m.push_back(std::vector<double>(mean.begin(), mean.end()));
  j["means"] = m;
  return j;
}

DatasetSpec DatasetSpec::from_json(const nlohmann::json& j) {
  DatasetSpec s;
  s.kind = dataset_kind_from_string(j.at("kind").get<std::string>());
  s.dim = j.at("dim").get<Eigen::Index>();
  s.components = j.at("components").get<int>();
  s.radius = j.at("radius").get<double>();
  s.stddev = j.at("stddev").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& m : j.at("means")) {
    auto values = m.get<std::vector<double>>();
    s.means.push_back(Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size())));
  }
  return s;
}

SyntheticDataset::SyntheticDataset(DatasetSpec spec) : spec_(std::move(spec)) {
  if (spec_.dim < 1 || spec_.dim > 64) {
    throw DomainError(fmt::format("dataset dimension must lie in [1, 64], got {}", spec_.dim));
  }
  if (spec_.stddev < 0.0) throw DomainError("dataset stddev must be non-negative");
  const bool planar = spec_.kind == DatasetKind::Checkerboard || spec_.kind == DatasetKind::RingPair;
  if (planar && spec_.dim != 2) {
    throw DomainError(fmt::format("{} is defined in 2-D only", to_string(spec_.kind)));
  }
  if (spec_.kind == DatasetKind::GaussianMixture || spec_.kind == DatasetKind::LabeledClusters) {
    if (!spec_.means.empty()) {
      means_ = spec_.means;
      spec_.components = static_cast<int>(means_.size());
      for (const auto& m : means_) {
        if (m.size() != spec_.dim) throw DimensionError("dataset mean has the wrong dimension");
      }
    } else {
      if (spec_.components < 1) throw DomainError("mixture needs at least one component");
      for (int k = 0; k < spec_.components; ++k) {
        const double angle = 2.0 * std::numbers::pi * k / spec_.components;
        Vector m = Vector::Zero(spec_.dim);
        m(0) = spec_.radius * std::cos(angle);
        if (spec_.dim > 1) m(1) = spec_.radius * std::sin(angle);
        means_.push_back(m);
      }
    }
    if (spec_.kind == DatasetKind::LabeledClusters) {
      if (spec_.components < 2) throw DomainError("labeled-clusters needs at least two classes");
      for (std::size_t a = 0; a < means_.size(); ++a) {
        for (std::size_t b = a + 1; b < means_.size(); ++b) {
          if ((means_[a] - means_[b]).norm() == 0.0) throw DomainError("labeled-clusters means must be distinct");
        }
      }
    }
  }
}

bool SyntheticDataset::labeled() const noexcept { return spec_.kind != DatasetKind::Checkerboard; }

int SyntheticDataset::num_classes() const noexcept {
  switch (spec_.kind) {
    case DatasetKind::Checkerboard: return 0;
    case DatasetKind::RingPair: return 2;
    default: return spec_.components;
  }
}

Matrix standard_normal(Eigen::Index n, Eigen::Index dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(n, dim);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < dim; ++c) out(r, c) = normal(rng);
  }
  return out;
}

Samples SyntheticDataset::sample(Eigen::Index n, std::mt19937_64& rng) const {
  if (n < 0) throw DomainError("sample count must be non-negative");
  Samples s;
  s.points.resize(n, spec_.dim);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  switch (spec_.kind) {
    case DatasetKind::GaussianMixture:
    case DatasetKind::LabeledClusters: {
      std::uniform_int_distribution<int> pick(0, static_cast<int>(means_.size()) - 1);
      s.labels.resize(static_cast<std::size_t>(n));
      for (Eigen::Index r = 0; r < n; ++r) {
        const int k = pick(rng);
        s.labels[static_cast<std::size_t>(r)] = k;
        for (Eigen::Index c = 0; c < spec_.dim; ++c) s.points(r, c) = means_[k](c) + spec_.stddev * normal(rng);
      }
      break;
    }
    case DatasetKind::Checkerboard: {
      // 4x4 board on [-2, 2]^2; a point is kept on squares whose integer
      // coordinates sum to an even number.
      for (Eigen::Index r = 0; r < n; ++r) {
        const double x = -2.0 + 4.0 * uniform(rng);
        const double cell = -2.0 + std::floor(2.0 * uniform(rng)) * 2.0;
        const double fx = std::floor(x);
        double y = cell + uniform(rng);
        if ((static_cast<long>(fx) + static_cast<long>(std::floor(y))) % 2 != 0) y += 1.0;
        s.points(r, 0) = x;
        s.points(r, 1) = y;
      }
      break;
    }
    case DatasetKind::RingPair: {
      // Two interleaved half rings of radius `radius / 3` (unit by default).
      const double ring = spec_.radius / 3.0;
      s.labels.resize(static_cast<std::size_t>(n));
      for (Eigen::Index r = 0; r < n; ++r) {
        const int k = uniform(rng) < 0.5 ? 0 : 1;
        const double angle = std::numbers::pi * uniform(rng);
        double x = ring * std::cos(angle);
        double y = ring * std::sin(angle);
        if (k == 1) {
          x = ring - x;
          y = 0.5 * ring - y;
        }
        s.labels[static_cast<std::size_t>(r)] = k;
        s.points(r, 0) = x + spec_.stddev * 0.3 * normal(rng);
        s.points(r, 1) = y + spec_.stddev * 0.3 * normal(rng);
      }
      break;
    }
  }
  return s;
}

Samples SyntheticDataset::sample(Eigen::Index n, std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  return sample(n, rng);
}

}  // namespace rectflow
