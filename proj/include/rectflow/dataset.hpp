#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "rectflow/parameters.hpp"

namespace rectflow {

enum class DatasetKind { GaussianMixture, RingPair, Checkerboard, LabeledClusters };

std::string to_string(DatasetKind kind);
DatasetKind dataset_kind_from_string(const std::string& name);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::GaussianMixture;
  Eigen::Index dim = 2;
  /// Mixture components, or classes for labeled-clusters.
  int components = 4;
  /// Default component means sit on a circle of this radius in the first two
  /// coordinates (on the line for dim == 1).
  double radius = 3.0;
  double stddev = 0.35;
  /// Overrides the default means when non-empty.
  std::vector<Vector> means;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static DatasetSpec from_json(const nlohmann::json& j);
};

struct Samples {
  Matrix points;            // n x dim
  std::vector<int> labels;  // empty for unlabeled kinds
};

/// Low-dimensional data distributions. Checkerboard and ring-pair are 2-D
/// only; mixtures and labeled clusters support any dimension >= 1.
class SyntheticDataset {
 public:
  explicit SyntheticDataset(DatasetSpec spec);

  const DatasetSpec& spec() const noexcept { return spec_; }
  Eigen::Index dim() const noexcept { return spec_.dim; }
  bool labeled() const noexcept;
  int num_classes() const noexcept;
  const std::vector<Vector>& means() const noexcept { return means_; }

  Samples sample(Eigen::Index n, std::mt19937_64& rng) const;
  /// Identical output for identical (n, seed).
  Samples sample(Eigen::Index n, std::uint64_t seed) const;

 private:
  DatasetSpec spec_;
  std::vector<Vector> means_;
};

/// n x dim standard normal draws (the noise source).
Matrix standard_normal(Eigen::Index n, Eigen::Index dim, std::mt19937_64& rng);

}  // namespace rectflow
