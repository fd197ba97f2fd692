#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace rectflow {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ParameterSpec {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
};

/// Named dense arrays with fixed shapes. Every mutation bumps `version()`;
/// once frozen the store is read-only and may be shared across threads.
class ParameterStore {
 public:
  ParameterStore() = default;
  explicit ParameterStore(std::vector<ParameterSpec> specs);

  std::size_t size() const noexcept { return arrays_.size(); }
  const std::string& name(std::size_t i) const { return specs_.at(i).name; }
  const ParameterSpec& spec(std::size_t i) const { return specs_.at(i); }
  const Matrix& array(std::size_t i) const { return arrays_.at(i); }
  std::size_t index_of(const std::string& name) const;

  /// Sum of all array sizes.
  Eigen::Index parameter_count() const noexcept;

  std::uint64_t version() const noexcept { return version_; }
  bool frozen() const noexcept { return frozen_; }
  void freeze() noexcept { frozen_ = true; }
  /// Returns an unfrozen copy with the same values and version.
  ParameterStore thawed_copy() const;

  void set(std::size_t i, const Matrix& value);
  /// params[i] += scale * delta[i] for every array, one version bump.
  void add_scaled(std::span<const Matrix> delta, double scale);

  Vector flatten() const;
  void assign_flat(const Vector& flat);

  /// Zero-filled arrays matching every shape.
  std::vector<Matrix> zeros_like() const;

 private:
  void require_mutable() const;

  std::vector<ParameterSpec> specs_;
  std::vector<Matrix> arrays_;
  std::uint64_t version_ = 0;
  bool frozen_ = false;
};

}  // namespace rectflow
