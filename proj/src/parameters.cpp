#include "rectflow/parameters.hpp"

#include <fmt/format.h>

#include "rectflow/error.hpp"

namespace rectflow {

ParameterStore::ParameterStore(std::vector<ParameterSpec> specs) : specs_(std::move(specs)) {
  arrays_.reserve(specs_.size());
  for (const auto& s : specs_) {
    if (s.rows <= 0 || s.cols <= 0) {
      throw DimensionError(fmt::format("parameter '{}' has non-positive shape {}x{}", s.name, s.rows, s.cols));
    }
    arrays_.push_back(Matrix::Zero(s.rows, s.cols));
  }
}

std::size_t ParameterStore::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    if (specs_[i].name == name) return i;
  }
  throw DomainError(fmt::format("no parameter named '{}'", name));
}

Eigen::Index ParameterStore::parameter_count() const noexcept {
  Eigen::Index n = 0;
  for (const auto& a : arrays_) n += a.size();
  return n;
}

ParameterStore ParameterStore::thawed_copy() const {
  ParameterStore copy = *this;
  copy.frozen_ = false;
  return copy;
}

void ParameterStore::require_mutable() const {
  if (frozen_) throw DomainError("parameter store is frozen");
}

void ParameterStore::set(std::size_t i, const Matrix& value) {
  require_mutable();
  const auto& s = specs_.at(i);
  if (value.rows() != s.rows || value.cols() != s.cols) {
    throw DimensionError(fmt::format("parameter '{}' expects {}x{}, got {}x{}", s.name, s.rows, s.cols,
                                     value.rows(), value.cols()));
  }
  arrays_[i] = value;
  ++version_;
}

void ParameterStore::add_scaled(std::span<const Matrix> delta, double scale) {
  require_mutable();
  if (delta.size() != arrays_.size()) {
    throw DimensionError(fmt::format("update has {} arrays, store has {}", delta.size(), arrays_.size()));
  }
  for (std::size_t i = 0; i < arrays_.size(); ++i) {
    if (delta[i].rows() != arrays_[i].rows() || delta[i].cols() != arrays_[i].cols()) {
      throw DimensionError(fmt::format("update for '{}' has wrong shape", specs_[i].name));
    }
  }
  for (std::size_t i = 0; i < arrays_.size(); ++i) arrays_[i] += scale * delta[i];
  ++version_;
}

Vector ParameterStore::flatten() const {
  Vector flat(parameter_count());
  Eigen::Index offset = 0;
  for (const auto& a : arrays_) {
    flat.segment(offset, a.size()) = a.reshaped();
    offset += a.size();
  }
  return flat;
}

void ParameterStore::assign_flat(const Vector& flat) {
  require_mutable();
  if (flat.size() != parameter_count()) {
    throw DimensionError(fmt::format("flat parameter vector has {} entries, expected {}", flat.size(),
                                     parameter_count()));
  }
  Eigen::Index offset = 0;
  for (auto& a : arrays_) {
    a.reshaped() = flat.segment(offset, a.size());
    offset += a.size();
  }
  ++version_;
}

std::vector<Matrix> ParameterStore::zeros_like() const {
  std::vector<Matrix> out;
  out.reserve(arrays_.size());
  for (const auto& a : arrays_) out.push_back(Matrix::Zero(a.rows(), a.cols()));
  return out;
}

}  // namespace rectflow
