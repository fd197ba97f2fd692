#include "rectflow/mlp.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "rectflow/error.hpp"

namespace rectflow {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Softplus: return "softplus";
  }
  return "tanh";
}

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  if (name == "softplus") return Activation::Softplus;
  throw ConfigError(fmt::format("unknown activation '{}'", name));
}

std::vector<ParameterSpec> Mlp::parameter_specs(const MlpArchitecture& arch) {
  if (arch.input_dim <= 0 || arch.output_dim <= 0) throw DimensionError("MLP input/output dims must be positive");
  std::vector<ParameterSpec> specs;
  Eigen::Index in = arch.input_dim;
  std::vector<Eigen::Index> widths = arch.hidden;
  widths.push_back(arch.output_dim);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    if (widths[l] <= 0) throw DimensionError("MLP layer widths must be positive");
    specs.push_back({fmt::format("W{}", l), widths[l], in});
    specs.push_back({fmt::format("b{}", l), widths[l], 1});
    in = widths[l];
  }
  return specs;
}

Mlp::Mlp(MlpArchitecture arch, std::uint64_t seed) : arch_(std::move(arch)), params_(parameter_specs(arch_)) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < params_.size(); i += 2) {
    const auto& s = params_.spec(i);
    const double limit = std::sqrt(6.0 / static_cast<double>(s.rows + s.cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix w(s.rows, s.cols);
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = dist(rng);
    }
    params_.set(i, w);
  }
}

Mlp::Mlp(MlpArchitecture arch, ParameterStore params) : arch_(std::move(arch)), params_(std::move(params)) {
  const auto specs = parameter_specs(arch_);
  if (specs.size() != params_.size()) throw DimensionError("parameter store does not match MLP architecture");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = params_.spec(i);
    if (s.rows != specs[i].rows || s.cols != specs[i].cols) {
      throw DimensionError(fmt::format("parameter {} shape mismatch for MLP architecture", i));
    }
  }
}

ad::Var Mlp::build(ad::Tape& tape, ad::Var x, bool trainable) const {
  if (x.cols() != arch_.input_dim) {
    throw DimensionError(fmt::format("MLP expects {} input features, got {}", arch_.input_dim, x.cols()));
  }
  const std::size_t layers = params_.size() / 2;
  ad::Var h = x;
  for (std::size_t l = 0; l < layers; ++l) {
    ad::Var w = tape.parameter(params_, 2 * l, trainable);
    ad::Var b = tape.parameter(params_, 2 * l + 1, trainable);
    h = tape.affine(h, w, b);
    if (l + 1 < layers) {
      switch (arch_.activation) {
        case Activation::Tanh: h = tape.tanh(h); break;
        case Activation::Relu: h = tape.relu(h); break;
        case Activation::Softplus: h = tape.softplus(h); break;
      }
    }
  }
  return h;
}

Matrix Mlp::evaluate(const Matrix& x) const {
  ad::Tape tape;
  return build(tape, tape.constant(x)).value();
}

TimeEmbedding::TimeEmbedding(Eigen::Index width) : width_(width) {
  if (width < 0 || width % 2 != 0) {
    throw DomainError(fmt::format("time embedding width must be even and non-negative, got {}", width));
  }
  const Eigen::Index half = width / 2;
  frequencies_.resize(half);
  for (Eigen::Index j = 0; j < half; ++j) {
    const double frac = half > 1 ? static_cast<double>(j) / static_cast<double>(half - 1) : 0.0;
    frequencies_(j) = std::pow(32.0, frac);
  }
}

Matrix TimeEmbedding::features(const Vector& times) const {
  Matrix out(times.size(), width_);
  const Eigen::Index half = width_ / 2;
  for (Eigen::Index r = 0; r < times.size(); ++r) {
    for (Eigen::Index j = 0; j < half; ++j) {
      out(r, j) = std::sin(frequencies_(j) * times(r));
      out(r, half + j) = std::cos(frequencies_(j) * times(r));
    }
  }
  return out;
}

}  // namespace rectflow
