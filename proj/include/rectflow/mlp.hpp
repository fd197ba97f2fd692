#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rectflow/autodiff.hpp"

namespace rectflow {

enum class Activation { Tanh, Relu, Softplus };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct MlpArchitecture {
  Eigen::Index input_dim = 0;
  std::vector<Eigen::Index> hidden;
  Eigen::Index output_dim = 0;
  Activation activation = Activation::Tanh;

  bool operator==(const MlpArchitecture&) const = default;
};

/// Fully connected network; parameters are named W0, b0, W1, b1, ...
/// with W_l of shape (out x in) and b_l of shape (out x 1).
class Mlp {
 public:
  Mlp() = default;
  /// Glorot-uniform weights, zero biases, drawn from a seeded engine.
  Mlp(MlpArchitecture arch, std::uint64_t seed);
  /// Adopts existing parameters; shapes must match `arch`.
  Mlp(MlpArchitecture arch, ParameterStore params);

  const MlpArchitecture& architecture() const noexcept { return arch_; }
  const ParameterStore& parameters() const noexcept { return params_; }
  ParameterStore& parameters() noexcept { return params_; }

  /// Records the network on `tape`. With `trainable` the weights become
  /// differentiable leaves; otherwise they are constants.
  ad::Var build(ad::Tape& tape, ad::Var x, bool trainable = false) const;

  Matrix evaluate(const Matrix& x) const;

  static std::vector<ParameterSpec> parameter_specs(const MlpArchitecture& arch);

 private:
  MlpArchitecture arch_;
  ParameterStore params_;
};

/// Sinusoidal features of a scalar time: [sin(w_j t), cos(w_j t)] for
/// width/2 frequencies w_j geometrically spaced between 1 and 32.
class TimeEmbedding {
 public:
  TimeEmbedding() = default;
  explicit TimeEmbedding(Eigen::Index width);

  Eigen::Index width() const noexcept { return width_; }
  /// One row of features per entry of `times`.
  Matrix features(const Vector& times) const;

 private:
  Eigen::Index width_ = 0;
  Vector frequencies_;
};

}  // namespace rectflow
