#pragma once

#include <cstdint>
#include <vector>

#include "rectflow/autodiff.hpp"
#include "rectflow/dataset.hpp"
#include "rectflow/mlp.hpp"

namespace rectflow {

/// A velocity field v(z, t) recordable on a tape. Rows of `z` are batch
/// elements; `times` holds one time per row.
class VelocityModel {
 public:
  virtual ~VelocityModel() = default;

  virtual Eigen::Index dim() const = 0;
  virtual ad::Var build(ad::Tape& tape, ad::Var z, const Vector& times) const = 0;
  /// Parameter version of the underlying model (0 for analytic fields).
  virtual std::uint64_t version() const { return 0; }

  Matrix evaluate(const Matrix& z, const Vector& times) const;
  Matrix evaluate(const Matrix& z, double t) const;
  Vector evaluate(const Vector& z, double t) const;
};

/// v(z, t) = c everywhere: the ideal straight flow.
class ConstantVelocity final : public VelocityModel {
 public:
  explicit ConstantVelocity(Vector velocity) : velocity_(std::move(velocity)) {}
  Eigen::Index dim() const override { return velocity_.size(); }
  ad::Var build(ad::Tape& tape, ad::Var z, const Vector& times) const override;
  const Vector& velocity() const noexcept { return velocity_; }

 private:
  Vector velocity_;
};

/// v(z, t) = A z + b, independent of t.
class LinearVelocity final : public VelocityModel {
 public:
  explicit LinearVelocity(Matrix a) : a_(std::move(a)), b_(Vector::Zero(a_.rows())) {}
  LinearVelocity(Matrix a, Vector b) : a_(std::move(a)), b_(std::move(b)) {}
  Eigen::Index dim() const override { return a_.rows(); }
  ad::Var build(ad::Tape& tape, ad::Var z, const Vector& times) const override;
  const Matrix& matrix() const noexcept { return a_; }

 private:
  Matrix a_;
  Vector b_;
};

struct FieldArchitecture {
  Eigen::Index state_dim = 2;
  std::vector<Eigen::Index> hidden{128, 128, 128};
  Eigen::Index time_features = 16;
  Activation activation = Activation::Tanh;

  MlpArchitecture mlp() const;
  nlohmann::json to_json() const;
  static FieldArchitecture from_json(const nlohmann::json& j);
};

/// Trainable MLP velocity over [z, sinusoidal(t)].
class VelocityField final : public VelocityModel {
 public:
  VelocityField(FieldArchitecture arch, std::uint64_t seed);
  VelocityField(FieldArchitecture arch, ParameterStore params);

  Eigen::Index dim() const override { return arch_.state_dim; }
  ad::Var build(ad::Tape& tape, ad::Var z, const Vector& times) const override;
  ad::Var build(ad::Tape& tape, ad::Var z, const Vector& times, bool trainable) const;
  std::uint64_t version() const override { return mlp_.parameters().version(); }

  const FieldArchitecture& architecture() const noexcept { return arch_; }
  const ParameterStore& parameters() const noexcept { return mlp_.parameters(); }
  ParameterStore& parameters() noexcept { return mlp_.parameters(); }
  bool frozen() const noexcept { return mlp_.parameters().frozen(); }
  void freeze() noexcept { mlp_.parameters().freeze(); }
  /// Unfrozen copy sharing nothing with this field.
  VelocityField thawed_copy() const;

 private:
  FieldArchitecture arch_;
  TimeEmbedding embedding_;
  Mlp mlp_;
};

struct TrainingConfig {
  Eigen::Index batch_size = 256;
  long steps = 2000;
  double learning_rate = 0.01;
  double momentum = 0.9;
  /// Global gradient-norm clip; 0 disables clipping.
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  /// Size of the fixed batch used for initial/final loss.
  Eigen::Index eval_batch = 2048;

  void validate() const;
};

struct TrainingResult {
  VelocityField field;
  std::vector<double> loss_series;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

/// t * z1 + (1 - t) * z0.
Vector interpolate(const Vector& z0, const Vector& z1, double t);
/// Row-wise interpolation with one time per row.
Matrix interpolate(const Matrix& z0, const Matrix& z1, const Vector& t);

struct LossAndGradient {
  double loss = 0.0;
  std::vector<Matrix> gradients;
};

/// mean_i || (z1_i - z0_i) - v(z_t_i, t_i) ||^2 and its parameter gradient.
LossAndGradient flow_matching_loss(const VelocityField& field, const Matrix& z0, const Matrix& z1, const Vector& t,
                                   bool with_gradient = true);

/// Flow matching on (standard normal, dataset) pairs. The returned field is
/// frozen. Non-finite losses raise TrainingError carrying the step index.
TrainingResult train_flow(const SyntheticDataset& dataset, const FieldArchitecture& arch,
                          const TrainingConfig& config);

struct ReflowConfig {
  TrainingConfig training;
  Eigen::Index pairs = 4096;
  int sampling_steps = 100;
};

/// One reflow round: couples fresh noise with the field's own Euler
/// endpoints and continues training from the current parameters.
TrainingResult reflow(const VelocityField& field, const ReflowConfig& config);

/// Batched explicit Euler from t_begin to t_end.
Matrix integrate_euler(const VelocityModel& model, Matrix z, double t_begin, double t_end, int steps);

}  // namespace rectflow
