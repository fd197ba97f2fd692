#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rectflow/autodiff.hpp"
#include "rectflow/dataset.hpp"
#include "rectflow/flow.hpp"
#include "rectflow/mlp.hpp"

namespace rectflow {

enum class ObjectiveKind { AnalyticGaussian, CleanClassifier, FeatureSimilarity, Composite, Quadratic };

std::string to_string(ObjectiveKind kind);

/// Differentiable scalar score of an endpoint (a log-likelihood or a
/// similarity). `build` returns one score per row of `z`.
class Objective {
 public:
  virtual ~Objective() = default;

  virtual Eigen::Index dim() const = 0;
  virtual ObjectiveKind kind() const = 0;
  virtual ad::Var build(ad::Tape& tape, ad::Var z) const = 0;
  /// Kind plus parameters, for run records.
  virtual nlohmann::json descriptor() const = 0;

  double value(const Vector& z) const;
  Vector gradient(const Vector& z) const;
  std::pair<double, Vector> value_and_gradient(const Vector& z) const;
  /// One score per row.
  Vector values(const Matrix& z) const;
};

/// Score of a state at time t, as required by guidance along the ODE.
class NoiseAwareObjective {
 public:
  virtual ~NoiseAwareObjective() = default;

  virtual Eigen::Index dim() const = 0;
  virtual ad::Var build(ad::Tape& tape, ad::Var z, const Vector& times) const = 0;
  virtual nlohmann::json descriptor() const = 0;

  double value(const Vector& z, double t) const;
  Vector gradient(const Vector& z, double t) const;
};

/// Uses the same objective at every time.
class TimeIndependentObjective final : public NoiseAwareObjective {
 public:
  explicit TimeIndependentObjective(std::shared_ptr<const Objective> inner) : inner_(std::move(inner)) {}
  Eigen::Index dim() const override { return inner_->dim(); }
  ad::Var build(ad::Tape& tape, ad::Var z, const Vector& times) const override;
  nlohmann::json descriptor() const override;

 private:
  std::shared_ptr<const Objective> inner_;
};

/// -(scale / 2) ||z - mean||^2.
class GaussianObjective final : public Objective {
 public:
  GaussianObjective(Vector mean, double scale);
  Eigen::Index dim() const override { return mean_.size(); }
  ObjectiveKind kind() const override { return ObjectiveKind::AnalyticGaussian; }
  ad::Var build(ad::Tape& tape, ad::Var z) const override;
  nlohmann::json descriptor() const override;

  const Vector& mean() const noexcept { return mean_; }
  double scale() const noexcept { return scale_; }

 private:
  Vector mean_;
  double scale_;
};

/// (lipschitz / 2) ||z||^2, whose gradient is z -> lipschitz * z.
class QuadraticObjective final : public Objective {
 public:
  QuadraticObjective(Eigen::Index dim, double lipschitz);
  Eigen::Index dim() const override { return dim_; }
  ObjectiveKind kind() const override { return ObjectiveKind::Quadratic; }
  ad::Var build(ad::Tape& tape, ad::Var z) const override;
  nlohmann::json descriptor() const override;

 private:
  Eigen::Index dim_;
  double lipschitz_;
};

/// A velocity at t = 1 and an objective gradient that are the same linear
/// map z -> lipschitz * z.
struct DivergentPair {
  std::shared_ptr<const LinearVelocity> velocity;
  std::shared_ptr<const QuadraticObjective> objective;
  double lipschitz = 0.0;
};

/// Throws DomainError unless lipschitz > 1.
DivergentPair divergent_pair(double lipschitz, Eigen::Index dim = 1);

// ---------------------------------------------------------------------------
// Classifiers

struct ClassifierArchitecture {
  Eigen::Index input_dim = 2;
  int num_classes = 2;
  std::vector<Eigen::Index> hidden{64, 64};
  /// 0 for a clean classifier; otherwise the width of the time embedding
  /// appended to the input.
  Eigen::Index time_features = 0;
  Activation activation = Activation::Tanh;

  MlpArchitecture mlp() const;
  nlohmann::json to_json() const;
  static ClassifierArchitecture from_json(const nlohmann::json& j);
};

class Classifier {
 public:
  Classifier(ClassifierArchitecture arch, std::uint64_t seed);
  Classifier(ClassifierArchitecture arch, ParameterStore params);

  const ClassifierArchitecture& architecture() const noexcept { return arch_; }
  bool time_aware() const noexcept { return arch_.time_features > 0; }
  const ParameterStore& parameters() const noexcept { return mlp_.parameters(); }
  ParameterStore& parameters() noexcept { return mlp_.parameters(); }
  void freeze() noexcept { mlp_.parameters().freeze(); }

  /// rows x num_classes logits. `times` is ignored by clean classifiers.
  ad::Var logits(ad::Tape& tape, ad::Var z, const Vector& times, bool trainable = false) const;
  Matrix logits(const Matrix& z, const Vector& times) const;
  std::vector<int> predict(const Matrix& z, const Vector& times) const;
  double accuracy(const Matrix& z, const std::vector<int>& labels, const Vector& times) const;

 private:
  ClassifierArchitecture arch_;
  TimeEmbedding embedding_;
  Mlp mlp_;
};

/// log softmax(logits)[target] of a clean classifier.
class ClassifierObjective final : public Objective {
 public:
  ClassifierObjective(std::shared_ptr<const Classifier> classifier, int target_class);
  Eigen::Index dim() const override { return classifier_->architecture().input_dim; }
  ObjectiveKind kind() const override { return ObjectiveKind::CleanClassifier; }
  ad::Var build(ad::Tape& tape, ad::Var z) const override;
  nlohmann::json descriptor() const override;

  int target_class() const noexcept { return target_; }
  /// Checkpoint path echoed in the descriptor.
  void set_source(std::string source) { source_ = std::move(source); }

 private:
  std::shared_ptr<const Classifier> classifier_;
  int target_;
  std::string source_;
};

/// log softmax(logits(z, t))[target] of a time-aware classifier.
class NoiseAwareClassifierObjective final : public NoiseAwareObjective {
 public:
  NoiseAwareClassifierObjective(std::shared_ptr<const Classifier> classifier, int target_class);
  Eigen::Index dim() const override { return classifier_->architecture().input_dim; }
  ad::Var build(ad::Tape& tape, ad::Var z, const Vector& times) const override;
  nlohmann::json descriptor() const override;

 private:
  std::shared_ptr<const Classifier> classifier_;
  int target_;
};

struct ClassifierTrainingConfig {
  std::vector<Eigen::Index> hidden{64, 64};
  /// Used by the noise-aware classifier only.
  Eigen::Index time_features = 8;
  Eigen::Index batch_size = 256;
  long steps = 1500;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  Eigen::Index heldout = 2048;

  void validate() const;
};

struct ClassifierTrainingResult {
  std::shared_ptr<Classifier> classifier;
  std::vector<double> loss_series;
  /// Clean held-out accuracy.
  double heldout_accuracy = 0.0;
  /// (t, held-out accuracy on interpolants at t), for t = 1, .75, .5, .25, 0.
  /// Empty for clean classifiers.
  std::vector<std::pair<double, double>> accuracy_curve;
};

/// Cross-entropy training on clean samples. The classifier is frozen.
/// Throws DomainError for unlabeled or single-class data, TrainingError on
/// divergence.
ClassifierTrainingResult train_clean_classifier(const SyntheticDataset& dataset,
                                                const ClassifierTrainingConfig& config);

/// Cross-entropy on interpolants t z1 + (1 - t) z0 with t uniform on
/// [0, 1], z0 standard normal and the label of z1.
ClassifierTrainingResult train_noise_aware_classifier(const SyntheticDataset& dataset,
                                                      const ClassifierTrainingConfig& config);

// ---------------------------------------------------------------------------
// Feature similarity

/// Maps states to unit-norm feature rows: either the identity or a small
/// MLP trunk trained through a classification head.
class FeatureEncoder {
 public:
  static FeatureEncoder identity(Eigen::Index dim);
  FeatureEncoder(Mlp trunk);

  Eigen::Index dim() const noexcept { return dim_; }
  bool is_identity() const noexcept { return !trunk_; }
  const Mlp* trunk() const noexcept { return trunk_.get(); }
  /// Throws DomainError when a feature row has zero norm.
  ad::Var build(ad::Tape& tape, ad::Var z) const;
  Matrix encode(const Matrix& z) const;

 private:
  FeatureEncoder() = default;
  Eigen::Index dim_ = 0;
  std::shared_ptr<const Mlp> trunk_;
};

struct EncoderTrainingConfig {
  std::vector<Eigen::Index> hidden{32, 32};
  Eigen::Index feature_dim = 8;
  Eigen::Index batch_size = 256;
  long steps = 800;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

/// Trains trunk + linear head on labeled data and keeps the frozen trunk.
FeatureEncoder train_feature_encoder(const SyntheticDataset& dataset, const EncoderTrainingConfig& config);

/// Cosine similarity between f(z) and f(reference).
class FeatureSimilarityObjective final : public Objective {
 public:
  FeatureSimilarityObjective(FeatureEncoder encoder, Vector reference);
  Eigen::Index dim() const override { return reference_.size(); }
  ObjectiveKind kind() const override { return ObjectiveKind::FeatureSimilarity; }
  ad::Var build(ad::Tape& tape, ad::Var z) const override;
  nlohmann::json descriptor() const override;

 private:
  FeatureEncoder encoder_;
  Vector reference_;
  Matrix reference_feature_;
};

inline constexpr double kDefaultL1Coefficient = 10.0;

/// primary(z) - coeff * ||z - reference||_1. The subgradient of |x| at 0 is 0.
class CompositeObjective final : public Objective {
 public:
  CompositeObjective(std::shared_ptr<const Objective> primary, Vector reference,
                     double coeff = kDefaultL1Coefficient);
  Eigen::Index dim() const override { return reference_.size(); }
  ObjectiveKind kind() const override { return ObjectiveKind::Composite; }
  ad::Var build(ad::Tape& tape, ad::Var z) const override;
  nlohmann::json descriptor() const override;

 private:
  std::shared_ptr<const Objective> primary_;
  Vector reference_;
  double coeff_;
};

}  // namespace rectflow
