#include "rectflow/objectives.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "rectflow/error.hpp"
#include "rectflow/optimizer.hpp"

namespace rectflow {

std::string to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::AnalyticGaussian: return "analytic-gaussian";
    case ObjectiveKind::CleanClassifier: return "clean-classifier";
    case ObjectiveKind::FeatureSimilarity: return "feature-similarity";
    case ObjectiveKind::Composite: return "composite";
    case ObjectiveKind::Quadratic: return "quadratic";
  }
  return "unknown";
}

namespace {

Matrix as_row(const Vector& v) { return v.transpose(); }

void require_dim(Eigen::Index expected, Eigen::Index got) {
  if (expected != got) throw DimensionError(fmt::format("objective expects dimension {}, got {}", expected, got));
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Matrix one_hot(const std::vector<int>& labels, int classes) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) m(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  return m;
}

// log softmax(logits)[target] per row.
ad::Var log_softmax_at(ad::Var logits, int target) {
  return logits.tape->slice(logits, target, 1) - ad::log_sum_exp(logits);
}

// mean cross-entropy against one-hot rows.
ad::Var cross_entropy(ad::Var logits, const Matrix& onehot) {
  ad::Tape& tape = *logits.tape;
  ad::Var picked = ad::dot(logits, tape.constant(onehot));
  return (1.0 / static_cast<double>(onehot.rows())) * ad::sum(ad::log_sum_exp(logits) - picked);
}

}  // namespace

double Objective::value(const Vector& z) const {
  require_dim(dim(), z.size());
  ad::Tape tape;
  return build(tape, tape.constant(as_row(z))).value()(0, 0);
}

Vector Objective::gradient(const Vector& z) const { return value_and_gradient(z).second; }

std::pair<double, Vector> Objective::value_and_gradient(const Vector& z) const {
  require_dim(dim(), z.size());
  ad::Tape tape;
  ad::Var x = tape.input(as_row(z));
  ad::Var out = build(tape, x);
  const double v = out.value()(0, 0);
  if (!std::isfinite(v)) throw NonFiniteError("objective value is non-finite");
  return {v, tape.backward(out, Matrix::Ones(1, 1)).wrt(x).row(0).transpose()};
}

Vector Objective::values(const Matrix& z) const {
  require_dim(dim(), z.cols());
  ad::Tape tape;
  return build(tape, tape.constant(z)).value().col(0);
}

double NoiseAwareObjective::value(const Vector& z, double t) const {
  require_dim(dim(), z.size());
  ad::Tape tape;
  return build(tape, tape.constant(as_row(z)), Vector::Constant(1, t)).value()(0, 0);
}

Vector NoiseAwareObjective::gradient(const Vector& z, double t) const {
  require_dim(dim(), z.size());
  ad::Tape tape;
  ad::Var x = tape.input(as_row(z));
  ad::Var out = build(tape, x, Vector::Constant(1, t));
  return tape.backward(out, Matrix::Ones(1, 1)).wrt(x).row(0).transpose();
}

ad::Var TimeIndependentObjective::build(ad::Tape& tape, ad::Var z, const Vector&) const {
  return inner_->build(tape, z);
}

nlohmann::json TimeIndependentObjective::descriptor() const {
  return {{"kind", "time-independent"}, {"inner", inner_->descriptor()}};
}

GaussianObjective::GaussianObjective(Vector mean, double scale) : mean_(std::move(mean)), scale_(scale) {
  if (!(scale_ > 0.0)) throw DomainError(fmt::format("gaussian objective scale must be positive, got {}", scale_));
  if (mean_.size() < 1) throw DimensionError("gaussian objective needs a non-empty mean");
}

ad::Var GaussianObjective::build(ad::Tape& tape, ad::Var z) const {
  require_dim(dim(), z.cols());
  ad::Var diff = z - tape.constant(as_row(mean_).replicate(z.rows(), 1));
  return (-0.5 * scale_) * ad::squared_norm(diff);
}

nlohmann::json GaussianObjective::descriptor() const {
  return {{"kind", to_string(kind())}, {"mean", to_std(mean_)}, {"scale", scale_}};
}

QuadraticObjective::QuadraticObjective(Eigen::Index dim, double lipschitz) : dim_(dim), lipschitz_(lipschitz) {
  if (dim_ < 1) throw DimensionError("quadratic objective needs dimension >= 1");
}

ad::Var QuadraticObjective::build(ad::Tape&, ad::Var z) const {
  require_dim(dim_, z.cols());
  return (0.5 * lipschitz_) * ad::squared_norm(z);
}

nlohmann::json QuadraticObjective::descriptor() const {
  return {{"kind", to_string(kind())}, {"lipschitz", lipschitz_}};
}

DivergentPair divergent_pair(double lipschitz, Eigen::Index dim) {
  if (!(lipschitz > 1.0)) throw DomainError(fmt::format("divergent pair needs lipschitz > 1, got {}", lipschitz));
  DivergentPair p;
  p.velocity = std::make_shared<LinearVelocity>(lipschitz * Matrix::Identity(dim, dim));
  p.objective = std::make_shared<QuadraticObjective>(dim, lipschitz);
  p.lipschitz = lipschitz;
  return p;
}

// ---------------------------------------------------------------------------
// Classifiers

MlpArchitecture ClassifierArchitecture::mlp() const {
  return MlpArchitecture{input_dim + time_features, hidden, num_classes, activation};
}

nlohmann::json ClassifierArchitecture::to_json() const {
  return {{"input_dim", input_dim},
          {"num_classes", num_classes},
          {"hidden", hidden},
          {"time_features", time_features},
          {"activation", to_string(activation)}};
}

ClassifierArchitecture ClassifierArchitecture::from_json(const nlohmann::json& j) {
  ClassifierArchitecture a;
  a.input_dim = j.at("input_dim").get<Eigen::Index>();
  a.num_classes = j.at("num_classes").get<int>();
  a.hidden = j.at("hidden").get<std::vector<Eigen::Index>>();
  a.time_features = j.at("time_features").get<Eigen::Index>();
  a.activation = activation_from_string(j.at("activation").get<std::string>());
  return a;
}

Classifier::Classifier(ClassifierArchitecture arch, std::uint64_t seed)
    : arch_(std::move(arch)), embedding_(arch_.time_features), mlp_(arch_.mlp(), seed) {
  if (arch_.num_classes < 2) throw DomainError("a classifier needs at least two classes");
}

Classifier::Classifier(ClassifierArchitecture arch, ParameterStore params)
    : arch_(std::move(arch)), embedding_(arch_.time_features), mlp_(arch_.mlp(), std::move(params)) {}

ad::Var Classifier::logits(ad::Tape& tape, ad::Var z, const Vector& times, bool trainable) const {
  if (z.cols() != arch_.input_dim) {
    throw DimensionError(fmt::format("classifier expects dimension {}, got {}", arch_.input_dim, z.cols()));
  }
  if (!time_aware()) return mlp_.build(tape, z, trainable);
  if (times.size() != z.rows()) throw DimensionError("classifier: one time per row required");
  return mlp_.build(tape, tape.concat(z, tape.constant(embedding_.features(times))), trainable);
}

Matrix Classifier::logits(const Matrix& z, const Vector& times) const {
  ad::Tape tape;
  return logits(tape, tape.constant(z), times).value();
}

std::vector<int> Classifier::predict(const Matrix& z, const Vector& times) const {
  const Matrix l = logits(z, times);
  std::vector<int> out(static_cast<std::size_t>(l.rows()));
  for (Eigen::Index r = 0; r < l.rows(); ++r) {
    Eigen::Index best = 0;
    l.row(r).maxCoeff(&best);
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

double Classifier::accuracy(const Matrix& z, const std::vector<int>& labels, const Vector& times) const {
  if (labels.empty()) return 0.0;
  const auto pred = predict(z, times);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

ClassifierObjective::ClassifierObjective(std::shared_ptr<const Classifier> classifier, int target_class)
    : classifier_(std::move(classifier)), target_(target_class) {
  if (classifier_->time_aware()) throw DomainError("clean classifier objective needs a time-free classifier");
  if (target_ < 0 || target_ >= classifier_->architecture().num_classes) {
    throw DomainError(fmt::format("target class {} out of range", target_));
  }
}

ad::Var ClassifierObjective::build(ad::Tape& tape, ad::Var z) const {
  return log_softmax_at(classifier_->logits(tape, z, Vector()), target_);
}

nlohmann::json ClassifierObjective::descriptor() const {
  nlohmann::json j{{"kind", to_string(kind())},
                   {"target_class", target_},
                   {"architecture", classifier_->architecture().to_json()}};
  if (!source_.empty()) j["checkpoint"] = source_;
  return j;
}

NoiseAwareClassifierObjective::NoiseAwareClassifierObjective(std::shared_ptr<const Classifier> classifier,
                                                             int target_class)
    : classifier_(std::move(classifier)), target_(target_class) {
  if (target_ < 0 || target_ >= classifier_->architecture().num_classes) {
    throw DomainError(fmt::format("target class {} out of range", target_));
  }
}

ad::Var NoiseAwareClassifierObjective::build(ad::Tape& tape, ad::Var z, const Vector& times) const {
  return log_softmax_at(classifier_->logits(tape, z, times), target_);
}

nlohmann::json NoiseAwareClassifierObjective::descriptor() const {
  return {{"kind", "noise-aware-classifier"},
          {"target_class", target_},
          {"architecture", classifier_->architecture().to_json()}};
}

void ClassifierTrainingConfig::validate() const {
  if (batch_size < 1) throw ConfigError("classifier batch_size must be positive");
  if (steps < 0) throw ConfigError("classifier steps must be non-negative");
  if (!(learning_rate > 0.0)) throw ConfigError("classifier learning_rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("classifier momentum must lie in [0, 1)");
  if (heldout < 1) throw ConfigError("classifier heldout must be positive");
}

namespace {

void require_multiclass(const SyntheticDataset& dataset) {
  if (!dataset.labeled()) throw DomainError("classifier training needs a labeled dataset");
  if (dataset.num_classes() < 2) throw DomainError("classifier training needs at least two classes");
}

struct Batch {
  Matrix x;
  Vector t;
  std::vector<int> labels;
};

template <class Draw>
std::vector<double> fit_classifier(Classifier& clf, const ClassifierTrainingConfig& config, Draw&& draw) {
  std::vector<double> losses;
  SgdMomentum opt(clf.parameters(), config.learning_rate, config.momentum, config.clip_norm);
  std::mt19937_64 rng(config.seed);
  const int classes = clf.architecture().num_classes;
  for (long step = 0; step < config.steps; ++step) {
    Batch b = draw(rng);
    ad::Tape tape;
    ad::Var loss = cross_entropy(clf.logits(tape, tape.constant(b.x), b.t, true), one_hot(b.labels, classes));
    const double value = loss.value()(0, 0);
    if (!std::isfinite(value)) throw TrainingError(fmt::format("classifier diverged at step {}", step), step);
    losses.push_back(value);
    opt.step(clf.parameters(), tape.backward(loss, Matrix::Ones(1, 1)).for_store(clf.parameters()));
  }
  return losses;
}

Vector uniform_times(Eigen::Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector t(n);
  for (Eigen::Index i = 0; i < n; ++i) t(i) = u(rng);
  return t;
}

ClassifierTrainingResult run_classifier_training(const SyntheticDataset& dataset,
                                                 const ClassifierTrainingConfig& config, bool noise_aware) {
  config.validate();
  require_multiclass(dataset);
  ClassifierArchitecture arch;
  arch.input_dim = dataset.dim();
  arch.num_classes = dataset.num_classes();
  arch.hidden = config.hidden;
  arch.time_features = noise_aware ? config.time_features : 0;
  if (noise_aware && arch.time_features < 2) throw ConfigError("noise-aware classifier needs time features");

  ClassifierTrainingResult result;
  result.classifier = std::make_shared<Classifier>(arch, config.seed);
  const Eigen::Index d = dataset.dim();
  try {
    result.loss_series = fit_classifier(*result.classifier, config, [&](std::mt19937_64& rng) {
      Samples s = dataset.sample(config.batch_size, rng);
      if (!noise_aware) return Batch{std::move(s.points), Vector(), std::move(s.labels)};
      const Matrix z0 = standard_normal(config.batch_size, d, rng);
      Vector t = uniform_times(config.batch_size, rng);
      return Batch{interpolate(z0, s.points, t), std::move(t), std::move(s.labels)};
    });
  } catch (const NonFiniteError& e) {
    throw TrainingError(fmt::format("classifier training diverged: {}", e.what()), 0);
  }

  std::mt19937_64 held_rng(config.seed ^ 0x4e1d0001ULL);
  const Samples held = dataset.sample(config.heldout, held_rng);
  const Matrix noise = standard_normal(config.heldout, d, held_rng);
  const Classifier& clf = *result.classifier;
  result.heldout_accuracy = clf.accuracy(held.points, held.labels, Vector::Ones(config.heldout));
  if (noise_aware) {
    for (double t : {1.0, 0.75, 0.5, 0.25, 0.0}) {
      const Vector times = Vector::Constant(config.heldout, t);
      result.accuracy_curve.emplace_back(t, clf.accuracy(interpolate(noise, held.points, times), held.labels, times));
    }
  }
  result.classifier->freeze();
  return result;
}

}  // namespace

ClassifierTrainingResult train_clean_classifier(const SyntheticDataset& dataset,
                                                const ClassifierTrainingConfig& config) {
  return run_classifier_training(dataset, config, false);
}

ClassifierTrainingResult train_noise_aware_classifier(const SyntheticDataset& dataset,
                                                      const ClassifierTrainingConfig& config) {
  return run_classifier_training(dataset, config, true);
}

// ---------------------------------------------------------------------------
// Feature similarity

FeatureEncoder FeatureEncoder::identity(Eigen::Index dim) {
  if (dim < 1) throw DimensionError("identity encoder needs dimension >= 1");
  FeatureEncoder e;
  e.dim_ = dim;
  return e;
}

FeatureEncoder::FeatureEncoder(Mlp trunk)
    : dim_(trunk.architecture().input_dim), trunk_(std::make_shared<Mlp>(std::move(trunk))) {}

ad::Var FeatureEncoder::build(ad::Tape& tape, ad::Var z) const {
  if (z.cols() != dim_) throw DimensionError(fmt::format("encoder expects dimension {}, got {}", dim_, z.cols()));
  ad::Var f = trunk_ ? trunk_->build(tape, z) : z;
  ad::Var norm2 = ad::squared_norm(f);
  if ((norm2.value().array() <= 1e-300).any()) throw DomainError("feature vector has zero norm");
  ad::Var inv_norm = tape.constant(Matrix::Ones(f.rows(), 1)) / ad::sqrt(norm2);
  return tape.row_scale(f, inv_norm);
}

Matrix FeatureEncoder::encode(const Matrix& z) const {
  ad::Tape tape;
  return build(tape, tape.constant(z)).value();
}

FeatureEncoder train_feature_encoder(const SyntheticDataset& dataset, const EncoderTrainingConfig& config) {
  require_multiclass(dataset);
  const int classes = dataset.num_classes();
  Mlp trunk(MlpArchitecture{dataset.dim(), config.hidden, config.feature_dim, Activation::Tanh}, config.seed);
  Mlp head(MlpArchitecture{config.feature_dim, {}, classes, Activation::Tanh}, config.seed + 1);
  SgdMomentum opt_trunk(trunk.parameters(), config.learning_rate, config.momentum, 1.0);
  SgdMomentum opt_head(head.parameters(), config.learning_rate, config.momentum, 1.0);
  std::mt19937_64 rng(config.seed);
  for (long step = 0; step < config.steps; ++step) {
    const Samples s = dataset.sample(config.batch_size, rng);
    ad::Tape tape;
    ad::Var feats = trunk.build(tape, tape.constant(s.points), true);
    ad::Var loss = cross_entropy(head.build(tape, feats, true), one_hot(s.labels, classes));
    if (!std::isfinite(loss.value()(0, 0))) {
      throw TrainingError(fmt::format("encoder training diverged at step {}", step), step);
    }
    const ad::Gradients g = tape.backward(loss, Matrix::Ones(1, 1));
    opt_trunk.step(trunk.parameters(), g.for_store(trunk.parameters()));
    opt_head.step(head.parameters(), g.for_store(head.parameters()));
  }
  trunk.parameters().freeze();
  return FeatureEncoder(std::move(trunk));
}

FeatureSimilarityObjective::FeatureSimilarityObjective(FeatureEncoder encoder, Vector reference)
    : encoder_(std::move(encoder)), reference_(std::move(reference)) {
  require_dim(encoder_.dim(), reference_.size());
  if (encoder_.trunk() && !encoder_.trunk()->parameters().frozen()) {
    throw DomainError("feature similarity needs a frozen encoder");
  }
  reference_feature_ = encoder_.encode(as_row(reference_));
}

ad::Var FeatureSimilarityObjective::build(ad::Tape& tape, ad::Var z) const {
  ad::Var fz = encoder_.build(tape, z);
  return ad::dot(fz, tape.constant(reference_feature_.replicate(z.rows(), 1)));
}

nlohmann::json FeatureSimilarityObjective::descriptor() const {
  return {{"kind", to_string(kind())},
          {"encoder", encoder_.is_identity() ? "identity" : "mlp"},
          {"reference", to_std(reference_)}};
}

CompositeObjective::CompositeObjective(std::shared_ptr<const Objective> primary, Vector reference, double coeff)
    : primary_(std::move(primary)), reference_(std::move(reference)), coeff_(coeff) {
  if (!(coeff_ >= 0.0)) throw DomainError("l1 coefficient must be non-negative");
  require_dim(primary_->dim(), reference_.size());
}

ad::Var CompositeObjective::build(ad::Tape& tape, ad::Var z) const {
  ad::Var primary = primary_->build(tape, z);
  if (coeff_ == 0.0) return primary;
  ad::Var dev = ad::abs(z - tape.constant(as_row(reference_).replicate(z.rows(), 1)));
  ad::Var l1 = ad::dot(dev, tape.constant(Matrix::Ones(z.rows(), z.cols())));
  return primary - coeff_ * l1;
}

nlohmann::json CompositeObjective::descriptor() const {
  return {{"kind", to_string(kind())},
          {"primary", primary_->descriptor()},
          {"l1_reference", to_std(reference_)},
          {"l1_coeff", coeff_}};
}

}  // namespace rectflow
