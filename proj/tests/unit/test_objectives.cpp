#include <doctest.h>

#include <random>

#include "fixtures.hpp"
#include "rectflow/error.hpp"
#include "rectflow/objectives.hpp"

using namespace rectflow;

namespace {

// Regression pin: 0.862 measured on the cached clusters classifiers.
constexpr double kNoiseAwareGradientCosine = 0.80;

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

Vector random_vector(Eigen::Index n, double scale, std::mt19937_64& rng) {
  return scale * standard_normal(1, n, rng).row(0).transpose();
}

class ZeroObjective final : public Objective {
 public:
  explicit ZeroObjective(Eigen::Index d) : d_(d) {}
  Eigen::Index dim() const override { return d_; }
  ObjectiveKind kind() const override { return ObjectiveKind::AnalyticGaussian; }
  ad::Var build(ad::Tape& tape, ad::Var z) const override { return tape.constant(Matrix::Zero(z.rows(), 1)); }
  nlohmann::json descriptor() const override { return {{"kind", "zero"}}; }

 private:
  Eigen::Index d_;
};

double worst_grad_error(const Objective& obj, std::mt19937_64& rng, double spread, int probes = 20) {
  double worst = 0.0;
  for (int i = 0; i < probes; ++i) {
    const Vector z = random_vector(obj.dim(), spread, rng);
    const auto r = ad::grad_check([&](const Vector& x) { return obj.value(x); },
                                  [&](const Vector& x) { return obj.gradient(x); }, z, 1e-5);
    worst = std::max(worst, r.max_relative_error);
  }
  return worst;
}

}  // namespace

TEST_CASE("gaussian objective") {
  const GaussianObjective g(vec({1, 1}), 1.0);
  CHECK(g.value(Vector::Zero(2)) == -1.0);
  CHECK(g.gradient(Vector::Zero(2)) == vec({1, 1}));
  CHECK(g.gradient(vec({1, 1})).norm() == 0.0);
  const GaussianObjective steep(vec({0.5, -2}), 3.5);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10; ++i) {
    const Vector a = random_vector(2, 2, rng), b = random_vector(2, 2, rng);
    CHECK((steep.gradient(a) - steep.gradient(b)).norm() / (a - b).norm() == doctest::Approx(3.5).epsilon(1e-12));
  }
  CHECK(worst_grad_error(steep, rng, 2.0) < 1e-5);
  CHECK_THROWS_AS(GaussianObjective(vec({1}), 0.0), DomainError);
  CHECK(g.descriptor().at("kind") == "analytic-gaussian");
}

TEST_CASE("divergent pair construction") {
  const DivergentPair p = divergent_pair(2.0);
  CHECK(p.velocity->evaluate(vec({3}), 1.0)(0) == 6.0);
  CHECK(p.objective->gradient(vec({3}))(0) == 6.0);
  CHECK(p.lipschitz == 2.0);
  CHECK_THROWS_AS(divergent_pair(1.0), DomainError);
  CHECK_THROWS_AS(divergent_pair(0.5), DomainError);
  // The fixed-point map z -> z0 + v(z, 1) + s g(z) has slope 2 + 2s.
  for (double s : {0.01, 0.1, 0.5, 1.0}) {
    const double a = 0.3, b = -1.1;
    const auto map = [&](double z) {
      return 1.0 + p.velocity->evaluate(vec({z}), 1.0)(0) + s * p.objective->gradient(vec({z}))(0);
    };
    CHECK((map(a) - map(b)) / (a - b) == doctest::Approx(2.0 + 2.0 * s).epsilon(1e-12));
    CHECK(2.0 + 2.0 * s > 1.0);
  }
}

TEST_CASE("clean classifier on two separated Gaussians") {
  DatasetSpec spec;
  spec.kind = DatasetKind::LabeledClusters;
  spec.components = 2;
  spec.seed = 5;
  ClassifierTrainingConfig cfg;
  cfg.steps = 300;
  cfg.seed = 5;
  const auto r = train_clean_classifier(SyntheticDataset(spec), cfg);
  CHECK(r.heldout_accuracy > 0.95);
  CHECK(r.accuracy_curve.empty());
  CHECK(r.classifier->parameters().frozen());
}

TEST_CASE("classifier training rejects unlabeled data") {
  DatasetSpec spec;
  spec.kind = DatasetKind::GaussianMixture;
  spec.components = 1;
  ClassifierTrainingConfig cfg;
  cfg.steps = 10;
  CHECK_THROWS_AS(train_clean_classifier(SyntheticDataset(spec), cfg), DomainError);
  CHECK_THROWS_AS(train_noise_aware_classifier(SyntheticDataset(spec), cfg), DomainError);
}

TEST_CASE("trained clean classifier objective") {
  const auto& fx = testing::clusters_clean_classifier();
  CHECK(fx.heldout_accuracy > 0.95);
  std::mt19937_64 rng(2);
  for (int c = 0; c < 4; ++c) {
    const ClassifierObjective obj(fx.classifier, c);
    CHECK(worst_grad_error(obj, rng, 2.0) < 1e-5);
    for (int i = 0; i < 5; ++i) CHECK(obj.value(random_vector(2, 2, rng)) <= 0.0);
  }
  CHECK_THROWS_AS(ClassifierObjective(fx.classifier, 4), DomainError);
  CHECK_THROWS_AS(ClassifierObjective(testing::clusters_noise_classifier().classifier, 0), DomainError);
  // Log-probabilities over classes sum to one in probability.
  const Vector z = random_vector(2, 1, rng);
  double total = 0.0;
  for (int c = 0; c < 4; ++c) total += std::exp(ClassifierObjective(fx.classifier, c).value(z));
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("noise-aware classifier") {
  const auto& clean = testing::clusters_clean_classifier();
  const auto& noisy = testing::clusters_noise_classifier();
  REQUIRE(noisy.accuracy_curve.size() == 5);
  CHECK(noisy.accuracy_curve.front().first == 1.0);
  CHECK(noisy.accuracy_curve.back().first == 0.0);
  SUBCASE("accuracy at t = 1 is within 0.05 of the clean classifier") {
    CHECK(std::abs(noisy.accuracy_curve.front().second - clean.heldout_accuracy) < 0.05);
  }
  SUBCASE("accuracy at t = 0 is near chance") {
    CHECK(std::abs(noisy.accuracy_curve.back().second - 0.25) < 0.1);
  }
  SUBCASE("accuracy is nonincreasing as t decreases, within 0.03") {
    for (std::size_t i = 1; i < noisy.accuracy_curve.size(); ++i) {
      CHECK(noisy.accuracy_curve[i].second <= noisy.accuracy_curve[i - 1].second + 0.03);
    }
  }
  SUBCASE("gradient check at random (z, t)") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> pick_t(0.0, 1.0);
    for (int c = 0; c < 4; ++c) {
      const NoiseAwareClassifierObjective obj(noisy.classifier, c);
      for (int i = 0; i < 20; ++i) {
        const Vector z = random_vector(2, 2, rng);
        const double t = pick_t(rng);
        const auto r = ad::grad_check([&](const Vector& x) { return obj.value(x, t); },
                                      [&](const Vector& x) { return obj.gradient(x, t); }, z, 1e-5);
        CHECK(r.max_relative_error < 1e-5);
      }
    }
  }
  SUBCASE("at t = 1 the gradient direction follows the clean classifier") {
    // Mean cosine between the two log-probability gradients on data points.
    const SyntheticDataset data(testing::clusters_spec());
    const Samples s = data.sample(256, 99);
    double cosine = 0.0;
    int counted = 0;
    for (Eigen::Index i = 0; i < s.points.rows(); ++i) {
      const Vector z = s.points.row(i).transpose();
      const int c = s.labels[static_cast<std::size_t>(i)];
      const Vector a = ClassifierObjective(clean.classifier, c).gradient(z);
      const Vector b = NoiseAwareClassifierObjective(noisy.classifier, c).gradient(z, 1.0);
      if (a.norm() < 1e-6 || b.norm() < 1e-6) continue;
      cosine += a.dot(b) / (a.norm() * b.norm());
      ++counted;
    }
    REQUIRE(counted > 100);
    cosine /= counted;
    MESSAGE("mean gradient cosine at t = 1: " << cosine);
    CHECK(cosine >= kNoiseAwareGradientCosine);
  }
}

TEST_CASE("time-independent wrapper") {
  auto inner = std::make_shared<GaussianObjective>(vec({1, -1}), 2.0);
  const TimeIndependentObjective w(inner);
  const Vector z = vec({0.3, 0.4});
  for (double t : {0.0, 0.5, 1.0}) {
    CHECK(w.value(z, t) == inner->value(z));
    CHECK(w.gradient(z, t) == inner->gradient(z));
  }
}

TEST_CASE("feature similarity") {
  const Vector ref = vec({1, 0});
  const FeatureSimilarityObjective sim(FeatureEncoder::identity(2), ref);
  CHECK(sim.value(ref) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(sim.value(vec({0, 1})) == 0.0);
  CHECK(sim.value(vec({-1, 0})) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK_THROWS_AS(sim.value(Vector::Zero(2)), DomainError);
  std::mt19937_64 rng(4);
  for (int i = 0; i < 20; ++i) {
    const Vector z = random_vector(2, 3, rng);
    const double v = sim.value(z);
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
    std::uniform_real_distribution<double> lambda(0.01, 100.0);
    CHECK(sim.value(lambda(rng) * z) == doctest::Approx(v).epsilon(1e-14));
  }
  CHECK(worst_grad_error(sim, rng, 2.0) < 1e-5);

  SUBCASE("trained encoder") {
    EncoderTrainingConfig cfg;
    cfg.steps = 200;
    cfg.seed = 3;
    const FeatureEncoder enc = train_feature_encoder(SyntheticDataset(testing::clusters_spec()), cfg);
    CHECK_FALSE(enc.is_identity());
    CHECK(enc.trunk()->parameters().frozen());
    const Matrix f = enc.encode(Matrix::Random(16, 2) * 3.0);
    for (Eigen::Index i = 0; i < f.rows(); ++i) CHECK(f.row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((enc.encode(Matrix::Ones(1, 2)).array() == enc.encode(Matrix::Ones(1, 2)).array()).all());
    const FeatureSimilarityObjective trained(enc, vec({3, 0}));
    CHECK(trained.value(vec({3, 0})) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(worst_grad_error(trained, rng, 2.0) < 1e-5);
  }
  SUBCASE("encoder must be frozen") {
    Mlp open({2, {8}, 4, Activation::Tanh}, 1);
    CHECK_THROWS_AS(FeatureSimilarityObjective(FeatureEncoder(open), ref), DomainError);
  }
}

TEST_CASE("composite objective") {
  auto zero = std::make_shared<ZeroObjective>(2);
  const CompositeObjective l1(zero, Vector::Zero(2), 1.0);
  CHECK(l1.value(vec({1, -2})) == -3.0);
  CHECK(l1.gradient(vec({1, -2})) == vec({-1, 1}));
  CHECK(l1.gradient(vec({0, 5}))(0) == 0.0);
  CHECK(kDefaultL1Coefficient == 10.0);
  auto g = std::make_shared<GaussianObjective>(vec({1, 2}), 1.0);
  const CompositeObjective off(g, vec({0, 0}), 0.0);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 10; ++i) {
    const Vector z = random_vector(2, 2, rng);
    CHECK(off.value(z) == g->value(z));
    CHECK(off.gradient(z) == g->gradient(z));
  }
  const CompositeObjective def(g, vec({0.5, 0.5}));
  CHECK(def.descriptor().dump().find("10") != std::string::npos);
  CHECK(worst_grad_error(def, rng, 2.0) < 1e-5);
  CHECK_THROWS_AS(CompositeObjective(g, vec({0, 0}), -1.0), DomainError);
}

TEST_CASE("classifier architecture descriptor round-trips") {
  ClassifierArchitecture a;
  a.num_classes = 3;
  a.time_features = 8;
  a.hidden = {32, 16};
  const ClassifierArchitecture b = ClassifierArchitecture::from_json(a.to_json());
  CHECK(b.num_classes == 3);
  CHECK(b.time_features == 8);
  CHECK(b.hidden == a.hidden);
  CHECK(b.mlp() == a.mlp());
}
