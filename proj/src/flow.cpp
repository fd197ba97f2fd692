#include "rectflow/flow.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "rectflow/error.hpp"
#include "rectflow/optimizer.hpp"

namespace rectflow {

namespace {

constexpr std::uint64_t kEvalStream = 0x5eedf00dULL;

void require_rows_match(const Matrix& z, const Vector& times) {
  if (z.rows() != times.size()) {
    throw DimensionError(fmt::format("{} states but {} times", z.rows(), times.size()));
  }
}

}  // namespace

Matrix VelocityModel::evaluate(const Matrix& z, const Vector& times) const {
  ad::Tape tape;
  return build(tape, tape.constant(z), times).value();
}

Matrix VelocityModel::evaluate(const Matrix& z, double t) const {
  return evaluate(z, Vector::Constant(z.rows(), t));
}

Vector VelocityModel::evaluate(const Vector& z, double t) const {
  return evaluate(Matrix(z.transpose()), Vector::Constant(1, t)).row(0).transpose();
}

ad::Var ConstantVelocity::build(ad::Tape& tape, ad::Var z, const Vector& times) const {
  require_rows_match(z.value(), times);
  if (z.cols() != dim()) throw DimensionError("constant velocity: state dimension mismatch");
  return tape.constant(velocity_.transpose().replicate(z.rows(), 1));
}

ad::Var LinearVelocity::build(ad::Tape& tape, ad::Var z, const Vector& times) const {
  require_rows_match(z.value(), times);
  return tape.affine(z, tape.constant(a_), tape.constant(b_));
}

MlpArchitecture FieldArchitecture::mlp() const {
  return MlpArchitecture{state_dim + time_features, hidden, state_dim, activation};
}

nlohmann::json FieldArchitecture::to_json() const {
  return nlohmann::json{{"state_dim", state_dim},
                        {"hidden", hidden},
                        {"time_features", time_features},
                        {"activation", to_string(activation)}};
}

FieldArchitecture FieldArchitecture::from_json(const nlohmann::json& j) {
  FieldArchitecture a;
  a.state_dim = j.at("state_dim").get<Eigen::Index>();
  a.hidden = j.at("hidden").get<std::vector<Eigen::Index>>();
  a.time_features = j.at("time_features").get<Eigen::Index>();
  a.activation = activation_from_string(j.at("activation").get<std::string>());
  return a;
}

VelocityField::VelocityField(FieldArchitecture arch, std::uint64_t seed)
    : arch_(std::move(arch)), embedding_(arch_.time_features), mlp_(arch_.mlp(), seed) {
  if (arch_.state_dim < 1 || arch_.state_dim > 64) throw DomainError("state dimension must lie in [1, 64]");
}

VelocityField::VelocityField(FieldArchitecture arch, ParameterStore params)
    : arch_(std::move(arch)), embedding_(arch_.time_features), mlp_(arch_.mlp(), std::move(params)) {}

ad::Var VelocityField::build(ad::Tape& tape, ad::Var z, const Vector& times) const {
  return build(tape, z, times, false);
}

ad::Var VelocityField::build(ad::Tape& tape, ad::Var z, const Vector& times, bool trainable) const {
  require_rows_match(z.value(), times);
  if (z.cols() != arch_.state_dim) {
    throw DimensionError(fmt::format("velocity field expects dimension {}, got {}", arch_.state_dim, z.cols()));
  }
  ad::Var x = arch_.time_features > 0 ? tape.concat(z, tape.constant(embedding_.features(times))) : z;
  return mlp_.build(tape, x, trainable);
}

VelocityField VelocityField::thawed_copy() const { return VelocityField(arch_, parameters().thawed_copy()); }

void TrainingConfig::validate() const {
  if (batch_size < 1) throw ConfigError("training batch_size must be positive");
  if (steps < 0) throw ConfigError("training steps must be non-negative");
  if (!(learning_rate > 0.0)) throw ConfigError("training learning_rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("training momentum must lie in [0, 1)");
  if (clip_norm < 0.0) throw ConfigError("training clip_norm must be non-negative");
  if (eval_batch < 1) throw ConfigError("training eval_batch must be positive");
}

Vector interpolate(const Vector& z0, const Vector& z1, double t) {
  if (z0.size() != z1.size()) throw DimensionError("interpolate: dimension mismatch");
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError(fmt::format("interpolate: t = {} outside [0, 1]", t));
  return t * z1 + (1.0 - t) * z0;
}

Matrix interpolate(const Matrix& z0, const Matrix& z1, const Vector& t) {
  if (z0.rows() != z1.rows() || z0.cols() != z1.cols()) throw DimensionError("interpolate: shape mismatch");
  require_rows_match(z0, t);
  if ((t.array() < 0.0).any() || (t.array() > 1.0).any()) throw DomainError("interpolate: t outside [0, 1]");
  return t.asDiagonal() * z1 + (1.0 - t.array()).matrix().asDiagonal() * z0;
}

LossAndGradient flow_matching_loss(const VelocityField& field, const Matrix& z0, const Matrix& z1, const Vector& t,
                                   bool with_gradient) {
  if (z0.rows() == 0) throw DomainError("flow_matching_loss: empty batch");
  const Matrix zt = interpolate(z0, z1, t);
  ad::Tape tape;
  ad::Var v = field.build(tape, tape.constant(zt), t, with_gradient);
  ad::Var residual = tape.constant(z1 - z0) - v;
  ad::Var loss = (1.0 / static_cast<double>(z0.rows())) * ad::sum(ad::squared_norm(residual));
  LossAndGradient out;
  out.loss = loss.value()(0, 0);
  if (with_gradient) out.gradients = tape.backward(loss, Matrix::Ones(1, 1)).for_store(field.parameters());
  return out;
}

namespace {

struct EvalBatch {
  Matrix z0, z1;
  Vector t;
};

double evaluate_batch(const VelocityField& field, const EvalBatch& b) {
  return flow_matching_loss(field, b.z0, b.z1, b.t, false).loss;
}

Vector uniform_times(Eigen::Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector t(n);
  for (Eigen::Index i = 0; i < n; ++i) t(i) = u(rng);
  return t;
}

template <class DrawPairs>
TrainingResult run_training(VelocityField field, const TrainingConfig& config, const EvalBatch& eval,
                            DrawPairs&& draw) {
  TrainingResult result{std::move(field), {}, 0.0, 0.0};
  VelocityField& f = result.field;
  result.initial_loss = evaluate_batch(f, eval);
  if (config.steps > 0) {
    SgdMomentum opt(f.parameters(), config.learning_rate, config.momentum, config.clip_norm);
    std::mt19937_64 rng(config.seed);
    result.loss_series.reserve(static_cast<std::size_t>(config.steps));
    for (long step = 0; step < config.steps; ++step) {
      auto [z0, z1] = draw(rng);
      const Vector t = uniform_times(z0.rows(), rng);
      LossAndGradient lg;
      try {
        lg = flow_matching_loss(f, z0, z1, t);
      } catch (const NonFiniteError& e) {
        throw TrainingError(fmt::format("training diverged at step {}: {}", step, e.what()), step);
      }
      if (!std::isfinite(lg.loss)) throw TrainingError(fmt::format("training diverged at step {}", step), step);
      result.loss_series.push_back(lg.loss);
      opt.step(f.parameters(), lg.gradients);
    }
    result.final_loss = evaluate_batch(f, eval);
  } else {
    result.final_loss = result.initial_loss;
  }
  if (!std::isfinite(result.final_loss)) {
    throw TrainingError("training produced a non-finite evaluation loss", config.steps);
  }
  f.freeze();
  return result;
}

}  // namespace

TrainingResult train_flow(const SyntheticDataset& dataset, const FieldArchitecture& arch,
                          const TrainingConfig& config) {
  config.validate();
  if (arch.state_dim != dataset.dim()) throw DimensionError("field and dataset dimensions differ");
  VelocityField field(arch, config.seed);

  std::mt19937_64 eval_rng(config.seed ^ kEvalStream);
  EvalBatch eval;
  eval.z1 = dataset.sample(config.eval_batch, eval_rng).points;
  eval.z0 = standard_normal(config.eval_batch, dataset.dim(), eval_rng);
  eval.t = uniform_times(config.eval_batch, eval_rng);

  return run_training(std::move(field), config, eval, [&](std::mt19937_64& rng) {
    Matrix z1 = dataset.sample(config.batch_size, rng).points;
    Matrix z0 = standard_normal(config.batch_size, dataset.dim(), rng);
    return std::pair{std::move(z0), std::move(z1)};
  });
}

Matrix integrate_euler(const VelocityModel& model, Matrix z, double t_begin, double t_end, int steps) {
  if (steps < 1) throw DomainError("Euler integration needs at least one step");
  const double h = (t_end - t_begin) / steps;
  for (int k = 0; k < steps; ++k) {
    const double t = t_begin + (t_end - t_begin) * static_cast<double>(k) / steps;
    z += h * model.evaluate(z, t);
    if (!z.allFinite()) throw NonFiniteError(fmt::format("Euler integration became non-finite at t = {}", t));
  }
  return z;
}

TrainingResult reflow(const VelocityField& field, const ReflowConfig& config) {
  config.training.validate();
  if (!field.frozen()) throw DomainError("reflow expects a frozen field");
  if (config.pairs < 1) throw ConfigError("reflow pairs must be positive");
  const Eigen::Index d = field.dim();

  std::mt19937_64 pair_rng(config.training.seed ^ 0xa11ce5ULL);
  const Matrix z0 = standard_normal(config.pairs, d, pair_rng);
  const Matrix z1 = integrate_euler(field, z0, 0.0, 1.0, config.sampling_steps);

  std::mt19937_64 eval_rng(config.training.seed ^ kEvalStream);
  const Eigen::Index n_eval = std::min(config.training.eval_batch, config.pairs);
  EvalBatch eval{z0.topRows(n_eval), z1.topRows(n_eval), uniform_times(n_eval, eval_rng)};

  std::uniform_int_distribution<Eigen::Index> pick(0, config.pairs - 1);
  return run_training(field.thawed_copy(), config.training, eval, [&](std::mt19937_64& rng) {
    Matrix b0(config.training.batch_size, d), b1(config.training.batch_size, d);
    for (Eigen::Index r = 0; r < config.training.batch_size; ++r) {
      const Eigen::Index i = pick(rng);
      b0.row(r) = z0.row(i);
      b1.row(r) = z1.row(i);
    }
    return std::pair{std::move(b0), std::move(b1)};
  });
}

}  // namespace rectflow
