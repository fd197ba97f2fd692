#pragma once

// Reverse-mode differentiation over dense row-batched matrices.
//
// Every value on a tape is a matrix whose rows are batch elements and whose
// columns are features; a single state vector is a 1 x d row. Reductions
// (dot, squared_norm, log_sum_exp) act per row and produce a rows x 1 column,
// `sum` reduces everything to 1 x 1. There is no broadcasting: operands of
// elementwise ops must have identical shapes.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rectflow/parameters.hpp"

namespace rectflow::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

enum class Op : std::uint8_t {
  Input,
  Constant,
  Parameter,
  Affine,
  Tanh,
  Relu,
  Softplus,
  Abs,
  Sqrt,
  Mul,
  Div,
  Add,
  Sub,
  Scale,
  RowScale,
  Sum,
  Dot,
  SquaredNorm,
  LogSumExp,
  Concat,
  Slice,
};

const char* op_name(Op op) noexcept;

class Gradients;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable leaf.
  Var input(Matrix value);
  /// Non-differentiable leaf.
  Var constant(Matrix value);
  /// Leaf bound to `store.array(index)` without copying. The store must
  /// outlive the tape and must not be mutated while the tape is alive.
  Var parameter(const ParameterStore& store, std::size_t index, bool trainable);

  // x: rows x in, weight: out x in, bias: out x 1. Returns x * weight^T + bias^T.
  Var affine(Var x, Var weight, Var bias);
  Var tanh(Var x);
  Var relu(Var x);
  Var softplus(Var x);
  Var abs(Var x);
  Var sqrt(Var x);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var a, double factor);
  /// a: rows x k, s: rows x 1; each row of `a` multiplied by its entry of `s`.
  Var row_scale(Var a, Var s);
  Var sum(Var a);
  Var dot(Var a, Var b);
  Var squared_norm(Var a);
  Var log_sum_exp(Var a);
  Var concat(Var a, Var b);
  Var slice(Var a, Eigen::Index first_col, Eigen::Index count);

  const Matrix& value(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  Op op(Var v) const { return nodes_.at(v.id).op; }

  /// Reverse sweep seeded with `cotangent` at `output`. Each node with a
  /// nonzero adjoint is visited exactly once, in reverse recording order.
  Gradients backward(Var output, const Matrix& cotangent) const;

  /// Recomputes every node from its leaves and returns the value of `output`.
  /// The recorded values are left untouched.
  Matrix replay(Var output) const;

  /// Number of nodes visited by the most recent backward sweep.
  std::size_t last_sweep_visits() const noexcept { return last_sweep_visits_; }

 private:
  struct Node {
    Op op = Op::Constant;
    std::size_t in[3] = {0, 0, 0};
    std::uint8_t arity = 0;
    bool requires_grad = false;
    double scalar = 0.0;
    Eigen::Index first = 0;
    Eigen::Index count = 0;
    Matrix owned;
    const Matrix* external = nullptr;
    const ParameterStore* store = nullptr;
    std::size_t store_index = 0;

    const Matrix& value() const { return external ? *external : owned; }
  };

  Var push(Node node);
  Var record(Op op, std::initializer_list<Var> inputs, double scalar = 0.0, Eigen::Index first = 0,
             Eigen::Index count = 0);
  void check_owner(Var v) const;
  Matrix evaluate(const Node& node, const std::vector<const Matrix*>& values) const;

  std::vector<Node> nodes_;
  mutable std::size_t last_sweep_visits_ = 0;

  friend class Gradients;
};

/// Adjoints of the leaves reached by a reverse sweep.
class Gradients {
 public:
  /// Adjoint of any node; a zero matrix of the node's shape when untouched.
  Matrix wrt(Var v) const;
  /// Adjoints for every array of `store` (zeros where unused). Only
  /// parameters registered as trainable receive gradients.
  std::vector<Matrix> for_store(const ParameterStore& store) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<Matrix> adjoints_;
};

// Free-function spellings so model code reads like math.
inline Var tanh(Var x) { return x.tape->tanh(x); }
inline Var relu(Var x) { return x.tape->relu(x); }
inline Var softplus(Var x) { return x.tape->softplus(x); }
inline Var abs(Var x) { return x.tape->abs(x); }
inline Var sqrt(Var x) { return x.tape->sqrt(x); }
inline Var sum(Var x) { return x.tape->sum(x); }
inline Var dot(Var a, Var b) { return a.tape->dot(a, b); }
inline Var squared_norm(Var a) { return a.tape->squared_norm(a); }
inline Var log_sum_exp(Var a) { return a.tape->log_sum_exp(a); }
inline Var concat(Var a, Var b) { return a.tape->concat(a, b); }
inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
inline Var operator/(Var a, Var b) { return a.tape->div(a, b); }
inline Var operator*(double c, Var a) { return a.tape->scale(a, c); }
inline Var operator-(Var a) { return a.tape->scale(a, -1.0); }

// ---------------------------------------------------------------------------
// Whole-function interface: declare arity, record once, pull back cotangents.

struct Function {
  std::string name;
  std::vector<Eigen::Index> input_dims;
  std::function<Var(Tape&, std::span<const Var>)> build;
};

struct Recording {
  std::unique_ptr<Tape> tape;
  std::vector<Var> inputs;
  Var output;

  /// Output flattened to a vector (row-major over the output matrix).
  Vector output_vector() const;
};

/// Evaluates `fn` at `inputs`, recording every primitive on a fresh tape.
/// Throws DimensionError naming the first input whose size is wrong.
Recording forward(const Function& fn, std::span<const Vector> inputs);

struct VjpResult {
  std::vector<Vector> inputs;
  Gradients raw;
};

/// u^T J for the recorded function. `cotangent` is the flattened output.
VjpResult vjp(const Recording& rec, const Vector& cotangent);

// ---------------------------------------------------------------------------
// Finite-difference verification.

struct GradCheckResult {
  double max_relative_error = 0.0;
  Eigen::Index worst_coordinate = 0;
  /// False when one-sided differences disagree beyond smooth-curvature
  /// levels at some coordinate, i.e. the probe sits on a kink.
  bool reliable = true;
};

using ScalarFn = std::function<double(const Vector&)>;
using GradientFn = std::function<Vector(const Vector&)>;

/// max_i |g_i - fd_i| / (|fd_i| + 1e-12) with central differences of width
/// 2*step. `coordinates` restricts the probe to a subset (empty = all).
/// Throws DomainError for step outside (0, 1e-2], NonFiniteError when the
/// function is non-finite at a probe point.
GradCheckResult grad_check(const ScalarFn& value, const GradientFn& gradient, const Vector& point,
                           double step, std::span<const Eigen::Index> coordinates = {});

/// Same check for a recorded scalar-valued Function with one input.
GradCheckResult grad_check(const Function& fn, const Vector& point, double step);

}  // namespace rectflow::ad
