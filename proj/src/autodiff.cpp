#include "rectflow/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "rectflow/error.hpp"

namespace rectflow::ad {

namespace {

std::string shape(const Matrix& m) { return fmt::format("{}x{}", m.rows(), m.cols()); }

void require_same_shape(Op op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(fmt::format("{}: operand shapes differ ({} vs {})", op_name(op), shape(a), shape(b)));
  }
}

void require_column(Op op, const Matrix& m, Eigen::Index rows) {
  if (m.cols() != 1 || m.rows() != rows) {
    throw DimensionError(fmt::format("{}: expected {}x1 column, got {}", op_name(op), rows, shape(m)));
  }
}

double softplus_scalar(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
double sign_scalar(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

Matrix row_log_sum_exp(const Matrix& a) {
  Matrix out(a.rows(), 1);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double m = a.row(r).maxCoeff();
    out(r, 0) = m + std::log((a.row(r).array() - m).exp().sum());
  }
  return out;
}

void accumulate(Matrix& slot, const Matrix& delta) {
  if (slot.size() == 0) {
    slot = delta;
  } else {
    slot += delta;
  }
}

}  // namespace

const char* op_name(Op op) noexcept {
  switch (op) {
    case Op::Input: return "input";
    case Op::Constant: return "constant";
    case Op::Parameter: return "parameter";
    case Op::Affine: return "affine";
    case Op::Tanh: return "tanh";
    case Op::Relu: return "relu";
    case Op::Softplus: return "softplus";
    case Op::Abs: return "abs";
    case Op::Sqrt: return "sqrt";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Scale: return "scale";
    case Op::RowScale: return "row_scale";
    case Op::Sum: return "sum";
    case Op::Dot: return "dot";
    case Op::SquaredNorm: return "squared_norm";
    case Op::LogSumExp: return "log_sum_exp";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
  }
  return "unknown";
}

const Matrix& Var::value() const { return tape->value(*this); }

void Tape::check_owner(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) {
    throw DomainError("variable does not belong to this tape");
  }
}

const Matrix& Tape::value(Var v) const {
  check_owner(v);
  return nodes_[v.id].value();
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::input(Matrix value) {
  if (!value.allFinite()) throw NonFiniteError("input: non-finite entries");
  Node n;
  n.op = Op::Input;
  n.requires_grad = true;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(Matrix value) {
  if (!value.allFinite()) throw NonFiniteError("constant: non-finite entries");
  Node n;
  n.op = Op::Constant;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(const ParameterStore& store, std::size_t index, bool trainable) {
  Node n;
  n.op = Op::Parameter;
  n.requires_grad = trainable;
  n.external = &store.array(index);
  n.store = &store;
  n.store_index = index;
  if (!n.external->allFinite()) {
    throw NonFiniteError(fmt::format("parameter '{}' has non-finite entries", store.name(index)));
  }
  return push(std::move(n));
}

Matrix Tape::evaluate(const Node& node, const std::vector<const Matrix*>& in) const {
  switch (node.op) {
    case Op::Input:
    case Op::Constant:
    case Op::Parameter:
      return node.value();
    case Op::Affine: {
      const Matrix& x = *in[0];
      const Matrix& w = *in[1];
      const Matrix& b = *in[2];
      if (x.cols() != w.cols()) {
        throw DimensionError(fmt::format("affine: input has {} columns, weight expects {}", x.cols(), w.cols()));
      }
      if (b.rows() != w.rows() || b.cols() != 1) {
        throw DimensionError(fmt::format("affine: bias must be {}x1, got {}", w.rows(), shape(b)));
      }
      Matrix y = x * w.transpose();
      y.rowwise() += b.col(0).transpose();
      return y;
    }
    case Op::Tanh: return in[0]->array().tanh().matrix();
    case Op::Relu: return in[0]->cwiseMax(0.0);
    case Op::Softplus: return in[0]->unaryExpr(&softplus_scalar);
    case Op::Abs: return in[0]->cwiseAbs();
    case Op::Sqrt:
      if ((in[0]->array() < 0.0).any()) throw DomainError("sqrt: negative argument");
      return in[0]->cwiseSqrt();
    case Op::Mul: require_same_shape(node.op, *in[0], *in[1]); return in[0]->cwiseProduct(*in[1]);
    case Op::Div: require_same_shape(node.op, *in[0], *in[1]); return in[0]->cwiseQuotient(*in[1]);
    case Op::Add: require_same_shape(node.op, *in[0], *in[1]); return *in[0] + *in[1];
    case Op::Sub: require_same_shape(node.op, *in[0], *in[1]); return *in[0] - *in[1];
    case Op::Scale: return node.scalar * *in[0];
    case Op::RowScale: {
      require_column(node.op, *in[1], in[0]->rows());
      return in[1]->col(0).asDiagonal() * *in[0];
    }
    case Op::Sum: return Matrix::Constant(1, 1, in[0]->sum());
    case Op::Dot:
      require_same_shape(node.op, *in[0], *in[1]);
      return in[0]->cwiseProduct(*in[1]).rowwise().sum();
    case Op::SquaredNorm: return in[0]->rowwise().squaredNorm();
    case Op::LogSumExp: return row_log_sum_exp(*in[0]);
    case Op::Concat: {
      if (in[0]->rows() != in[1]->rows()) {
        throw DimensionError(fmt::format("concat: row counts differ ({} vs {})", in[0]->rows(), in[1]->rows()));
      }
      Matrix y(in[0]->rows(), in[0]->cols() + in[1]->cols());
      y << *in[0], *in[1];
      return y;
    }
    case Op::Slice:
      if (node.first < 0 || node.count <= 0 || node.first + node.count > in[0]->cols()) {
        throw DimensionError(fmt::format("slice: columns [{}, {}) out of range for {}", node.first,
                                         node.first + node.count, shape(*in[0])));
      }
      return in[0]->middleCols(node.first, node.count);
  }
  throw DomainError("unknown op");
}

Var Tape::record(Op op, std::initializer_list<Var> inputs, double scalar, Eigen::Index first, Eigen::Index count) {
  Node n;
  n.op = op;
  n.scalar = scalar;
  n.first = first;
  n.count = count;
  std::vector<const Matrix*> values;
  for (Var v : inputs) {
    check_owner(v);
    n.in[n.arity++] = v.id;
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
    values.push_back(&nodes_[v.id].value());
  }
  n.owned = evaluate(n, values);
  if (!n.owned.allFinite()) {
    throw NonFiniteError(fmt::format("{}: produced a non-finite value", op_name(op)));
  }
  return push(std::move(n));
}

Var Tape::affine(Var x, Var w, Var b) { return record(Op::Affine, {x, w, b}); }
Var Tape::tanh(Var x) { return record(Op::Tanh, {x}); }
Var Tape::relu(Var x) { return record(Op::Relu, {x}); }
Var Tape::softplus(Var x) { return record(Op::Softplus, {x}); }
Var Tape::abs(Var x) { return record(Op::Abs, {x}); }
Var Tape::sqrt(Var x) { return record(Op::Sqrt, {x}); }
Var Tape::mul(Var a, Var b) { return record(Op::Mul, {a, b}); }
Var Tape::div(Var a, Var b) { return record(Op::Div, {a, b}); }
Var Tape::add(Var a, Var b) { return record(Op::Add, {a, b}); }
Var Tape::sub(Var a, Var b) { return record(Op::Sub, {a, b}); }
Var Tape::scale(Var a, double factor) { return record(Op::Scale, {a}, factor); }
Var Tape::row_scale(Var a, Var s) { return record(Op::RowScale, {a, s}); }
Var Tape::sum(Var a) { return record(Op::Sum, {a}); }
Var Tape::dot(Var a, Var b) { return record(Op::Dot, {a, b}); }
Var Tape::squared_norm(Var a) { return record(Op::SquaredNorm, {a}); }
Var Tape::log_sum_exp(Var a) { return record(Op::LogSumExp, {a}); }
Var Tape::concat(Var a, Var b) { return record(Op::Concat, {a, b}); }
Var Tape::slice(Var a, Eigen::Index first_col, Eigen::Index count) {
  return record(Op::Slice, {a}, 0.0, first_col, count);
}

Gradients Tape::backward(Var output, const Matrix& cotangent) const {
  check_owner(output);
  const Matrix& out_value = nodes_[output.id].value();
  if (cotangent.rows() != out_value.rows() || cotangent.cols() != out_value.cols()) {
    throw DimensionError(
        fmt::format("cotangent has shape {}, output has shape {}", shape(cotangent), shape(out_value)));
  }
  if (!cotangent.allFinite()) throw NonFiniteError("cotangent has non-finite entries");

  Gradients grads;
  grads.tape_ = this;
  grads.adjoints_.assign(nodes_.size(), Matrix());
  auto& adj = grads.adjoints_;
  adj[output.id] = cotangent;

  std::size_t visits = 0;
  for (std::size_t id = output.id + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (!n.requires_grad || adj[id].size() == 0) continue;
    ++visits;
    const Matrix& g = adj[id];
    auto in_value = [&](int k) -> const Matrix& { return nodes_[n.in[k]].value(); };
    auto wants = [&](int k) { return nodes_[n.in[k]].requires_grad; };

    switch (n.op) {
      case Op::Input:
      case Op::Constant:
      case Op::Parameter:
        break;
      case Op::Affine: {
        if (wants(0)) accumulate(adj[n.in[0]], g * in_value(1));
        if (wants(1)) accumulate(adj[n.in[1]], g.transpose() * in_value(0));
        if (wants(2)) accumulate(adj[n.in[2]], g.colwise().sum().transpose());
        break;
      }
      case Op::Tanh: {
        const Matrix& y = n.value();
        accumulate(adj[n.in[0]], (g.array() * (1.0 - y.array().square())).matrix());
        break;
      }
      case Op::Relu:
        accumulate(adj[n.in[0]], (g.array() * (in_value(0).array() > 0.0).cast<double>()).matrix());
        break;
      case Op::Softplus:
        accumulate(adj[n.in[0]], g.cwiseProduct(in_value(0).unaryExpr(&sigmoid_scalar)));
        break;
      case Op::Abs:
        accumulate(adj[n.in[0]], g.cwiseProduct(in_value(0).unaryExpr(&sign_scalar)));
        break;
      case Op::Sqrt: {
        Matrix d = (0.5 * g.array() / n.value().array()).matrix();
        if (!d.allFinite()) throw NonFiniteError("sqrt: derivative is non-finite at zero");
        accumulate(adj[n.in[0]], d);
        break;
      }
      case Op::Mul:
        if (wants(0)) accumulate(adj[n.in[0]], g.cwiseProduct(in_value(1)));
        if (wants(1)) accumulate(adj[n.in[1]], g.cwiseProduct(in_value(0)));
        break;
      case Op::Div: {
        const Matrix& b = in_value(1);
        if (wants(0)) accumulate(adj[n.in[0]], g.cwiseQuotient(b));
        if (wants(1)) {
          accumulate(adj[n.in[1]], (-g.array() * in_value(0).array() / b.array().square()).matrix());
        }
        break;
      }
      case Op::Add:
        if (wants(0)) accumulate(adj[n.in[0]], g);
        if (wants(1)) accumulate(adj[n.in[1]], g);
        break;
      case Op::Sub:
        if (wants(0)) accumulate(adj[n.in[0]], g);
        if (wants(1)) accumulate(adj[n.in[1]], -g);
        break;
      case Op::Scale:
        accumulate(adj[n.in[0]], n.scalar * g);
        break;
      case Op::RowScale: {
        const Matrix& a = in_value(0);
        const Matrix& s = in_value(1);
        if (wants(0)) accumulate(adj[n.in[0]], s.col(0).asDiagonal() * g);
        if (wants(1)) accumulate(adj[n.in[1]], g.cwiseProduct(a).rowwise().sum());
        break;
      }
      case Op::Sum: {
        const Matrix& a = in_value(0);
        accumulate(adj[n.in[0]], Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
        break;
      }
      case Op::Dot:
        if (wants(0)) accumulate(adj[n.in[0]], g.col(0).asDiagonal() * in_value(1));
        if (wants(1)) accumulate(adj[n.in[1]], g.col(0).asDiagonal() * in_value(0));
        break;
      case Op::SquaredNorm:
        accumulate(adj[n.in[0]], 2.0 * (g.col(0).asDiagonal() * in_value(0)));
        break;
      case Op::LogSumExp: {
        const Matrix& a = in_value(0);
        Matrix soft = (a.colwise() - n.value().col(0)).array().exp().matrix();
        accumulate(adj[n.in[0]], g.col(0).asDiagonal() * soft);
        break;
      }
      case Op::Concat: {
        const Eigen::Index left = in_value(0).cols();
        if (wants(0)) accumulate(adj[n.in[0]], g.leftCols(left));
        if (wants(1)) accumulate(adj[n.in[1]], g.rightCols(g.cols() - left));
        break;
      }
      case Op::Slice: {
        const Matrix& a = in_value(0);
        Matrix full = Matrix::Zero(a.rows(), a.cols());
        full.middleCols(n.first, n.count) = g;
        accumulate(adj[n.in[0]], full);
        break;
      }
    }
  }
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (adj[id].size() != 0 && !adj[id].allFinite()) {
      throw NonFiniteError(fmt::format("{}: non-finite adjoint", op_name(nodes_[id].op)));
    }
  }
  last_sweep_visits_ = visits;
  return grads;
}

Matrix Tape::replay(Var output) const {
  check_owner(output);
  std::vector<Matrix> fresh(output.id + 1);
  std::vector<const Matrix*> values;
  for (std::size_t id = 0; id <= output.id; ++id) {
    const Node& n = nodes_[id];
    values.clear();
    for (int k = 0; k < n.arity; ++k) values.push_back(&fresh[n.in[k]]);
    fresh[id] = evaluate(n, values);
  }
  return fresh[output.id];
}

Matrix Gradients::wrt(Var v) const {
  const Matrix& value = tape_->value(v);
  const Matrix& a = adjoints_.at(v.id);
  if (a.size() == 0) return Matrix::Zero(value.rows(), value.cols());
  return a;
}

std::vector<Matrix> Gradients::for_store(const ParameterStore& store) const {
  std::vector<Matrix> out = store.zeros_like();
  for (std::size_t id = 0; id < tape_->nodes_.size(); ++id) {
    const auto& n = tape_->nodes_[id];
    if (n.op == Op::Parameter && n.store == &store && adjoints_[id].size() != 0) {
      out[n.store_index] += adjoints_[id];
    }
  }
  return out;
}

Vector Recording::output_vector() const {
  const Matrix& m = output.value();
  Vector v(m.size());
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) v(k++) = m(r, c);
  }
  return v;
}

Recording forward(const Function& fn, std::span<const Vector> inputs) {
  if (inputs.size() != fn.input_dims.size()) {
    throw DimensionError(fmt::format("{}: expected {} inputs, got {}", fn.name, fn.input_dims.size(), inputs.size()));
  }
  Recording rec;
  rec.tape = std::make_unique<Tape>();
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].size() != fn.input_dims[i]) {
      throw DimensionError(fmt::format("{}: input {} has dimension {}, expected {}", fn.name, i, inputs[i].size(),
                                       fn.input_dims[i]));
    }
    rec.inputs.push_back(rec.tape->input(inputs[i].transpose()));
  }
  rec.output = fn.build(*rec.tape, rec.inputs);
  return rec;
}

VjpResult vjp(const Recording& rec, const Vector& cotangent) {
  const Matrix& out = rec.output.value();
  if (cotangent.size() != out.size()) {
    throw DimensionError(fmt::format("cotangent has dimension {}, output has {}", cotangent.size(), out.size()));
  }
  Matrix cot(out.rows(), out.cols());
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    for (Eigen::Index c = 0; c < out.cols(); ++c) cot(r, c) = cotangent(k++);
  }
  VjpResult result;
  result.raw = rec.tape->backward(rec.output, cot);
  for (Var in : rec.inputs) result.inputs.push_back(result.raw.wrt(in).transpose());
  return result;
}

GradCheckResult grad_check(const ScalarFn& value, const GradientFn& gradient, const Vector& point, double step,
                           std::span<const Eigen::Index> coordinates) {
  if (!(step > 0.0 && step <= 1e-2)) {
    throw DomainError(fmt::format("grad_check: step {} outside (0, 1e-2]", step));
  }
  const Vector analytic = gradient(point);
  if (analytic.size() != point.size()) throw DimensionError("grad_check: gradient has wrong dimension");
  const double center = value(point);
  if (!std::isfinite(center)) throw NonFiniteError("grad_check: non-finite value at probe point");

  std::vector<Eigen::Index> all;
  if (coordinates.empty()) {
    all.resize(static_cast<std::size_t>(point.size()));
    for (Eigen::Index i = 0; i < point.size(); ++i) all[static_cast<std::size_t>(i)] = i;
    coordinates = all;
  }

  GradCheckResult result;
  Vector probe = point;
  for (Eigen::Index i : coordinates) {
    probe(i) = point(i) + step;
    const double plus = value(probe);
    probe(i) = point(i) - step;
    const double minus = value(probe);
    probe(i) = point(i);
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NonFiniteError(fmt::format("grad_check: non-finite value probing coordinate {}", i));
    }
    const double central = (plus - minus) / (2.0 * step);
    const double rel = std::abs(analytic(i) - central) / (std::abs(central) + 1e-12);
    if (rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_coordinate = i;
    }
    // One-sided slopes differ by about step * f'' on smooth functions and by
    // the full jump on a kink.
    const double forward_slope = (plus - center) / step;
    const double backward_slope = (center - minus) / step;
    if (std::abs(forward_slope - backward_slope) > 1e3 * step * (1.0 + std::abs(central))) {
      result.reliable = false;
    }
  }
  return result;
}

GradCheckResult grad_check(const Function& fn, const Vector& point, double step) {
  if (fn.input_dims.size() != 1) throw DimensionError(fn.name + ": grad_check needs a single-input function");
  auto value = [&](const Vector& x) {
    std::vector<Vector> in{x};
    Recording rec = forward(fn, in);
    if (rec.output.value().size() != 1) throw DimensionError(fn.name + ": grad_check needs a scalar output");
    return rec.output.value()(0, 0);
  };
  auto gradient = [&](const Vector& x) {
    std::vector<Vector> in{x};
    Recording rec = forward(fn, in);
    return vjp(rec, Vector::Ones(1)).inputs.front();
  };
  return grad_check(value, gradient, point, step);
}

}  // namespace rectflow::ad
