#include <doctest.h>

#include <cmath>
#include <random>

#include "rectflow/autodiff.hpp"
#include "rectflow/error.hpp"
#include "rectflow/mlp.hpp"
#include "rectflow/optimizer.hpp"

using namespace rectflow;
using ad::Tape;
using ad::Var;

namespace {

Vector uniform_vector(Eigen::Index n, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}


// u . f(x), recomputed from scratch at every probe.
double contracted(const ad::Function& fn, const Vector& x, const Vector& u) {
  const Vector xs[] = {x};
  return ad::forward(fn, xs).output_vector().dot(u);
}

Vector pulled_back(const ad::Function& fn, const Vector& x, const Vector& u) {
  const Vector xs[] = {x};
  return ad::vjp(ad::forward(fn, xs), u).inputs[0];
}

Eigen::Index output_size(const ad::Function& fn, const Vector& x) {
  const Vector xs[] = {x};
  return ad::forward(fn, xs).output_vector().size();
}

struct PrimitiveCase {
  const char* name;
  Eigen::Index dim;
  double lo, hi;
  std::function<Var(Tape&, Var)> build;
};

}  // namespace

TEST_CASE("forward evaluates the documented examples") {
  SUBCASE("square") {
    ad::Function f{"square", {1}, [](Tape&, std::span<const Var> in) { return ad::dot(in[0], in[0]); }};
    const Vector x = Vector::Constant(1, 3.0);
    const Vector xs[] = {x};
    CHECK(ad::forward(f, xs).output_vector()(0) == 9.0);
    CHECK(pulled_back(f, x, Vector::Ones(1))(0) == 6.0);
  }
  SUBCASE("diagonal linear map") {
    Matrix a(2, 2);
    a << 2, 0, 0, 3;
    ad::Function f{"diag", {2}, [&](Tape& t, std::span<const Var> in) {
                     return t.affine(in[0], t.constant(a), t.constant(Matrix::Zero(2, 1)));
                   }};
    const Vector x = Vector::Ones(2);
    const Vector xs[] = {x};
    const Vector y = ad::forward(f, xs).output_vector();
    CHECK(y(0) == 2.0);
    CHECK(y(1) == 3.0);
    const Vector g = pulled_back(f, x, Vector::Ones(2));
    CHECK(g(0) == 2.0);
    CHECK(g(1) == 3.0);
  }
  SUBCASE("zero-weight MLP returns the last bias") {
    Mlp mlp({3, {5, 4}, 2, Activation::Tanh}, 11);
    ParameterStore& p = mlp.parameters();
    for (std::size_t i = 0; i < p.size(); ++i) p.set(i, Matrix::Zero(p.spec(i).rows, p.spec(i).cols));
    Matrix bias(2, 1);
    bias << 0.25, -1.5;
    p.set(p.index_of("b2"), bias);
    const Matrix out = mlp.evaluate(Matrix::Random(4, 3));
    for (Eigen::Index r = 0; r < 4; ++r) {
      CHECK(out(r, 0) == 0.25);
      CHECK(out(r, 1) == -1.5);
    }
  }
}

TEST_CASE("dimension errors name the offending input") {
  ad::Function f{"pair", {2, 3}, [](Tape&, std::span<const Var> in) { return ad::sum(in[0]) + ad::sum(in[1]); }};
  const Vector good[] = {Vector::Zero(2), Vector::Zero(3)};
  CHECK_NOTHROW(ad::forward(f, good));
  const Vector bad[] = {Vector::Zero(2), Vector::Zero(4)};
  try {
    ad::forward(f, bad);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("input 1") != std::string::npos);
  }
  const Vector xs[] = {Vector::Zero(2), Vector::Zero(3)};
  const auto rec = ad::forward(f, xs);
  CHECK_THROWS_AS(ad::vjp(rec, Vector::Ones(2)), DimensionError);
}

TEST_CASE("non-finite intermediates abort") {
  Tape t;
  Var x = t.input(Matrix::Constant(1, 1, 1.0));
  Var zero = t.constant(Matrix::Zero(1, 1));
  CHECK_THROWS_AS(x / zero, NonFiniteError);
  CHECK_THROWS_AS(t.input(Matrix::Constant(1, 1, std::nan(""))), NonFiniteError);
}

TEST_CASE("every primitive's VJP matches central differences at 100 random points") {
  const std::vector<PrimitiveCase> cases = {
      {"affine", 3, -2, 2,
       [](Tape& t, Var x) {
         Matrix w(2, 3);
         w << 0.3, -1.2, 0.7, 2.0, 0.1, -0.4;
         Matrix b(2, 1);
         b << 0.5, -0.25;
         return t.affine(x, t.constant(w), t.constant(b));
       }},
      {"tanh", 4, -2, 2, [](Tape&, Var x) { return ad::tanh(x); }},
      {"relu", 4, -2, 2, [](Tape&, Var x) { return ad::relu(x); }},
      {"softplus", 4, -3, 3, [](Tape&, Var x) { return ad::softplus(x); }},
      {"abs", 4, 0.1, 2, [](Tape& t, Var x) { return ad::abs(x - t.constant(Matrix::Constant(1, 4, 1.0))); }},
      {"sqrt", 4, 0.2, 3, [](Tape&, Var x) { return ad::sqrt(x); }},
      {"mul", 4, -2, 2, [](Tape& t, Var x) { return t.slice(x, 0, 2) * t.slice(x, 2, 2); }},
      {"div", 4, 0.5, 2, [](Tape& t, Var x) { return t.slice(x, 0, 2) / t.slice(x, 2, 2); }},
      {"add", 4, -2, 2, [](Tape& t, Var x) { return t.slice(x, 0, 2) + t.slice(x, 2, 2); }},
      {"sub", 4, -2, 2, [](Tape& t, Var x) { return t.slice(x, 0, 2) - t.slice(x, 2, 2); }},
      {"scale", 3, -2, 2, [](Tape&, Var x) { return -2.5 * x; }},
      {"row_scale", 4, -2, 2, [](Tape& t, Var x) { return t.row_scale(t.slice(x, 0, 3), t.slice(x, 3, 1)); }},
      {"sum", 4, -2, 2, [](Tape&, Var x) { return ad::sum(x); }},
      {"dot", 4, -2, 2, [](Tape& t, Var x) { return ad::dot(t.slice(x, 0, 2), t.slice(x, 2, 2)); }},
      {"squared_norm", 4, -2, 2, [](Tape&, Var x) { return ad::squared_norm(x); }},
      {"log_sum_exp", 5, -3, 3, [](Tape&, Var x) { return ad::log_sum_exp(x); }},
      {"concat", 3, -2, 2, [](Tape&, Var x) { return ad::concat(ad::tanh(x), x); }},
      {"slice", 5, -2, 2, [](Tape& t, Var x) { return t.slice(x, 1, 3); }},
  };
  std::mt19937_64 rng(2024);
  for (const auto& c : cases) {
    CAPTURE(c.name);
    ad::Function fn{c.name, {c.dim}, [&](Tape& t, std::span<const Var> in) { return c.build(t, in[0]); }};
    double worst = 0.0;
    for (int probe = 0; probe < 100; ++probe) {
      Vector x = uniform_vector(c.dim, c.lo, c.hi, rng);
      // Keep relu probes off its kink.
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (std::abs(x(i)) < 1e-3) x(i) = 0.5;
      }
      const Vector u = uniform_vector(output_size(fn, x), 0.5, 1.5, rng);
      const auto r = ad::grad_check([&](const Vector& p) { return contracted(fn, p, u); },
                                    [&](const Vector& p) { return pulled_back(fn, p, u); }, x, 1e-5);
      // Coordinates with an exactly zero derivative (relu off-region) give 0/0-free zeros.
      worst = std::max(worst, r.max_relative_error);
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("composed sum(tanh(Wx)) matches finite differences within 1e-6") {
  std::mt19937_64 rng(5);
  const Matrix w = Matrix::NullaryExpr(4, 3, [&] { return std::normal_distribution<double>(0.0, 1.0)(rng); });
  ad::Function fn{"sum_tanh", {3}, [&](Tape& t, std::span<const Var> in) {
                    return ad::sum(ad::tanh(t.affine(in[0], t.constant(w), t.constant(Matrix::Zero(4, 1)))));
                  }};
  for (int probe = 0; probe < 20; ++probe) {
    const Vector x = uniform_vector(3, -1, 1, rng);
    CHECK(ad::grad_check(fn, x, 1e-5).max_relative_error < 1e-6);
  }
}

TEST_CASE("vjp is linear in the cotangent") {
  std::mt19937_64 rng(9);
  ad::Function fn{"mix", {3}, [](Tape& t, std::span<const Var> in) {
                    Var h = ad::tanh(in[0]);
                    return ad::concat(h * in[0], ad::softplus(t.slice(in[0], 0, 2)));
                  }};
  for (int probe = 0; probe < 20; ++probe) {
    const Vector x = uniform_vector(3, -2, 2, rng);
    const Vector u = uniform_vector(5, -1, 1, rng);
    const Vector w = uniform_vector(5, -1, 1, rng);
    const double a = 1.7, b = -0.6;
    const Vector lhs = pulled_back(fn, x, a * u + b * w);
    const Vector rhs = a * pulled_back(fn, x, u) + b * pulled_back(fn, x, w);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("replaying a tape reproduces recorded outputs bit-exactly") {
  Mlp mlp({3, {8, 8}, 2, Activation::Softplus}, 4);
  Tape t;
  Var x = t.input(Matrix::Random(6, 3));
  Var out = ad::log_sum_exp(mlp.build(t, x, true));
  const Matrix first = t.replay(out);
  const Matrix second = t.replay(out);
  CHECK((first.array() == out.value().array()).all());
  CHECK((first.array() == second.array()).all());
}

TEST_CASE("the reverse sweep visits each reachable node once") {
  Tape t;
  Var x = t.input(Matrix::Constant(1, 2, 0.3));
  Var a = ad::tanh(x);
  Var b = a * a;
  Var c = a + b;
  [[maybe_unused]] Var unused = ad::softplus(x);
  Var out = ad::sum(c);
  const auto g = t.backward(out, Matrix::Ones(1, 1));
  CHECK(t.size() == 6);
  CHECK(t.last_sweep_visits() == 5);
  // d/dx sum(tanh x + tanh^2 x) = (1 + 2 tanh x)(1 - tanh^2 x).
  const double th = std::tanh(0.3);
  CHECK(g.wrt(x)(0, 0) == doctest::Approx((1 + 2 * th) * (1 - th * th)).epsilon(1e-14));
  CHECK(g.wrt(unused).norm() == 0.0);
}

TEST_CASE("grad_check behaviour") {
  SUBCASE("quadratic is exact up to rounding") {
    const auto r = ad::grad_check([](const Vector& x) { return x.squaredNorm(); },
                                  [](const Vector& x) { return Vector(2.0 * x); }, Vector::Constant(1, 2.0), 1e-5);
    CHECK(r.max_relative_error < 1e-7);
    CHECK(r.reliable);
  }
  SUBCASE("abs at zero is flagged unreliable") {
    const auto r = ad::grad_check([](const Vector& x) { return std::abs(x(0)); },
                                  [](const Vector& x) { return Vector::Constant(1, x(0) >= 0 ? 1.0 : -1.0); },
                                  Vector::Zero(1), 1e-5);
    CHECK_FALSE(r.reliable);
  }
  SUBCASE("step outside (0, 1e-2] is rejected") {
    auto f = [](const Vector& x) { return x(0); };
    auto g = [](const Vector&) { return Vector::Ones(1); };
    CHECK_THROWS_AS(ad::grad_check(f, g, Vector::Zero(1), 0.0), DomainError);
    CHECK_THROWS_AS(ad::grad_check(f, g, Vector::Zero(1), 0.02), DomainError);
    CHECK_NOTHROW(ad::grad_check(f, g, Vector::Zero(1), 1e-2));
  }
  SUBCASE("non-finite values at probes are errors") {
    auto f = [](const Vector& x) { return std::log(x(0)); };
    auto g = [](const Vector& x) { return Vector::Constant(1, 1.0 / x(0)); };
    CHECK_THROWS_AS(ad::grad_check(f, g, Vector::Constant(1, 1e-6), 1e-5), NonFiniteError);
  }
}

TEST_CASE("trained two-layer MLP passes grad_check at random points") {
  Mlp mlp({2, {16, 16}, 1, Activation::Tanh}, 21);
  SgdMomentum opt(mlp.parameters(), 0.05, 0.9, 1.0);
  std::mt19937_64 rng(3);
  for (int step = 0; step < 300; ++step) {
    Matrix x = Matrix::NullaryExpr(64, 2, [&] { return std::uniform_real_distribution<double>(-2, 2)(rng); });
    Matrix y(64, 1);
    for (Eigen::Index i = 0; i < 64; ++i) y(i, 0) = std::sin(x(i, 0)) + 0.5 * x(i, 1) * x(i, 1);
    Tape t;
    Var pred = mlp.build(t, t.constant(x), true);
    Var loss = (1.0 / 64) * ad::sum(ad::squared_norm(pred - t.constant(y)));
    opt.step(mlp.parameters(), t.backward(loss, Matrix::Ones(1, 1)).for_store(mlp.parameters()));
  }
  ad::Function fn{"mlp", {2}, [&](Tape& t, std::span<const Var> in) { return mlp.build(t, in[0]); }};
  for (int probe = 0; probe < 20; ++probe) {
    CHECK(ad::grad_check(fn, uniform_vector(2, -2, 2, rng), 1e-5).max_relative_error < 1e-5);
  }
}

TEST_CASE("parameter store bookkeeping") {
  ParameterStore store({{"w", 2, 3}, {"b", 2, 1}});
  CHECK(store.parameter_count() == 8);
  const auto v0 = store.version();
  store.set(0, Matrix::Ones(2, 3));
  CHECK(store.version() == v0 + 1);
  CHECK_THROWS_AS(store.set(0, Matrix::Ones(3, 2)), DimensionError);
  const std::vector<Matrix> delta = store.zeros_like();
  store.add_scaled(delta, 1.0);
  CHECK(store.version() == v0 + 2);
  store.freeze();
  CHECK_THROWS(store.set(1, Matrix::Zero(2, 1)));
  ParameterStore copy = store.thawed_copy();
  CHECK_FALSE(copy.frozen());
  CHECK(copy.flatten() == store.flatten());
}
