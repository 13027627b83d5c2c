#include <doctest.h>

#include <cmath>

#include "node_adapter/errors.hpp"
#include "node_adapter/gradient_field.hpp"
#include "node_adapter/ode.hpp"
#include "support.hpp"

using namespace node_adapter;
using namespace node_adapter::ode;

namespace {

const Field kDecay = [](const Matrix& p, double) { return tensor::scale(p, -1.0); };

double decay_error(Method m, int steps) {
  const Matrix end = integrate(kDecay, Matrix{{1.0}}, {m, steps, 0.0, 1.0});
  return std::abs(end(0, 0) - std::exp(-1.0));
}

// dp/dt = A p for a column state; no parameters.
class LinearField final : public DifferentiableField {
 public:
  explicit LinearField(Matrix A) : A_(std::move(A)) {}
  Matrix eval(const Matrix& p, double) const override { return tensor::matmul(A_, p); }
  Vjp vjp(const Matrix& p, double t, const Matrix& c) const override {
    return {eval(p, t), tensor::matmul_tn(A_, c), {}};
  }
  std::vector<std::pair<std::size_t, std::size_t>> parameter_shapes() const override { return {}; }

 private:
  Matrix A_;
};

// dp/dt = theta * p with a 1x1 parameter theta.
class ScaledField final : public DifferentiableField {
 public:
  explicit ScaledField(double theta) : theta_(theta) {}
  Matrix eval(const Matrix& p, double) const override { return tensor::scale(p, theta_); }
  Vjp vjp(const Matrix& p, double t, const Matrix& c) const override {
    return {eval(p, t), tensor::scale(c, theta_), {Matrix{{testing::inner(c, p)}}}};
  }
  std::vector<std::pair<std::size_t, std::size_t>> parameter_shapes() const override { return {{1, 1}}; }

 private:
  double theta_;
};

class ZeroField final : public DifferentiableField {
 public:
  Matrix eval(const Matrix& p, double) const override { return Matrix(p.rows(), p.cols()); }
  Vjp vjp(const Matrix& p, double, const Matrix&) const override {
    return {Matrix(p.rows(), p.cols()), Matrix(p.rows(), p.cols()), {Matrix(2, 3)}};
  }
  std::vector<std::pair<std::size_t, std::size_t>> parameter_shapes() const override { return {{2, 3}}; }
};

Matrix series_exp(const Matrix& M, int terms) {
  Matrix sum = Matrix::identity(M.rows()), term = Matrix::identity(M.rows());
  for (int k = 1; k < terms; ++k) {
    term = tensor::scale(tensor::matmul(term, M), 1.0 / k);
    sum = tensor::add(sum, term);
  }
  return sum;
}

field::FieldParameters random_params(const field::FieldConfig& cfg, std::uint64_t seed) {
  field::FieldParameters p = field::FieldParameters::random(cfg, seed);
  SplitMix64 rng(seed ^ 0xb1a5);
  for (Matrix* b : {&p.gate_b, &p.embed_b, &p.query_b, &p.key_b, &p.value_b, &p.out_b, &p.weight_b})
    for (double& v : b->values()) v = rng.uniform(-0.2, 0.2);
  return p;
}

struct Instance {
  field::FieldConfig cfg;
  field::FieldParameters params;
  field::SupportContext ctx;
  Matrix p0;
};

Instance instance(std::uint64_t seed, std::size_t N, std::size_t D, std::size_t S, std::size_t de) {
  SplitMix64 rng(seed);
  Instance in;
  in.cfg.dim = D;
  in.cfg.embed_dim = de;
  in.params = random_params(in.cfg, seed);
  in.ctx = {testing::random_unit_rows(rng, S, D), Matrix(S, N)};
  for (std::size_t i = 0; i < S; ++i) in.ctx.one_hot(i, i % N) = 1.0;
  in.p0 = testing::random_matrix(rng, N, D, -0.5, 0.5);
  return in;
}

}  // namespace

TEST_CASE("zero field leaves the state unchanged for every method") {
  const Field zero = [](const Matrix& p, double) { return Matrix(p.rows(), p.cols()); };
  const Matrix p0{{1, -2}, {3, 0.5}};
  for (Method m : kAllMethods) CHECK(integrate(zero, p0, {m, 7, 0.0, 3.0}) == p0);
}

TEST_CASE("rk4 with 32 steps reproduces exp(-1)") { CHECK(decay_error(Method::RK4, 32) < 1e-7); }

TEST_CASE("Richardson ratios under step halving") {
  const double euler = decay_error(Method::Euler, 32) / decay_error(Method::Euler, 64);
  const double rk4 = decay_error(Method::RK4, 32) / decay_error(Method::RK4, 64);
  CHECK(euler >= 1.8);
  CHECK(euler <= 2.2);
  CHECK(rk4 >= 12);
  CHECK(rk4 <= 20);
}

TEST_CASE("property: observed orders 1, 2, 2, 4") {
  const std::pair<Method, double> expected[] = {
      {Method::Euler, 1.0}, {Method::AB2, 2.0}, {Method::ABM2, 2.0}, {Method::RK4, 4.0}};
  for (auto [m, order] : expected)
    for (int steps : {8, 16, 32}) {
      INFO(to_string(m), " at ", steps, " steps");
      const double observed = std::log2(decay_error(m, steps) / decay_error(m, 2 * steps));
      CHECK(std::abs(observed - order) <= 0.3);
    }
}

TEST_CASE("ranking at 8 steps: rk4 < abm2 <= ab2 < euler") {
  const double e = decay_error(Method::Euler, 8), a = decay_error(Method::AB2, 8), c = decay_error(Method::ABM2, 8),
               r = decay_error(Method::RK4, 8);
  CHECK(r < c);
  CHECK(c <= a);
  CHECK(a < e);
}

TEST_CASE("multistep schemes against a hand-written scalar loop") {
  // dp/dt = -p + sin(t); first step RK4, then AB2 or AB2+trapezoid.
  const Field f = [](const Matrix& p, double t) { return Matrix{{-p(0, 0) + std::sin(t)}}; };
  auto g = [](double p, double t) { return -p + std::sin(t); };
  const double h = 0.25;
  for (Method m : {Method::AB2, Method::ABM2}) {
    double y = 0.7, f_prev = 0;
    for (int n = 0; n < 8; ++n) {
      const double t = n * h, fn = g(y, t);
      if (n == 0) {
        const double k1 = fn, k2 = g(y + h / 2 * k1, t + h / 2), k3 = g(y + h / 2 * k2, t + h / 2),
                     k4 = g(y + h * k3, t + h);
        y += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
      } else {
        const double pred = y + h * (1.5 * fn - 0.5 * f_prev);
        y = m == Method::AB2 ? pred : y + h / 2 * (fn + g(pred, t + h));
      }
      f_prev = fn;
    }
    CHECK(std::abs(integrate(f, Matrix{{0.7}}, {m, 8, 0.0, 2.0})(0, 0) - y) < 1e-14);
  }
}

TEST_CASE("trajectory holds every step boundary") {
  std::vector<Matrix> traj;
  const Matrix end = integrate(kDecay, Matrix{{1.0}}, {Method::Euler, 4, 0.0, 1.0}, &traj);
  REQUIRE(traj.size() == 5);
  CHECK(traj.front() == Matrix{{1.0}});
  CHECK(traj.back() == end);
  CHECK(traj[1](0, 0) == 0.75);
}

TEST_CASE("non-finite field raises DivergenceError with the step index") {
  const Field bad = [](const Matrix& p, double t) {
    return t >= 0.5 ? Matrix{{std::nan("")}} : tensor::scale(p, -1.0);
  };
  try {
    integrate(bad, Matrix{{1.0}}, {Method::Euler, 10, 0.0, 1.0});
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.index() == 5);
  }
}

TEST_CASE("solver config validation") {
  CHECK_THROWS_AS(integrate(kDecay, Matrix{{1.0}}, {Method::RK4, 0, 0.0, 1.0}), UsageError);
  CHECK_THROWS_AS(integrate(kDecay, Matrix{{1.0}}, {Method::RK4, 4, 1.0, 1.0}), UsageError);
  CHECK(parse_method("abm2") == Method::ABM2);
  CHECK_THROWS_AS(parse_method("rk45"), UsageError);
}

TEST_CASE("property: rk4 forward then backward returns to the start") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SplitMix64 rng(seed);
    const Matrix A = testing::random_matrix(rng, 3, 3);
    const Field f = [&](const Matrix& p, double t) {
      Matrix out = tensor::matmul(p, A);
      for (double& v : out.values()) v = std::sin(v) + 0.1 * t;
      return out;
    };
    const Matrix p0 = testing::random_matrix(rng, 2, 3);
    const int steps = 20;
    const double h = rng.uniform(0.01, 0.1);
    const Matrix end = integrate_steps(f, p0, 0.0, h, steps, Method::RK4);
    const Matrix back = integrate_steps(f, end, steps * h, -h, steps, Method::RK4);
    CHECK(testing::max_diff(back, p0) < 1e-6);
  }
}

TEST_CASE("adjoint: zero field passes the cotangent through") {
  const Matrix g{{1, 2}, {3, 4}};
  const auto r = adjoint_gradients(ZeroField{}, Matrix(2, 2, 0.3), {Method::RK4, 5, 0.0, 1.0}, g);
  CHECK(r.dL_dp0 == g);
  REQUIRE(r.dL_dtheta.size() == 1);
  CHECK(r.dL_dtheta[0] == Matrix(2, 3));
}

TEST_CASE("adjoint: linear field against the matrix exponential series") {
  const Matrix A{{-0.4, 0.9}, {-0.3, 0.2}};
  const Matrix g{{0.7}, {-1.1}};
  const double T = 1.5;
  const Matrix want = tensor::matmul(series_exp(tensor::scale(tensor::transpose(A), T), 20), g);
  const auto r = adjoint_gradients(LinearField(A), Matrix{{1.0}, {2.0}}, {Method::RK4, 64, 0.0, T}, g);
  CHECK(testing::max_diff(r.dL_dp0, want) < 1e-9);
}

TEST_CASE("adjoint: parameter gradient of exponential growth") {
  // p(T) = exp(theta T) p0, so d<g, p(T)>/dtheta = T exp(theta T) <g, p0>.
  const double theta = -0.6, T = 2.0;
  const Matrix p0{{0.5, -1.0, 2.0}}, g{{1.0, 0.3, -0.2}};
  const auto r = adjoint_gradients(ScaledField(theta), p0, {Method::RK4, 64, 0.0, T}, g);
  const double want = T * std::exp(theta * T) * testing::inner(g, p0);
  CHECK(std::abs(r.dL_dtheta[0](0, 0) - want) < 1e-8);
  CHECK(testing::max_diff(r.dL_dp0, tensor::scale(g, std::exp(theta * T))) < 1e-9);
}

TEST_CASE("adjoint: gradient-field instance against finite differences") {
  // 8 rk4 steps over [0, 0.5]; see the gradcheck command for why the interval is short.
  const SolverConfig cfg{Method::RK4, 8, 0.0, 0.5};
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Instance in = instance(seed, 3, 4, 4, 16);
    SplitMix64 rng(seed + 77);
    const Matrix G = testing::random_matrix(rng, 3, 4);
    const field::GradientField f(in.cfg, in.params, in.ctx);
    const auto r = adjoint_gradients(f, in.p0, cfg, G);

    auto objective = [&] {
      const field::GradientField fresh(in.cfg, in.params, in.ctx);
      return testing::inner(G, integrate([&](const Matrix& p, double t) { return fresh.eval(p, t); }, in.p0, cfg));
    };
    CHECK(testing::relative_error(r.dL_dp0, testing::numeric_gradient(objective, in.p0, 1e-5)) < 1e-4);
    auto tensors = in.params.tensors();
    for (std::size_t k = 0; k < field::kParameterTensors; ++k) {
      INFO(std::string(field::kParameterNames[k]));
      const Matrix numeric = testing::numeric_gradient(objective, *tensors[k], 1e-5);
      if (testing::max_abs(numeric) < 1e-9) {
        CHECK(testing::max_abs(r.dL_dtheta[k]) < 1e-12);
        continue;
      }
      CHECK(testing::relative_error(r.dL_dtheta[k], numeric) < 1e-4);
    }
  }
}

TEST_CASE("adjoint agrees with differentiating the unrolled rk4 solver at 32 steps") {
  Instance in = instance(5, 3, 4, 5, 16);
  const double t0 = 0.0, tm = 1.0;
  const int steps = 32;
  SplitMix64 rng(78);
  const Matrix G = testing::random_matrix(rng, 3, 4);

  ad::Tape tape;
  const ad::Var p0 = tape.variable(in.p0);
  const auto vars = field::record_parameters(tape, in.params, true);
  auto f = [&](const ad::Var& p, double t) { return field::field_eval(p, t, in.ctx, vars, in.cfg); };
  const double h = (tm - t0) / steps;
  ad::Var y = p0;
  for (int n = 0; n < steps; ++n) {
    const double t = t0 + n * h;
    const ad::Var k1 = f(y, t);
    const ad::Var k2 = f(ad::add(y, ad::scale(k1, h / 2)), t + h / 2);
    const ad::Var k3 = f(ad::add(y, ad::scale(k2, h / 2)), t + h / 2);
    const ad::Var k4 = f(ad::add(y, ad::scale(k3, h)), t + h);
    y = ad::add(y, ad::scale(ad::add(ad::add(k1, k4), ad::scale(ad::add(k2, k3), 2.0)), h / 6));
  }
  std::vector<ad::Var> wrt{p0};
  wrt.insert(wrt.end(), vars.begin(), vars.end());
  const auto unrolled = tape.vjp(y, G, wrt);

  const field::GradientField field(in.cfg, in.params, in.ctx);
  const auto adj = adjoint_gradients(field, in.p0, {Method::RK4, steps, t0, tm}, G);
  CHECK(testing::relative_error(adj.dL_dp0, unrolled[0]) < 1e-3);
  for (std::size_t k = 0; k < field::kParameterTensors; ++k) {
    INFO(std::string(field::kParameterNames[k]));
    if (testing::max_abs(unrolled[k + 1]) < 1e-12) continue;
    CHECK(testing::relative_error(adj.dL_dtheta[k], unrolled[k + 1]) < 1e-3);
  }
}

TEST_CASE("adjoint working memory does not grow with the step count") {
  Instance in = instance(6, 3, 6, 6, 32);
  const field::GradientField f(in.cfg, in.params, in.ctx);
  const Matrix G(3, 6, 1.0);
  auto peak_for = [&](int steps) {
    const std::size_t base = tensor::allocation_stats().live_bytes;
    tensor::reset_allocation_peak();
    const auto r = adjoint_gradients(f, in.p0, {Method::RK4, steps, 0.0, 30.0}, G);
    return tensor::allocation_stats().peak_bytes - base;
  };
  const std::size_t p8 = peak_for(8), p64 = peak_for(64), p256 = peak_for(256);
  CHECK(p64 == p8);
  CHECK(p256 == p8);
}
