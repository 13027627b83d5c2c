// Field evaluation, vector-Jacobian products and full integrations at the
// synthetic-benchmark shape (N = 10 classes, |S| = 160, D = 32).

#include <benchmark/benchmark.h>

#include "node_adapter/gradient_field.hpp"
#include "node_adapter/ode.hpp"
#include "node_adapter/synthetic.hpp"
#include "node_adapter/tensor.hpp"
#include "node_adapter/trainer.hpp"

using namespace node_adapter;

namespace {

struct Setup {
  train::Problem problem;
  field::FieldConfig cfg;
  field::FieldParameters params;

  explicit Setup(std::size_t embed_dim, std::uint32_t shots = 16) {
    data::SyntheticSpec spec;
    spec.shots = shots;
    const auto b = data::synth_generate(spec);
    problem = train::make_problem(b.support, b.prompts);
    train::TrainConfig tc;
    tc.embed_dim = embed_dim;
    cfg = tc.field_config(spec.dim);
    params = field::FieldParameters::initialize(cfg, 7);
  }
};

void BM_FieldEval(benchmark::State& state) {
  const Setup s(static_cast<std::size_t>(state.range(0)), static_cast<std::uint32_t>(state.range(1)));
  const field::GradientField f(s.cfg, s.params, s.problem.ctx);
  for (auto _ : state) benchmark::DoNotOptimize(f.eval(s.problem.P_v, 1.0));
}
BENCHMARK(BM_FieldEval)->Args({64, 16})->Args({64, 4})->Args({256, 16})->Unit(benchmark::kMillisecond);

void BM_FieldVjp(benchmark::State& state) {
  const Setup s(static_cast<std::size_t>(state.range(0)), static_cast<std::uint32_t>(state.range(1)));
  const field::GradientField f(s.cfg, s.params, s.problem.ctx);
  for (auto _ : state) benchmark::DoNotOptimize(f.vjp(s.problem.P_v, 1.0, s.problem.P_t));
}
BENCHMARK(BM_FieldVjp)->Args({64, 16})->Args({64, 4})->Args({256, 16})->Unit(benchmark::kMillisecond);

// The tape composition the fused kernel replaces.
void BM_FieldEvalTape(benchmark::State& state) {
  const Setup s(64, static_cast<std::uint32_t>(state.range(0)));
  for (auto _ : state) {
    ad::Tape tape;
    const auto vars = field::record_parameters(tape, s.params, false);
    benchmark::DoNotOptimize(field::field_eval(tape.constant(s.problem.P_v), 1.0, s.problem.ctx, vars, s.cfg));
  }
}
BENCHMARK(BM_FieldEvalTape)->Arg(16)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_Integrate(benchmark::State& state) {
  const Setup s(64, 4);
  const field::GradientField f(s.cfg, s.params, s.problem.ctx);
  const ode::SolverConfig solver{static_cast<ode::Method>(state.range(0)), 30, 0.0, 30.0};
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        ode::integrate([&](const Matrix& p, double t) { return f.eval(p, t); }, s.problem.P_v, solver));
  }
  state.SetLabel(ode::to_string(solver.method));
}
BENCHMARK(BM_Integrate)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);

void BM_Adjoint(benchmark::State& state) {
  const Setup s(64, 4);
  const field::GradientField f(s.cfg, s.params, s.problem.ctx);
  const ode::SolverConfig solver{ode::Method::RK4, static_cast<int>(state.range(0)), 0.0, 30.0};
  for (auto _ : state) benchmark::DoNotOptimize(ode::adjoint_gradients(f, s.problem.P_v, solver, s.problem.P_t));
}
BENCHMARK(BM_Adjoint)->Arg(8)->Arg(30)->Unit(benchmark::kMillisecond);

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Matrix a(n, n, 0.5), b(n, n, 0.25);
  for (auto _ : state) benchmark::DoNotOptimize(tensor::matmul(a, b));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128)->Arg(512);

}  // namespace

BENCHMARK_MAIN();
