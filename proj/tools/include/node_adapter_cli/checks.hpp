#pragma once

// Finite-difference gradient checks and the solver convergence table behind
// the `gradcheck` and `solver-bench` commands.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "node_adapter/ode.hpp"

namespace node_adapter::cli {

/// Central differences carry ~1e-10 absolute roundoff, which swamps entries
/// near zero (some are exactly zero: softmax ignores the key bias). Entries
/// are therefore judged against at least kRelativeFloor of their tensor's
/// largest entry and kGlobalFloor of the largest entry of any tensor. At a
/// 1e-6 step the roundoff of a loss near 1 is ~1e-9, so with gradients of
/// order 0.05 the global floor must sit near 1e-4 for a 1e-4 check to
/// measure the gradient rather than the differencing.
inline constexpr double kRelativeFloor = 1e-3;
inline constexpr double kGlobalFloor = 1e-4;

/// Largest entrywise |a - n| / max(|a|, |n|, floor).
double max_relative_error(std::span<const Matrix> analytic, std::span<const Matrix> numeric);

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::size_t classes = 3;
  std::size_t dim = 4;
  std::size_t samples = 4;
  std::size_t embed_dim = 16;
  int steps = 8;
  ode::Method method = ode::Method::RK4;
  // Integration interval of the adjoint check. The continuous adjoint only
  // matches the discrete solver's derivative while the steps resolve the
  // field; a random field is stiff enough that 8 RK4 steps over [0, 1] can
  // sit at the stability edge, so the check uses [0, 0.5].
  double t0 = 0.0;
  double tm = 0.5;
  double fd_step = 1e-5;
};

struct CheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t entries = 0;  // gradient entries compared
};

/// A random composition of every differentiable tape op.
CheckResult check_tape(const GradcheckOptions& opt);
/// GradientField::vjp against central differences of <C, f(P, t)>, for P and every parameter.
CheckResult check_field(const GradcheckOptions& opt);
/// adjoint_gradients against central differences of <G, P(tm)>, for P(t0) and every parameter.
CheckResult check_adjoint(const GradcheckOptions& opt);
std::vector<CheckResult> run_gradchecks(const GradcheckOptions& opt);

struct SolverBenchRow {
  ode::Method method;
  int steps;
  double h;
  double global_error;
};

/// dp/dt = -p, p(0) = 1 on [0, 1]: |p(1) - e^-1| for every method and step count.
std::vector<SolverBenchRow> solver_bench(std::span<const ode::Method> methods, std::span<const int> steps);
/// Header `method,steps,h,global_error`.
std::string solver_bench_csv(std::span<const SolverBenchRow> rows);

}  // namespace node_adapter::cli
