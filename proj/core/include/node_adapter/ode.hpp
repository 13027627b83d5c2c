#pragma once

// Fixed-step integration of dP/dt = f(P, t) and adjoint-sensitivity gradients.

#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "node_adapter/tensor.hpp"

namespace node_adapter::ode {

enum class Method { Euler, AB2, ABM2, RK4 };

const char* to_string(Method m) noexcept;
/// Throws UsageError for unknown names.
Method parse_method(std::string_view name);
inline constexpr Method kAllMethods[] = {Method::Euler, Method::AB2, Method::ABM2, Method::RK4};

struct SolverConfig {
  Method method = Method::RK4;
  int steps = 30;
  double t0 = 0.0;
  double tm = 30.0;

  double h() const noexcept { return (tm - t0) / steps; }
  /// Throws UsageError unless steps >= 1 and tm > t0.
  void validate() const;
};

using Field = std::function<Matrix(const Matrix& p, double t)>;

/// Integrates p0 from cfg.t0 to cfg.tm. AB2/ABM2 take their first step with
/// RK4; ABM2 is one PECE pass (AB2 predictor, trapezoidal corrector). When
/// `trajectory` is given it receives p at every step boundary, p0 first.
/// Throws DivergenceError(step) on a non-finite field value.
Matrix integrate(const Field& field, const Matrix& p0, const SolverConfig& cfg,
                 std::vector<Matrix>* trajectory = nullptr);

/// Same stepping rules with an arbitrary signed step: `steps` steps of size
/// `h` from `t_start`. Used for backward-in-time passes.
Matrix integrate_steps(const Field& field, const Matrix& y0, double t_start, double h, int steps, Method method,
                       std::vector<Matrix>* trajectory = nullptr);

/// A field with parameters that can report vector-Jacobian products.
class DifferentiableField {
 public:
  virtual ~DifferentiableField() = default;

  struct Vjp {
    Matrix value;                   // f(p, t)
    Matrix wrt_state;               // cotangent^T df/dp
    std::vector<Matrix> wrt_params;  // cotangent^T df/dtheta, one per parameter tensor
  };

  virtual Matrix eval(const Matrix& p, double t) const = 0;
  virtual Vjp vjp(const Matrix& p, double t, const Matrix& cotangent) const = 0;
  /// (rows, cols) of every parameter tensor, in the order used by wrt_params.
  virtual std::vector<std::pair<std::size_t, std::size_t>> parameter_shapes() const = 0;
};

struct AdjointResult {
  Matrix dL_dp0;
  std::vector<Matrix> dL_dtheta;  // shaped like parameter_shapes()
  Matrix p_end;                   // forward endpoint used to start the backward pass
};

/// Integrates the augmented state (p, a, g) from tm back to t0 with cfg's
/// method and step count, where a(tm) = dL/dp(tm), da/dt = -a^T df/dp and
/// dg/dt = -a^T df/dtheta with g(tm) = 0. The forward trajectory is not
/// stored: p is recomputed backward from the endpoint, so working memory does
/// not grow with the step count. `p_end` may supply an already computed p(tm).
AdjointResult adjoint_gradients(const DifferentiableField& field, const Matrix& p0, const SolverConfig& cfg,
                                const Matrix& dL_dpm, const Matrix* p_end = nullptr);

}  // namespace node_adapter::ode
