#include "node_adapter/ode.hpp"

#include <string>

#include "node_adapter/errors.hpp"

namespace node_adapter::ode {

const char* to_string(Method m) noexcept {
  switch (m) {
    case Method::Euler: return "euler";
    case Method::AB2: return "ab2";
    case Method::ABM2: return "abm2";
    case Method::RK4: return "rk4";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (Method m : kAllMethods)
    if (name == to_string(m)) return m;
  throw UsageError("unknown solver method '" + std::string(name) + "' (expected euler, ab2, abm2 or rk4)");
}

void SolverConfig::validate() const {
  if (steps < 1) throw UsageError("solver steps must be >= 1");
  if (!(tm > t0)) throw UsageError("solver interval must satisfy tm > t0");
}

namespace {

class Stepper {
 public:
  Stepper(const Field& field, int step) : field_(field), step_(step) {}

  Matrix operator()(const Matrix& y, double t) const {
    Matrix f = field_(y, t);
    if (!tensor::all_finite(f)) throw DivergenceError(step_, "non-finite field value at t = " + std::to_string(t));
    return f;
  }

 private:
  const Field& field_;
  int step_;
};

Matrix rk4_step(const Stepper& f, const Matrix& y, double t, double h, const Matrix& k1) {
  Matrix tmp = y;
  tensor::axpy(tmp, 0.5 * h, k1);
  const Matrix k2 = f(tmp, t + 0.5 * h);
  tmp = y;
  tensor::axpy(tmp, 0.5 * h, k2);
  const Matrix k3 = f(tmp, t + 0.5 * h);
  tmp = y;
  tensor::axpy(tmp, h, k3);
  const Matrix k4 = f(tmp, t + h);
  Matrix out = y;
  tensor::axpy(out, h / 6.0, k1);
  tensor::axpy(out, h / 3.0, k2);
  tensor::axpy(out, h / 3.0, k3);
  tensor::axpy(out, h / 6.0, k4);
  return out;
}

}  // namespace

Matrix integrate_steps(const Field& field, const Matrix& y0, double t_start, double h, int steps, Method method,
                       std::vector<Matrix>* trajectory) {
  Matrix y = y0;
  if (trajectory) {
    trajectory->clear();
    trajectory->push_back(y);
  }
  Matrix f_prev;  // f at the previous step boundary (multistep methods)
  for (int n = 0; n < steps; ++n) {
    const Stepper f(field, n);
    // t from the step index, so long runs do not accumulate rounding in t.
    const double t = t_start + n * h;
    switch (method) {
      case Method::Euler:
        tensor::axpy(y, h, f(y, t));
        break;
      case Method::RK4:
        y = rk4_step(f, y, t, h, f(y, t));
        break;
      case Method::AB2:
      case Method::ABM2: {
        Matrix f_n = f(y, t);
        if (n == 0) {
          Matrix next = rk4_step(f, y, t, h, f_n);
          y = std::move(next);
        } else {
          Matrix pred = y;
          tensor::axpy(pred, 1.5 * h, f_n);
          tensor::axpy(pred, -0.5 * h, f_prev);
          if (method == Method::AB2) {
            y = std::move(pred);
          } else {
            const Matrix f_pred = f(pred, t + h);
            tensor::axpy(y, 0.5 * h, f_n);
            tensor::axpy(y, 0.5 * h, f_pred);
          }
        }
        f_prev = std::move(f_n);
        break;
      }
    }
    if (trajectory) trajectory->push_back(y);
  }
  return y;
}

Matrix integrate(const Field& field, const Matrix& p0, const SolverConfig& cfg, std::vector<Matrix>* trajectory) {
  cfg.validate();
  return integrate_steps(field, p0, cfg.t0, cfg.h(), cfg.steps, cfg.method, trajectory);
}

AdjointResult adjoint_gradients(const DifferentiableField& field, const Matrix& p0, const SolverConfig& cfg,
                                const Matrix& dL_dpm, const Matrix* p_end) {
  cfg.validate();
  tensor::require_same_shape(p0, dL_dpm, "adjoint_gradients");
  const auto shapes = field.parameter_shapes();

  AdjointResult result;
  result.p_end = p_end ? *p_end
                       : integrate([&](const Matrix& p, double t) { return field.eval(p, t); }, p0, cfg);
  tensor::require_same_shape(p0, result.p_end, "adjoint_gradients endpoint");

  // Augmented state packed as one row: [p | a | g_0 | g_1 | ...].
  const std::size_t rows = p0.rows();
  const std::size_t cols = p0.cols();
  const std::size_t n_state = rows * cols;
  std::size_t n_total = 2 * n_state;
  for (auto [r, c] : shapes) n_total += r * c;

  Matrix y(1, n_total);
  auto pack = [](std::span<double> dst, std::span<const double> src, double sign) {
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] = sign * src[k];
  };
  pack(y.values().subspan(0, n_state), result.p_end.values(), 1.0);
  pack(y.values().subspan(n_state, n_state), dL_dpm.values(), 1.0);

  const Field augmented = [&](const Matrix& state, double t) {
    const auto v = state.values();
    const Matrix p(rows, cols, v.subspan(0, n_state));
    const Matrix a(rows, cols, v.subspan(n_state, n_state));
    const auto j = field.vjp(p, t, a);
    Matrix out(1, n_total);
    auto o = out.values();
    pack(o.subspan(0, n_state), j.value.values(), 1.0);
    pack(o.subspan(n_state, n_state), j.wrt_state.values(), -1.0);
    std::size_t off = 2 * n_state;
    for (const auto& g : j.wrt_params) {
      pack(o.subspan(off, g.size()), g.values(), -1.0);
      off += g.size();
    }
    return out;
  };
  y = integrate_steps(augmented, y, cfg.tm, -cfg.h(), cfg.steps, cfg.method);

  const auto v = y.values();
  result.dL_dp0 = Matrix(rows, cols, v.subspan(n_state, n_state));
  std::size_t off = 2 * n_state;
  for (auto [r, c] : shapes) {
    result.dL_dtheta.emplace_back(r, c, v.subspan(off, r * c));
    off += r * c;
  }
  return result;
}

}  // namespace node_adapter::ode
