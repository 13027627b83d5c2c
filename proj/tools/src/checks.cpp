#include "node_adapter_cli/checks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "node_adapter/autodiff.hpp"
#include "node_adapter/gradient_field.hpp"
#include "node_adapter/rng.hpp"

namespace node_adapter::cli {

namespace {

Matrix random_matrix(SplitMix64& rng, std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

double dot(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

// Central differences of `loss` with respect to every entry of every tensor in `inputs`.
std::vector<Matrix> numeric_gradients(std::vector<Matrix*> inputs, const std::function<double()>& loss, double h) {
  std::vector<Matrix> grads;
  for (Matrix* m : inputs) {
    Matrix g(m->rows(), m->cols());
    for (std::size_t i = 0; i < m->size(); ++i) {
      double& x = m->values()[i];
      const double keep = x;
      x = keep + h;
      const double up = loss();
      x = keep - h;
      const double down = loss();
      x = keep;
      g.values()[i] = (up - down) / (2.0 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

std::size_t entry_count(std::span<const Matrix> ms) {
  std::size_t n = 0;
  for (const auto& m : ms) n += m.size();
  return n;
}

struct FieldInstance {
  field::FieldConfig cfg;
  field::FieldParameters params;
  field::SupportContext ctx;
  Matrix P;
};

FieldInstance make_instance(const GradcheckOptions& opt, SplitMix64& rng) {
  FieldInstance inst;
  inst.cfg.dim = opt.dim;
  inst.cfg.embed_dim = opt.embed_dim;
  inst.params = field::FieldParameters::random(inst.cfg, rng.next());
  // Non-zero biases so every bias path carries gradient.
  for (std::size_t k = 1; k < field::kParameterTensors; k += 2) {
    for (double& v : inst.params.tensors()[k]->values()) v = rng.uniform(-0.2, 0.2);
  }
  inst.ctx.features = tensor::l2_normalize_rows(random_matrix(rng, opt.samples, opt.dim));
  inst.ctx.one_hot = Matrix(opt.samples, opt.classes);
  for (std::size_t i = 0; i < opt.samples; ++i) inst.ctx.one_hot(i, i % opt.classes) = 1.0;
  inst.P = random_matrix(rng, opt.classes, opt.dim, -0.5, 0.5);
  return inst;
}

std::vector<Matrix*> perturbable(FieldInstance& inst) {
  std::vector<Matrix*> out{&inst.P};
  for (Matrix* m : inst.params.tensors()) out.push_back(m);
  return out;
}

}  // namespace

double max_relative_error(std::span<const Matrix> analytic, std::span<const Matrix> numeric) {
  double global = 0.0;
  for (const auto& n : numeric) global = std::max(global, tensor::max_abs(n));
  double worst = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    tensor::require_same_shape(analytic[k], numeric[k], "max_relative_error");
    const double floor = std::max(kRelativeFloor * std::max(tensor::max_abs(analytic[k]), tensor::max_abs(numeric[k])),
                                  kGlobalFloor * global);
    for (std::size_t i = 0; i < analytic[k].size(); ++i) {
      const double a = analytic[k].values()[i];
      const double n = numeric[k].values()[i];
      const double denom = std::max({std::abs(a), std::abs(n), floor});
      if (denom > 0.0) worst = std::max(worst, std::abs(a - n) / denom);
    }
  }
  return worst;
}

CheckResult check_tape(const GradcheckOptions& opt) {
  SplitMix64 rng(SplitMix64::mix64(opt.seed ^ 0x7a9e));
  Matrix x = random_matrix(rng, 6, 4);
  Matrix W = random_matrix(rng, 4, 4);
  Matrix b = random_matrix(rng, 1, 4);
  Matrix c = random_matrix(rng, 6, 1, 0.5, 1.5);
  const std::vector<std::size_t> picks = {0, 2, 1, 1, 0, 2};

  auto build = [&](ad::Tape& tape, std::vector<ad::Var>& leaves) {
    leaves = {tape.variable(x), tape.variable(W), tape.variable(b), tape.variable(c)};
    const auto &vx = leaves[0], &vW = leaves[1], &vb = leaves[2], &vc = leaves[3];
    const ad::Var h = ad::scale_rows(ad::sigmoid(ad::add_row(ad::matmul(vx, vW), vb)), vc);
    const ad::Var n = ad::l2_normalize_rows(ad::sub(h, ad::scale(ad::transpose(ad::transpose(vx)), 0.3)));
    const ad::Var att = ad::block_attention(n, ad::matmul(n, vW), ad::hadamard(n, h), 2, 2);
    const ad::Var s = ad::softmax_axis(ad::matmul_nt(att, ad::slice_rows(h, 0, 3)), tensor::Axis::Cols);
    const ad::Var r = ad::block_sum_rows(ad::block_softmax_rows(ad::add(att, h), 2), 2);
    const ad::Var rep = ad::tile_rows(ad::repeat_rows(ad::slice_rows(n, 1, 2), 2), 2);
    return ad::add(ad::add(ad::mean(ad::log(ad::pick(s, picks))), ad::sum(ad::hadamard(r, r))),
                   ad::mean(ad::relu(ad::add(rep, rep))));
  };

  ad::Tape tape;
  std::vector<ad::Var> leaves;
  const ad::Var loss = build(tape, leaves);
  const auto analytic = tape.grad(loss, leaves);
  const auto numeric = numeric_gradients({&x, &W, &b, &c},
                                         [&] {
                                           ad::Tape t;
                                           std::vector<ad::Var> l;
                                           return build(t, l).value()(0, 0);
                                         },
                                         opt.fd_step);
  return {"tape", max_relative_error(analytic, numeric), entry_count(analytic)};
}

CheckResult check_field(const GradcheckOptions& opt) {
  SplitMix64 rng(SplitMix64::mix64(opt.seed ^ 0xf1e1d));
  FieldInstance inst = make_instance(opt, rng);
  const double t = 0.37 * inst.cfg.horizon;
  const Matrix C = random_matrix(rng, opt.classes, opt.dim);

  const field::GradientField f(inst.cfg, inst.params, inst.ctx);
  auto vjp = f.vjp(inst.P, t, C);
  std::vector<Matrix> analytic{std::move(vjp.wrt_state)};
  for (auto& g : vjp.wrt_params) analytic.push_back(std::move(g));

  const auto numeric = numeric_gradients(
      perturbable(inst), [&] { return dot(C, field::field_eval(inst.P, t, inst.ctx, inst.params, inst.cfg)); },
      opt.fd_step);
  return {"field", max_relative_error(analytic, numeric), entry_count(analytic)};
}

CheckResult check_adjoint(const GradcheckOptions& opt) {
  SplitMix64 rng(SplitMix64::mix64(opt.seed ^ 0xad70));
  FieldInstance inst = make_instance(opt, rng);
  const Matrix G = random_matrix(rng, opt.classes, opt.dim);
  ode::SolverConfig solver{opt.method, opt.steps, opt.t0, opt.tm};
  solver.validate();

  const field::GradientField f(inst.cfg, inst.params, inst.ctx);
  auto adj = ode::adjoint_gradients(f, inst.P, solver, G);
  std::vector<Matrix> analytic{std::move(adj.dL_dp0)};
  for (auto& g : adj.dL_dtheta) analytic.push_back(std::move(g));

  const auto numeric = numeric_gradients(
      perturbable(inst),
      [&] {
        // A fresh field per evaluation: the field caches derived weights.
        const field::GradientField g(inst.cfg, inst.params, inst.ctx);
        return dot(G, ode::integrate([&](const Matrix& p, double tt) { return g.eval(p, tt); }, inst.P, solver));
      },
      opt.fd_step);
  return {"adjoint", max_relative_error(analytic, numeric), entry_count(analytic)};
}

std::vector<CheckResult> run_gradchecks(const GradcheckOptions& opt) {
  return {check_tape(opt), check_field(opt), check_adjoint(opt)};
}

std::vector<SolverBenchRow> solver_bench(std::span<const ode::Method> methods, std::span<const int> steps) {
  const Matrix p0{{1.0}};
  const double exact = std::exp(-1.0);
  const ode::Field decay = [](const Matrix& p, double) { return tensor::scale(p, -1.0); };
  std::vector<SolverBenchRow> rows;
  for (ode::Method m : methods) {
    for (int n : steps) {
      const ode::SolverConfig cfg{m, n, 0.0, 1.0};
      const Matrix p1 = ode::integrate(decay, p0, cfg);
      rows.push_back({m, n, cfg.h(), std::abs(p1(0, 0) - exact)});
    }
  }
  return rows;
}

std::string solver_bench_csv(std::span<const SolverBenchRow> rows) {
  std::ostringstream out;
  out.precision(17);
  out << "method,steps,h,global_error\n";
  for (const auto& r : rows) out << ode::to_string(r.method) << ',' << r.steps << ',' << r.h << ',' << r.global_error << '\n';
  return out.str();
}

}  // namespace node_adapter::cli
