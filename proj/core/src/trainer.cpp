#include "node_adapter/trainer.hpp"

#include <cmath>
#include <numbers>

#include "node_adapter/classifier.hpp"
#include "node_adapter/errors.hpp"
#include "node_adapter/prototype.hpp"

namespace node_adapter::train {

void TrainConfig::validate() const {
  if (epochs < 0) throw UsageError("epochs must be >= 0");
  if (!(temperature > 0.0)) throw UsageError("temperature must be > 0");
  if (!(lr0 >= 0.0) || !(lr_min >= 0.0)) throw UsageError("learning rates must be >= 0");
  if (!(weight_decay >= 0.0)) throw UsageError("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw UsageError("betas must be in [0, 1)");
  if (!(eps > 0.0)) throw UsageError("eps must be > 0");
  if (embed_dim < 1) throw UsageError("embed_dim must be >= 1");
  if (!(horizon > 0.0)) throw UsageError("horizon must be > 0");
  solver.validate();
}

field::FieldConfig TrainConfig::field_config(std::size_t dim) const {
  field::FieldConfig f;
  f.dim = dim;
  f.embed_dim = embed_dim;
  f.decay_rate = decay_rate;
  f.horizon = horizon;
  return f;
}

double cosine_lr(int epoch, const TrainConfig& cfg) {
  if (cfg.epochs <= 0) return cfg.lr0;
  const double progress = static_cast<double>(epoch) / cfg.epochs;
  return cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state, double lr,
                const TrainConfig& cfg) {
  if (params.size() != grads.size()) throw ShapeError("adamw_step: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (const Matrix* p : params) {
      state.m.emplace_back(p->rows(), p->cols());
      state.v.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adamw_step: optimizer state does not match parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const double shrink = 1.0 - lr * cfg.weight_decay;
  for (std::size_t k = 0; k < params.size(); ++k) {
    tensor::require_same_shape(*params[k], grads[k], "adamw_step");
    auto p = params[k]->values();
    auto m = state.m[k].values();
    auto v = state.v[k].values();
    const auto g = grads[k].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      p[j] *= shrink;
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.eps);
    }
  }
}

bool TrainedModel::operator==(const TrainedModel& o) const {
  return params == o.params && u == o.u && P_tm == o.P_tm && P_t == o.P_t && P_v == o.P_v &&
         class_names == o.class_names && epochs_run == o.epochs_run;
}

Problem make_problem(const io::EmbeddingSet& support, const io::EmbeddingSet& prompts) {
  support.validate();
  prompts.validate();
  if (support.num_classes != prompts.num_classes) {
    throw MappingError("support has " + std::to_string(support.num_classes) + " classes, prompts have " +
                       std::to_string(prompts.num_classes));
  }
  if (!support.class_names.empty() && !prompts.class_names.empty() && support.class_names != prompts.class_names) {
    throw MappingError("support and prompt class names differ");
  }
  if (support.size() && prompts.size() && support.dim() != prompts.dim()) {
    throw MappingError("support and prompt feature widths differ");
  }
  Problem problem;
  try {
    problem.P_t = proto::textual_prototype(prompts);
    problem.P_v = proto::visual_prototype(support);
  } catch (const CapacityError& e) {
    throw MappingError(std::string("support and prompts must cover the same classes: ") + e.what());
  }
  problem.ctx = field::SupportContext::from(support);
  problem.labels = support.labels;
  return problem;
}

namespace {

Matrix initial_state(const Problem& problem, const Matrix& u, const TrainConfig& cfg) {
  return proto::fuse(problem.P_t, problem.P_v, proto::fusion_coefficients(problem.P_v, u), cfg.solver.t0).P;
}

}  // namespace

Matrix refine(const Problem& problem, const field::FieldParameters& params, const Matrix& u, const TrainConfig& cfg) {
  const field::GradientField f(cfg.field_config(problem.P_v.cols()), params, problem.ctx);
  return ode::integrate([&](const Matrix& p, double t) { return f.eval(p, t); }, initial_state(problem, u, cfg),
                        cfg.solver);
}

LossAndGradients loss_and_gradients(const Problem& problem, const field::FieldParameters& params, const Matrix& u,
                                    const TrainConfig& cfg) {
  const field::GradientField f(cfg.field_config(problem.P_v.cols()), params, problem.ctx);
  const Matrix p0 = initial_state(problem, u, cfg);

  LossAndGradients out;
  out.P_tm = ode::integrate([&](const Matrix& p, double t) { return f.eval(p, t); }, p0, cfg.solver);

  Matrix dL_dpm;
  {
    ad::Tape tape;
    const ad::Var pm = tape.variable(out.P_tm);
    const ad::Var probs = cls::class_probabilities(tape.constant(problem.ctx.features), pm, cfg.temperature);
    const ad::Var loss = cls::ce_loss(probs, problem.labels);
    out.loss = loss.value()(0, 0);
    const ad::Var wrt[] = {pm};
    dL_dpm = std::move(tape.grad(loss, wrt)[0]);
  }
  out.support_acc = cls::accuracy(cls::predict(problem.ctx.features, out.P_tm), problem.labels);
  if (!std::isfinite(out.loss)) return out;

  auto adj = ode::adjoint_gradients(f, p0, cfg.solver, dL_dpm, &out.P_tm);
  out.dparams = std::move(adj.dL_dtheta);
  out.du = proto::fusion_vjp(problem.P_t, problem.P_v, u, adj.dL_dp0);
  return out;
}

TrainedModel train(const io::EmbeddingSet& support, const io::EmbeddingSet& prompts, const TrainConfig& cfg,
                   const EpochCallback& on_epoch) {
  cfg.validate();
  const Problem problem = make_problem(support, prompts);
  const std::size_t dim = problem.P_v.cols();

  TrainedModel model;
  model.field = cfg.field_config(dim);
  model.params = field::FieldParameters::initialize(model.field, cfg.seed);
  model.u = Matrix(dim, 1);
  model.P_t = problem.P_t;
  model.P_v = problem.P_v;
  model.config = cfg;
  model.class_names = support.class_names.empty() ? prompts.class_names : support.class_names;

  auto params = model.params.tensors();
  std::vector<Matrix*> all(params.begin(), params.end());
  all.push_back(&model.u);

  AdamState state;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    LossAndGradients step;
    try {
      step = loss_and_gradients(problem, model.params, model.u, cfg);
    } catch (const DivergenceError& e) {
      throw DivergenceError(epoch, "epoch " + std::to_string(epoch) + ": " + e.what());
    }
    if (!std::isfinite(step.loss)) throw DivergenceError(epoch, "epoch " + std::to_string(epoch) + ": non-finite loss");

    const EpochRecord record{epoch, cosine_lr(epoch, cfg), step.loss, step.support_acc};
    if (on_epoch) on_epoch(record);

    std::vector<Matrix> grads = std::move(step.dparams);
    grads.push_back(std::move(step.du));
    adamw_step(all, grads, state, record.lr, cfg);
    model.epochs_run = epoch + 1;
  }
  try {
    model.P_tm = refine(problem, model.params, model.u, cfg);
  } catch (const DivergenceError& e) {
    throw DivergenceError(cfg.epochs, std::string("final refinement: ") + e.what());
  }
  return model;
}

}  // namespace node_adapter::train
