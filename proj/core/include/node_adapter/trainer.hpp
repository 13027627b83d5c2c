#pragma once

// Full-batch training of the fusion vector u and the gradient field on a
// support set, with AdamW and a cosine learning-rate schedule.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "node_adapter/embedding_io.hpp"
#include "node_adapter/gradient_field.hpp"
#include "node_adapter/ode.hpp"

namespace node_adapter::train {

struct TrainConfig {
  int epochs = 20;
  double lr0 = 1e-3;
  double lr_min = 0.0;
  double temperature = 0.01;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double decay_rate = 0.1;  // eta
  double horizon = 30.0;    // T
  std::size_t embed_dim = 1024;
  ode::SolverConfig solver{};  // integrates over [solver.t0, solver.tm]
  std::uint64_t seed = 0;

  void validate() const;
  field::FieldConfig field_config(std::size_t dim) const;
};

/// lr0 at epoch 0, lr_min at epoch == epochs.
double cosine_lr(int epoch, const TrainConfig& cfg);

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
};

/// One AdamW update (decoupled decay: p <- p * (1 - lr * wd) before the
/// bias-corrected Adam step). Moments are created on first use.
void adamw_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state, double lr,
                const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;         // support loss before this epoch's update
  double support_acc = 0.0;  // support accuracy before this epoch's update
};

struct TrainedModel {
  field::FieldConfig field;
  field::FieldParameters params;
  Matrix u;     // D x 1
  Matrix P_tm;  // refined prototypes, N x D
  Matrix P_t;   // textual prototypes
  Matrix P_v;   // visual prototypes
  TrainConfig config;
  std::vector<std::string> class_names;
  int epochs_run = 0;

  std::size_t classes() const noexcept { return P_tm.rows(); }
  bool operator==(const TrainedModel&) const;
};

/// Support-set quantities that do not change across epochs.
struct Problem {
  Matrix P_t;
  Matrix P_v;
  field::SupportContext ctx;
  std::vector<std::uint32_t> labels;
};

/// Checks that support and prompts describe the same classes (MappingError
/// otherwise) and builds the fixed prototypes and support context.
Problem make_problem(const io::EmbeddingSet& support, const io::EmbeddingSet& prompts);

/// Loss of the refined prototypes on the support set, and its gradient with
/// respect to u and every field parameter (adjoint path).
struct LossAndGradients {
  double loss = 0.0;
  double support_acc = 0.0;
  Matrix P_tm;
  Matrix du;
  std::vector<Matrix> dparams;
};
LossAndGradients loss_and_gradients(const Problem& problem, const field::FieldParameters& params, const Matrix& u,
                                    const TrainConfig& cfg);

/// Forward only: P(tm) for the given parameters.
Matrix refine(const Problem& problem, const field::FieldParameters& params, const Matrix& u, const TrainConfig& cfg);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Throws DivergenceError(epoch) if the loss or the integration goes non-finite.
TrainedModel train(const io::EmbeddingSet& support, const io::EmbeddingSet& prompts, const TrainConfig& cfg,
                   const EpochCallback& on_epoch = {});

}  // namespace node_adapter::train
