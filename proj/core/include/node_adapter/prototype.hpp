#pragma once

// Textual, visual and fused class prototypes: the ODE initial value P(t0).

#include <cstdint>
#include <span>
#include <vector>

#include "node_adapter/autodiff.hpp"
#include "node_adapter/embedding_io.hpp"

namespace node_adapter::proto {

struct PrototypeState {
  Matrix P;  // N x D, rows not re-normalised
  double t = 0.0;
};

/// Fused rows below this norm are rejected: cosine scores would be undefined.
inline constexpr double kMinPrototypeNorm = 1e-9;

/// Row c = mean of the rows labelled c. Throws CapacityError for empty classes.
Matrix class_means(const Matrix& features, std::span<const std::uint32_t> labels, std::uint32_t classes);

Matrix textual_prototype(const io::EmbeddingSet& prompts);
Matrix visual_prototype(const io::EmbeddingSet& support);

/// lambda_j = sigmoid(P_v[j] . u); `u` is D x 1.
std::vector<double> fusion_coefficients(const Matrix& P_v, const Matrix& u);

/// Row j = lambda_j * P_v[j] + (1 - lambda_j) * P_t[j], at time t0.
PrototypeState fuse(const Matrix& P_t, const Matrix& P_v, std::span<const double> lambda, double t0 = 0.0);

/// fuse(P_t, P_v, fusion_coefficients(P_v, u)) recorded on u's tape.
ad::Var fuse_differentiable(const Matrix& P_t, const Matrix& P_v, const ad::Var& u);

/// Gradient of a loss with respect to u, given its gradient with respect to the fused prototypes.
Matrix fusion_vjp(const Matrix& P_t, const Matrix& P_v, const Matrix& u, const Matrix& dL_dP0);

}  // namespace node_adapter::proto
