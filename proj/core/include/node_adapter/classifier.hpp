#pragma once

// Temperature-scaled cosine classifier over class prototypes.

#include <cstdint>
#include <span>
#include <vector>

#include "node_adapter/autodiff.hpp"

namespace node_adapter::cls {

/// Probabilities are floored at this value inside the log of the loss.
inline constexpr double kProbabilityFloor = 1e-30;

/// softmax over classes of cos(x, p_k) / tau; m x N. Throws DegenerateInputError for zero rows.
Matrix class_probabilities(const Matrix& features, const Matrix& P, double tau);
ad::Var class_probabilities(const ad::Var& features, const ad::Var& P, double tau);

/// Mean of -log max(p[i, y_i], floor).
double ce_loss(const Matrix& probs, std::span<const std::uint32_t> labels);
ad::Var ce_loss(const ad::Var& probs, std::span<const std::uint32_t> labels);

/// argmax_k cos(x, p_k) per row; exact ties go to the lowest class index.
std::vector<std::uint32_t> predict(const Matrix& features, const Matrix& P);

/// Fraction of rows where predicted == truth (0 for an empty set).
double accuracy(std::span<const std::uint32_t> predicted, std::span<const std::uint32_t> truth);

}  // namespace node_adapter::cls
