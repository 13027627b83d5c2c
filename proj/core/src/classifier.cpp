#include "node_adapter/classifier.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "node_adapter/errors.hpp"

namespace node_adapter::cls {

namespace {

std::vector<std::size_t> checked_index(std::span<const std::uint32_t> labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows) throw ShapeError("ce_loss: label count does not match probability rows");
  std::vector<std::size_t> index(labels.begin(), labels.end());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= classes) throw MappingError("ce_loss: label " + std::to_string(index[i]) + " out of range");
  }
  return index;
}

}  // namespace

Matrix class_probabilities(const Matrix& features, const Matrix& P, double tau) {
  if (!(tau > 0.0)) throw UsageError("temperature must be > 0");
  const Matrix logits = tensor::scale(tensor::cosine_similarity(features, P), 1.0 / tau);
  return tensor::softmax_axis(logits, tensor::Axis::Cols);
}

ad::Var class_probabilities(const ad::Var& features, const ad::Var& P, double tau) {
  if (!(tau > 0.0)) throw UsageError("temperature must be > 0");
  const ad::Var sims = ad::matmul_nt(ad::l2_normalize_rows(features), ad::l2_normalize_rows(P));
  return ad::softmax_axis(ad::scale(sims, 1.0 / tau), tensor::Axis::Cols);
}

double ce_loss(const Matrix& probs, std::span<const std::uint32_t> labels) {
  const auto index = checked_index(labels, probs.rows(), probs.cols());
  if (index.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < index.size(); ++i) total -= std::log(std::max(probs(i, index[i]), kProbabilityFloor));
  return total / static_cast<double>(index.size());
}

ad::Var ce_loss(const ad::Var& probs, std::span<const std::uint32_t> labels) {
  const auto index = checked_index(labels, probs.rows(), probs.cols());
  return ad::scale(ad::mean(ad::log(ad::pick(probs, index), kProbabilityFloor)), -1.0);
}

std::vector<std::uint32_t> predict(const Matrix& features, const Matrix& P) {
  // Scores come from one scalar dot per pair rather than a GEMM: blocked GEMM
  // may round identical prototype rows differently by column position, and
  // ties must resolve to the lowest index.
  const Matrix X = tensor::l2_normalize_rows(features);
  const Matrix Q = tensor::l2_normalize_rows(P);
  if (X.cols() != Q.cols()) throw ShapeError("predict: features are " + X.shape_string() + ", prototypes " + Q.shape_string());
  std::vector<std::uint32_t> labels(X.rows(), 0);
  for (std::size_t r = 0; r < X.rows(); ++r) {
    const auto x = X.row(r);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < Q.rows(); ++k) {
      const auto q = Q.row(k);
      double dot = 0.0;
      for (std::size_t d = 0; d < x.size(); ++d) dot += x[d] * q[d];
      if (dot > best) {
        best = dot;
        labels[r] = static_cast<std::uint32_t>(k);
      }
    }
  }
  return labels;
}

double accuracy(std::span<const std::uint32_t> predicted, std::span<const std::uint32_t> truth) {
  if (predicted.size() != truth.size()) throw ShapeError("accuracy: length mismatch");
  if (truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

}  // namespace node_adapter::cls
