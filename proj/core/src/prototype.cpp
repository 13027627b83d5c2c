#include "node_adapter/prototype.hpp"

#include <cmath>
#include <string>

#include "node_adapter/errors.hpp"

namespace node_adapter::proto {

Matrix class_means(const Matrix& features, std::span<const std::uint32_t> labels, std::uint32_t classes) {
  if (labels.size() != features.rows()) throw ShapeError("class_means: label count does not match rows");
  Matrix sums(classes, features.cols());
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= classes) throw MappingError("class_means: label " + std::to_string(labels[r]) + " out of range");
    auto dst = sums.row(labels[r]);
    const auto src = features.row(r);
    for (std::size_t d = 0; d < dst.size(); ++d) dst[d] += src[d];
    ++counts[labels[r]];
  }
  for (std::uint32_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) throw CapacityError("class " + std::to_string(c) + " has no rows");
    for (double& v : sums.row(c)) v /= static_cast<double>(counts[c]);
  }
  return sums;
}

Matrix textual_prototype(const io::EmbeddingSet& prompts) {
  return class_means(prompts.features, prompts.labels, prompts.num_classes);
}

Matrix visual_prototype(const io::EmbeddingSet& support) {
  return class_means(support.features, support.labels, support.num_classes);
}

std::vector<double> fusion_coefficients(const Matrix& P_v, const Matrix& u) {
  if (u.rows() != P_v.cols() || u.cols() != 1) {
    throw ShapeError("fusion_coefficients: u is " + u.shape_string() + ", expected " + std::to_string(P_v.cols()) +
                     " x 1");
  }
  const Matrix s = tensor::matmul(P_v, u);
  std::vector<double> lambda(P_v.rows());
  for (std::size_t j = 0; j < lambda.size(); ++j) lambda[j] = tensor::sigmoid(s(j, 0));
  return lambda;
}

PrototypeState fuse(const Matrix& P_t, const Matrix& P_v, std::span<const double> lambda, double t0) {
  tensor::require_same_shape(P_t, P_v, "fuse");
  if (lambda.size() != P_t.rows()) throw ShapeError("fuse: lambda length does not match class count");
  PrototypeState state{Matrix(P_t.rows(), P_t.cols()), t0};
  for (std::size_t j = 0; j < P_t.rows(); ++j) {
    double norm2 = 0.0;
    for (std::size_t d = 0; d < P_t.cols(); ++d) {
      const double v = lambda[j] * P_v(j, d) + (1.0 - lambda[j]) * P_t(j, d);
      state.P(j, d) = v;
      norm2 += v * v;
    }
    if (std::sqrt(norm2) < kMinPrototypeNorm) {
      throw DegenerateInputError("fused prototype row " + std::to_string(j) + " has near-zero norm");
    }
  }
  return state;
}

ad::Var fuse_differentiable(const Matrix& P_t, const Matrix& P_v, const ad::Var& u) {
  ad::Tape& tape = *u.tape();
  const ad::Var pt = tape.constant(P_t);
  const ad::Var pv = tape.constant(P_v);
  const ad::Var lambda = ad::sigmoid(ad::matmul(pv, u));
  return ad::add(pt, ad::scale_rows(ad::sub(pv, pt), lambda));
}

Matrix fusion_vjp(const Matrix& P_t, const Matrix& P_v, const Matrix& u, const Matrix& dL_dP0) {
  ad::Tape tape;
  const ad::Var uv = tape.variable(u);
  const ad::Var p0 = fuse_differentiable(P_t, P_v, uv);
  const ad::Var wrt[] = {uv};
  return std::move(tape.vjp(p0, dL_dP0, wrt)[0]);
}

}  // namespace node_adapter::proto
