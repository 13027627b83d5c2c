#pragma once

// Fused forward / reverse evaluation of the gradient field over a reusable
// workspace. Computes the same function as the tape composition in
// gradient_field.cpp (the tests hold the two together); this path exists
// because the solver calls the field hundreds of times per epoch and the
// generic tape spends most of that time allocating and copying.

#include <memory>
#include <vector>

#include "node_adapter/gradient_field.hpp"

namespace node_adapter::field::detail {

class FieldKernel {
 public:
  FieldKernel(const FieldConfig& cfg, const FieldParameters& params, const SupportContext& ctx);
  ~FieldKernel();
  FieldKernel(const FieldKernel&) = delete;
  FieldKernel& operator=(const FieldKernel&) = delete;

  /// dP/dt at (P, t).
  Matrix forward(const Matrix& P, double t);
  /// Forward value plus cotangent^T df/dP and cotangent^T df/dtheta (kParameterNames order).
  ode::DifferentiableField::Vjp backward(const Matrix& P, double t, const Matrix& cotangent);

 private:
  struct Workspace;
  void run_forward(const Matrix& P, double t);

  FieldConfig cfg_;
  const FieldParameters& params_;
  const SupportContext& ctx_;
  std::unique_ptr<Workspace> ws_;
};

}  // namespace node_adapter::field::detail
