#pragma once

// The learnable prototype vector field dP/dt = f(P, t, S).
//
// Per support sample i and class row n:
//   D_i  = sigmoid([P | V_i] Ws + bs) * V_i - P              gated distance gradient
//   E_i  = relu([p_n | v_i | 1{y_i = n}] We + be)            sample embedding
//   E_i' = E_i + attn({E_j[n]}_j) Wo + bo                    attention over samples, per class row
//   W_i  = softmax_i(E_i' Wm + bm)                           per (n, d), over samples
//   dP/dt = exp(-eta t / T) * sum_i W_i * D_i
//
// Per-sample quantities are stored stacked, class-major: row n*S + i holds
// class row n of sample i. Each class row is then one contiguous block of S
// tokens, which is what the block attention and block softmax kernels expect.

#include <array>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "node_adapter/autodiff.hpp"
#include "node_adapter/embedding_io.hpp"
#include "node_adapter/ode.hpp"

namespace node_adapter::field {

struct FieldConfig {
  std::size_t dim = 0;          // D, feature width
  std::size_t embed_dim = 1024;  // d_e
  std::size_t heads = 8;
  std::size_t head_dim = 16;
  double decay_rate = 0.1;  // eta
  double horizon = 30.0;    // T

  std::size_t attention_width() const noexcept { return heads * head_dim; }
  void validate() const;
};

inline constexpr std::size_t kParameterTensors = 14;
inline constexpr std::array<const char*, kParameterTensors> kParameterNames = {
    "gate_w",  "gate_b",  "embed_w", "embed_b", "query_w", "query_b",  "key_w",
    "key_b",   "value_w", "value_b", "out_w",   "out_b",   "weight_w", "weight_b"};

struct FieldParameters {
  Matrix gate_w, gate_b;      // 2D x D, 1 x D
  Matrix embed_w, embed_b;    // (2D+1) x d_e, 1 x d_e; row 2D is the label indicator
  Matrix query_w, query_b;    // d_e x (heads*head_dim), head h owns columns [h*hd, (h+1)*hd)
  Matrix key_w, key_b;
  Matrix value_w, value_b;
  Matrix out_w, out_b;        // (heads*head_dim) x d_e
  Matrix weight_w, weight_b;  // d_e x D, 1 x D

  static FieldParameters zeros(const FieldConfig& cfg);
  /// Every weight uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
  static FieldParameters random(const FieldConfig& cfg, std::uint64_t seed);
  /// Training default. Starts as a field that pulls each prototype towards
  /// half its own-class support mean: gates at 0.5, embedding unit 0 carries
  /// the label indicator, the weight generator reads only that unit (so
  /// own-class samples dominate each class row's softmax) and the attention
  /// output map is zero. The remaining maps are random as in `random`.
  static FieldParameters initialize(const FieldConfig& cfg, std::uint64_t seed);

  std::array<Matrix*, kParameterTensors> tensors() noexcept;
  std::array<const Matrix*, kParameterTensors> tensors() const noexcept;
  std::size_t parameter_count() const noexcept;

  bool operator==(const FieldParameters&) const = default;
};

/// Weight-generator logit given to the indicator unit by `initialize`.
inline constexpr double kInitialLabelLogit = 10.0;

struct SupportContext {
  Matrix features;  // S x D
  Matrix one_hot;   // S x N

  std::size_t samples() const noexcept { return features.rows(); }
  std::size_t classes() const noexcept { return one_hot.cols(); }
  /// Stacked label indicator, (N*S) x 1: row n*S + i is 1 iff y_i = n.
  Matrix indicator() const;

  static SupportContext from(const io::EmbeddingSet& support);
};

/// Rows {n*S + i : n} of a stacked (N*S) x c matrix: the N x c block of sample i.
Matrix sample_block(const Matrix& stacked, std::size_t classes, std::size_t i);

// Stage-by-stage evaluation; outputs are stacked (N*S) x width.
Matrix distance_gradients(const Matrix& P, const SupportContext& ctx, const FieldParameters& params);
Matrix sample_embeddings(const Matrix& P, const SupportContext& ctx, const FieldParameters& params);
Matrix attend(const Matrix& E, std::size_t classes, const FieldParameters& params, const FieldConfig& cfg);
Matrix generate_weights(const Matrix& E_attended, std::size_t classes, const FieldParameters& params);

double decay_factor(double t, const FieldConfig& cfg) noexcept;
Matrix field_eval(const Matrix& P, double t, const SupportContext& ctx, const FieldParameters& params,
                  const FieldConfig& cfg);

// Reference composition of the field on an autodiff tape. GradientField and
// the Matrix overload of field_eval evaluate the same function through a
// fused kernel.

/// Parameters recorded on a tape, in kParameterNames order.
using ParameterVars = std::array<ad::Var, kParameterTensors>;

ParameterVars record_parameters(ad::Tape& tape, const FieldParameters& params, bool tracked);
ad::Var field_eval(const ad::Var& P, double t, const SupportContext& ctx, const ParameterVars& params,
                   const FieldConfig& cfg);

namespace detail {
class FieldKernel;
}

/// The field bound to one parameter set and support set. `params` and `ctx`
/// are referenced, not copied, and must outlive the field and stay unchanged
/// while it is in use. Holds scratch buffers, so an instance must not be used
/// from two threads at once.
class GradientField final : public ode::DifferentiableField {
 public:
  GradientField(FieldConfig cfg, const FieldParameters& params, const SupportContext& ctx);
  ~GradientField() override;

  Matrix eval(const Matrix& p, double t) const override;
  Vjp vjp(const Matrix& p, double t, const Matrix& cotangent) const override;
  std::vector<std::pair<std::size_t, std::size_t>> parameter_shapes() const override;

 private:
  FieldConfig cfg_;
  const FieldParameters& params_;
  const SupportContext& ctx_;
  std::unique_ptr<detail::FieldKernel> kernel_;
};

}  // namespace node_adapter::field
