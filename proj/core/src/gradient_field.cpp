#include "node_adapter/gradient_field.hpp"

#include "field_kernel.hpp"

#include <cmath>
#include <string>

#include "node_adapter/errors.hpp"
#include "node_adapter/rng.hpp"

namespace node_adapter::field {

namespace {

enum Slot : std::size_t {
  kGateW, kGateB, kEmbedW, kEmbedB, kQueryW, kQueryB, kKeyW, kKeyB, kValueW, kValueB, kOutW, kOutB, kWeightW, kWeightB
};

void xavier(Matrix& m, SplitMix64 rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : m.values()) v = rng.uniform(-bound, bound);
}

struct Inputs {
  ad::Var V;          // S x D support features
  ad::Var indicator;  // (N*S) x 1
};

Inputs record_context(ad::Tape& tape, const SupportContext& ctx) {
  return {tape.constant(ctx.features), tape.constant(ctx.indicator())};
}

ad::Var distance_stage(const ad::Var& P, const Inputs& in, const ParameterVars& w) {
  const std::size_t D = P.cols();
  const std::size_t S = in.V.rows();
  const std::size_t N = P.rows();
  // [p_n | v_i] Ws splits into p_n Ws_top + v_i Ws_bottom; both halves are
  // computed once and broadcast instead of materialising the concatenation.
  const ad::Var from_p = ad::repeat_rows(ad::matmul(P, ad::slice_rows(w[kGateW], 0, D)), S);
  const ad::Var from_v = ad::tile_rows(ad::matmul(in.V, ad::slice_rows(w[kGateW], D, D)), N);
  const ad::Var gate = ad::sigmoid(ad::add_row(ad::add(from_p, from_v), w[kGateB]));
  return ad::sub(ad::hadamard(gate, ad::tile_rows(in.V, N)), ad::repeat_rows(P, S));
}

ad::Var embedding_stage(const ad::Var& P, const Inputs& in, const ParameterVars& w) {
  const std::size_t D = P.cols();
  const std::size_t S = in.V.rows();
  const std::size_t N = P.rows();
  const ad::Var from_p = ad::repeat_rows(ad::matmul(P, ad::slice_rows(w[kEmbedW], 0, D)), S);
  const ad::Var from_v = ad::tile_rows(ad::matmul(in.V, ad::slice_rows(w[kEmbedW], D, D)), N);
  const ad::Var from_y = ad::matmul(in.indicator, ad::slice_rows(w[kEmbedW], 2 * D, 1));
  return ad::relu(ad::add_row(ad::add(ad::add(from_p, from_v), from_y), w[kEmbedB]));
}

ad::Var attention_stage(const ad::Var& E, std::size_t classes, const ParameterVars& w, const FieldConfig& cfg) {
  const ad::Var q = ad::add_row(ad::matmul(E, w[kQueryW]), w[kQueryB]);
  const ad::Var k = ad::add_row(ad::matmul(E, w[kKeyW]), w[kKeyB]);
  const ad::Var v = ad::add_row(ad::matmul(E, w[kValueW]), w[kValueB]);
  const ad::Var mixed = ad::block_attention(q, k, v, classes, cfg.heads);
  return ad::add(E, ad::add_row(ad::matmul(mixed, w[kOutW]), w[kOutB]));
}

ad::Var weight_stage(const ad::Var& E_attended, std::size_t classes, const ParameterVars& w) {
  return ad::block_softmax_rows(ad::add_row(ad::matmul(E_attended, w[kWeightW]), w[kWeightB]), classes);
}

void check_shapes(const Matrix& P, const SupportContext& ctx, const FieldParameters& params) {
  if (ctx.samples() == 0) throw ShapeError("gradient field needs at least one support sample");
  if (ctx.one_hot.rows() != ctx.samples()) throw ShapeError("support context: one_hot rows differ from features");
  if (P.rows() != ctx.classes()) {
    throw ShapeError("prototypes have " + std::to_string(P.rows()) + " rows, support context has " +
                     std::to_string(ctx.classes()) + " classes");
  }
  if (P.cols() != ctx.features.cols() || params.gate_b.cols() != P.cols()) {
    throw ShapeError("prototype width " + std::to_string(P.cols()) + " does not match the field");
  }
}

template <class Stage>
Matrix run_plain(const Matrix& P, const SupportContext& ctx, const FieldParameters& params, Stage stage) {
  check_shapes(P, ctx, params);
  ad::Tape tape;
  const auto w = record_parameters(tape, params, false);
  return stage(tape.constant(P), record_context(tape, ctx), w).value();
}

}  // namespace

void FieldConfig::validate() const {
  if (dim < 1) throw UsageError("field dim must be >= 1");
  if (embed_dim < 1) throw UsageError("embed_dim must be >= 1");
  if (heads < 1 || head_dim < 1) throw UsageError("attention heads and head width must be >= 1");
  if (!(horizon > 0.0)) throw UsageError("horizon T must be > 0");
  if (!std::isfinite(decay_rate)) throw UsageError("decay rate must be finite");
}

FieldParameters FieldParameters::zeros(const FieldConfig& cfg) {
  cfg.validate();
  const std::size_t D = cfg.dim, de = cfg.embed_dim, aw = cfg.attention_width();
  FieldParameters p;
  p.gate_w = Matrix(2 * D, D);
  p.gate_b = Matrix(1, D);
  p.embed_w = Matrix(2 * D + 1, de);
  p.embed_b = Matrix(1, de);
  for (Matrix* m : {&p.query_w, &p.key_w, &p.value_w}) *m = Matrix(de, aw);
  for (Matrix* m : {&p.query_b, &p.key_b, &p.value_b}) *m = Matrix(1, aw);
  p.out_w = Matrix(aw, de);
  p.out_b = Matrix(1, de);
  p.weight_w = Matrix(de, D);
  p.weight_b = Matrix(1, D);
  return p;
}

FieldParameters FieldParameters::random(const FieldConfig& cfg, std::uint64_t seed) {
  FieldParameters p = zeros(cfg);
  const SplitMix64 root(seed);
  const std::size_t D = cfg.dim, de = cfg.embed_dim;
  xavier(p.gate_w, root.substream(kGateW), 2 * D, D);
  xavier(p.embed_w, root.substream(kEmbedW), 2 * D + 1, de);
  xavier(p.query_w, root.substream(kQueryW), de, cfg.head_dim);
  xavier(p.key_w, root.substream(kKeyW), de, cfg.head_dim);
  xavier(p.value_w, root.substream(kValueW), de, cfg.head_dim);
  xavier(p.out_w, root.substream(kOutW), cfg.attention_width(), de);
  xavier(p.weight_w, root.substream(kWeightW), de, D);
  return p;
}

FieldParameters FieldParameters::initialize(const FieldConfig& cfg, std::uint64_t seed) {
  FieldParameters p = random(cfg, seed);
  const std::size_t D = cfg.dim;
  for (double& v : p.gate_w.values()) v = 0.0;
  for (std::size_t r = 0; r < 2 * D + 1; ++r) p.embed_w(r, 0) = 0.0;
  for (double& v : p.embed_w.row(2 * D)) v = 0.0;
  p.embed_w(2 * D, 0) = 1.0;
  for (double& v : p.out_w.values()) v = 0.0;
  for (double& v : p.weight_w.values()) v = 0.0;
  for (double& v : p.weight_w.row(0)) v = kInitialLabelLogit;
  return p;
}

std::array<Matrix*, kParameterTensors> FieldParameters::tensors() noexcept {
  return {&gate_w, &gate_b, &embed_w, &embed_b, &query_w, &query_b, &key_w,
          &key_b,  &value_w, &value_b, &out_w,  &out_b,   &weight_w, &weight_b};
}

std::array<const Matrix*, kParameterTensors> FieldParameters::tensors() const noexcept {
  return {&gate_w, &gate_b, &embed_w, &embed_b, &query_w, &query_b, &key_w,
          &key_b,  &value_w, &value_b, &out_w,  &out_b,   &weight_w, &weight_b};
}

std::size_t FieldParameters::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const Matrix* m : tensors()) n += m->size();
  return n;
}

Matrix SupportContext::indicator() const {
  const std::size_t S = samples(), N = classes();
  Matrix ind(N * S, 1);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < S; ++i) ind(n * S + i, 0) = one_hot(i, n);
  return ind;
}

SupportContext SupportContext::from(const io::EmbeddingSet& support) {
  SupportContext ctx{support.features, Matrix(support.size(), support.num_classes)};
  for (std::size_t i = 0; i < support.size(); ++i) {
    if (support.labels[i] >= support.num_classes) throw MappingError("support label out of range");
    ctx.one_hot(i, support.labels[i]) = 1.0;
  }
  return ctx;
}

Matrix sample_block(const Matrix& stacked, std::size_t classes, std::size_t i) {
  const std::size_t S = stacked.rows() / classes;
  Matrix out(classes, stacked.cols());
  for (std::size_t n = 0; n < classes; ++n) {
    const auto src = stacked.row(n * S + i);
    std::copy(src.begin(), src.end(), out.row(n).begin());
  }
  return out;
}

Matrix distance_gradients(const Matrix& P, const SupportContext& ctx, const FieldParameters& params) {
  return run_plain(P, ctx, params,
                   [](const ad::Var& p, const Inputs& in, const ParameterVars& w) { return distance_stage(p, in, w); });
}

Matrix sample_embeddings(const Matrix& P, const SupportContext& ctx, const FieldParameters& params) {
  return run_plain(P, ctx, params,
                   [](const ad::Var& p, const Inputs& in, const ParameterVars& w) { return embedding_stage(p, in, w); });
}

Matrix attend(const Matrix& E, std::size_t classes, const FieldParameters& params, const FieldConfig& cfg) {
  ad::Tape tape;
  const auto w = record_parameters(tape, params, false);
  return attention_stage(tape.constant(E), classes, w, cfg).value();
}

Matrix generate_weights(const Matrix& E_attended, std::size_t classes, const FieldParameters& params) {
  ad::Tape tape;
  const auto w = record_parameters(tape, params, false);
  return weight_stage(tape.constant(E_attended), classes, w).value();
}

double decay_factor(double t, const FieldConfig& cfg) noexcept { return std::exp(-cfg.decay_rate * t / cfg.horizon); }

ParameterVars record_parameters(ad::Tape& tape, const FieldParameters& params, bool tracked) {
  ParameterVars vars;
  const auto ts = params.tensors();
  for (std::size_t k = 0; k < kParameterTensors; ++k) vars[k] = tracked ? tape.variable(*ts[k]) : tape.constant(*ts[k]);
  return vars;
}

namespace {

ad::Var field_from_inputs(const ad::Var& P, double t, const Inputs& in, const ParameterVars& w,
                          const FieldConfig& cfg) {
  const std::size_t N = P.rows();
  const ad::Var D = distance_stage(P, in, w);
  const ad::Var E = embedding_stage(P, in, w);
  const ad::Var W = weight_stage(attention_stage(E, N, w, cfg), N, w);
  return ad::scale(ad::block_sum_rows(ad::hadamard(W, D), N), decay_factor(t, cfg));
}

}  // namespace

ad::Var field_eval(const ad::Var& P, double t, const SupportContext& ctx, const ParameterVars& params,
                   const FieldConfig& cfg) {
  return field_from_inputs(P, t, record_context(*P.tape(), ctx), params, cfg);
}

Matrix field_eval(const Matrix& P, double t, const SupportContext& ctx, const FieldParameters& params,
                  const FieldConfig& cfg) {
  return GradientField(cfg, params, ctx).eval(P, t);
}

GradientField::GradientField(FieldConfig cfg, const FieldParameters& params, const SupportContext& ctx)
    : cfg_(cfg), params_(params), ctx_(ctx) {
  cfg_.validate();
  check_shapes(Matrix(ctx.classes(), cfg_.dim), ctx, params);
  const auto expected = FieldParameters::zeros(cfg_);
  const auto want = expected.tensors();
  const auto have = params.tensors();
  for (std::size_t k = 0; k < kParameterTensors; ++k) {
    if (want[k]->rows() != have[k]->rows() || want[k]->cols() != have[k]->cols()) {
      throw ShapeError(std::string("field parameter ") + kParameterNames[k] + " is " + have[k]->shape_string() +
                       ", expected " + want[k]->shape_string());
    }
  }
  kernel_ = std::make_unique<detail::FieldKernel>(cfg_, params_, ctx_);
}

GradientField::~GradientField() = default;

Matrix GradientField::eval(const Matrix& p, double t) const {
  check_shapes(p, ctx_, params_);
  return kernel_->forward(p, t);
}

ode::DifferentiableField::Vjp GradientField::vjp(const Matrix& p, double t, const Matrix& cotangent) const {
  check_shapes(p, ctx_, params_);
  tensor::require_same_shape(p, cotangent, "field vjp");
  return kernel_->backward(p, t, cotangent);
}

std::vector<std::pair<std::size_t, std::size_t>> GradientField::parameter_shapes() const {
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  for (const Matrix* m : params_.tensors()) shapes.emplace_back(m->rows(), m->cols());
  return shapes;
}

}  // namespace node_adapter::field
