#include "field_kernel.hpp"

#include "softmax_rows.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace node_adapter::field::detail {

namespace {

using RM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using CMap = Eigen::Map<const RM>;
using MMap = Eigen::Map<RM>;

CMap view(const Matrix& m) {
  return CMap(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
}

Matrix to_matrix(const RM& m) {
  Matrix out(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  MMap(out.data(), m.rows(), m.cols()) = m;
  return out;
}

}  // namespace

struct FieldKernel::Workspace {
  // Layout sizes.
  Eigen::Index N = 0, S = 0, D = 0, de = 0, aw = 0, H = 0, hd = 0;
  double decay = 1.0;

  RM qkv_w, qkv_b;  // [query | key | value] weights and biases
  // Forward.
  // QKV holds the query columns pre-scaled by 1/sqrt(head_dim). A is one
  // S x S attention block; the reverse pass recomputes each block rather than
  // keeping all N*H of them, which is cheaper than the memory traffic.
  RM GP, GV, gate, Dm, EP, EV, E, QKV, O, A, E2, W, F;
  // Reverse.
  RM dDm, dR, dE2, dO, dQKV, dE, dA, dEP, dEV, dpre, dGP, dGV, dP;
};

FieldKernel::FieldKernel(const FieldConfig& cfg, const FieldParameters& params, const SupportContext& ctx)
    : cfg_(cfg), params_(params), ctx_(ctx), ws_(std::make_unique<Workspace>()) {
  auto& w = *ws_;
  w.N = static_cast<Eigen::Index>(ctx.classes());
  w.S = static_cast<Eigen::Index>(ctx.samples());
  w.D = static_cast<Eigen::Index>(cfg.dim);
  w.de = static_cast<Eigen::Index>(cfg.embed_dim);
  w.H = static_cast<Eigen::Index>(cfg.heads);
  w.hd = static_cast<Eigen::Index>(cfg.head_dim);
  w.aw = w.H * w.hd;
  w.qkv_w.resize(w.de, 3 * w.aw);
  w.qkv_w << view(params.query_w), view(params.key_w), view(params.value_w);
  w.A.resize(w.S, w.S);
  w.qkv_b.resize(1, 3 * w.aw);
  w.qkv_b << view(params.query_b), view(params.key_b), view(params.value_b);
}

FieldKernel::~FieldKernel() = default;

void FieldKernel::run_forward(const Matrix& Pm, double t) {
  auto& w = *ws_;
  const Eigen::Index N = w.N, S = w.S, D = w.D, aw = w.aw, hd = w.hd;
  const CMap P = view(Pm);
  const CMap V = view(ctx_.features);
  const CMap Y = view(ctx_.one_hot);  // S x N
  const CMap gate_w = view(params_.gate_w);
  const CMap embed_w = view(params_.embed_w);
  w.decay = decay_factor(t, cfg_);

  // Gated distance gradients.
  w.GP.noalias() = P * gate_w.topRows(D);
  w.GV.noalias() = V * gate_w.bottomRows(D);
  const CMap gate_b = view(params_.gate_b);
  w.gate.resize(N * S, D);
  w.Dm.resize(N * S, D);
  for (Eigen::Index n = 0; n < N; ++n) {
    const RowVec base = w.GP.row(n) + gate_b;
    for (Eigen::Index i = 0; i < S; ++i) {
      const Eigen::Index r = n * S + i;
      w.gate.row(r) = ((-(base + w.GV.row(i)).array()).exp() + 1.0).inverse().matrix();
      w.Dm.row(r) = w.gate.row(r).cwiseProduct(V.row(i)) - P.row(n);
    }
  }

  // Sample embeddings.
  w.EP.noalias() = P * embed_w.topRows(D);
  w.EV.noalias() = V * embed_w.middleRows(D, D);
  const auto w_y = embed_w.row(2 * D);
  const CMap embed_b = view(params_.embed_b);
  w.E.resize(N * S, w.de);
  for (Eigen::Index n = 0; n < N; ++n) {
    const RowVec base = w.EP.row(n) + embed_b;
    for (Eigen::Index i = 0; i < S; ++i) {
      w.E.row(n * S + i) = (base + w.EV.row(i) + Y(i, n) * w_y).cwiseMax(0.0);
    }
  }

  // Attention over the S tokens of each class row, per head.
  w.QKV.noalias() = w.E * w.qkv_w;
  w.QKV.rowwise() += w.qkv_b.row(0);
  w.QKV.leftCols(aw) *= 1.0 / std::sqrt(static_cast<double>(hd));
  w.O.resize(N * S, aw);
  for (Eigen::Index n = 0; n < N; ++n) {
    for (Eigen::Index h = 0; h < w.H; ++h) {
      auto& a = w.A;
      const auto q = w.QKV.block(n * S, h * hd, S, hd);
      const auto k = w.QKV.block(n * S, aw + h * hd, S, hd);
      const auto v = w.QKV.block(n * S, 2 * aw + h * hd, S, hd);
      a.noalias() = q * k.transpose();
      softmax_rows(a.data(), static_cast<std::size_t>(S), static_cast<std::size_t>(S), static_cast<std::size_t>(S));
      w.O.block(n * S, h * hd, S, hd).noalias() = a * v;
    }
  }
  w.E2 = w.E;
  w.E2.noalias() += w.O * view(params_.out_w);
  w.E2.rowwise() += view(params_.out_b).row(0);

  // Weights: softmax over samples per (class row, channel).
  w.W.noalias() = w.E2 * view(params_.weight_w);
  w.W.rowwise() += view(params_.weight_b).row(0);
  w.F.setZero(N, D);
  for (Eigen::Index n = 0; n < N; ++n) {
    auto block = w.W.middleRows(n * S, S);
    const RowVec mx = block.colwise().maxCoeff();
    block = (block.rowwise() - mx).array().exp().matrix();
    const RowVec inv = block.colwise().sum().cwiseInverse();
    for (Eigen::Index i = 0; i < S; ++i) {
      block.row(i) = block.row(i).cwiseProduct(inv);
      w.F.row(n) += block.row(i).cwiseProduct(w.Dm.row(n * S + i));
    }
  }
  w.F *= w.decay;
}

Matrix FieldKernel::forward(const Matrix& P, double t) {
  run_forward(P, t);
  return to_matrix(ws_->F);
}

ode::DifferentiableField::Vjp FieldKernel::backward(const Matrix& Pm, double t, const Matrix& cotangent) {
  run_forward(Pm, t);
  auto& w = *ws_;
  const Eigen::Index N = w.N, S = w.S, D = w.D, aw = w.aw, hd = w.hd;
  const CMap P = view(Pm);
  const CMap V = view(ctx_.features);
  const CMap Y = view(ctx_.one_hot);
  const CMap G = view(cotangent);
  const CMap gate_w = view(params_.gate_w);
  const CMap embed_w = view(params_.embed_w);

  // Through the weighted sum and the sample softmax.
  w.dDm.resize(N * S, D);
  w.dR.resize(N * S, D);
  for (Eigen::Index n = 0; n < N; ++n) {
    const RowVec g = w.decay * G.row(n);
    RowVec dot = RowVec::Zero(D);
    for (Eigen::Index i = 0; i < S; ++i) {
      const Eigen::Index r = n * S + i;
      w.dDm.row(r) = g.cwiseProduct(w.W.row(r));
      w.dR.row(r) = g.cwiseProduct(w.Dm.row(r));  // dL/dW for now
      dot += w.dR.row(r).cwiseProduct(w.W.row(r));
    }
    for (Eigen::Index i = 0; i < S; ++i) {
      const Eigen::Index r = n * S + i;
      w.dR.row(r) = w.W.row(r).cwiseProduct(w.dR.row(r) - dot);
    }
  }

  std::vector<Matrix> grads(kParameterTensors);
  enum { kGateW, kGateB, kEmbedW, kEmbedB, kQueryW, kQueryB, kKeyW, kKeyB, kValueW, kValueB, kOutW, kOutB, kWeightW, kWeightB };

  // Weight generator.
  grads[kWeightW] = to_matrix(w.E2.transpose() * w.dR);
  grads[kWeightB] = to_matrix(w.dR.colwise().sum());
  w.dE2.noalias() = w.dR * view(params_.weight_w).transpose();

  // Residual attention block.
  grads[kOutW] = to_matrix(w.O.transpose() * w.dE2);
  grads[kOutB] = to_matrix(w.dE2.colwise().sum());
  w.dO.noalias() = w.dE2 * view(params_.out_w).transpose();
  w.dE = w.dE2;

  w.dQKV.resize(N * S, 3 * aw);
  w.dA.resize(S, S);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  for (Eigen::Index n = 0; n < N; ++n) {
    for (Eigen::Index h = 0; h < w.H; ++h) {
      // Scores are q_scaled k^T, so dk comes straight from the stored scaled q.
      const auto q = w.QKV.block(n * S, h * hd, S, hd);
      const auto k = w.QKV.block(n * S, aw + h * hd, S, hd);
      const auto v = w.QKV.block(n * S, 2 * aw + h * hd, S, hd);
      auto& a = w.A;
      a.noalias() = q * k.transpose();
      softmax_rows(a.data(), static_cast<std::size_t>(S), static_cast<std::size_t>(S), static_cast<std::size_t>(S));
      const auto dO = w.dO.block(n * S, h * hd, S, hd);
      w.dQKV.block(n * S, 2 * aw + h * hd, S, hd).noalias() = a.transpose() * dO;
      w.dA.noalias() = dO * v.transpose();
      // sum_j dA_rj a_rj = dO_r . (a v)_r = dO_r . O_r
      const auto o = w.O.block(n * S, h * hd, S, hd);
      for (Eigen::Index r = 0; r < S; ++r) {
        const double dot = dO.row(r).dot(o.row(r));
        w.dA.row(r) = (a.row(r).array() * (w.dA.row(r).array() - dot)).matrix();
      }
      w.dQKV.block(n * S, h * hd, S, hd).noalias() = inv_sqrt * (w.dA * k);
      w.dQKV.block(n * S, aw + h * hd, S, hd).noalias() = w.dA.transpose() * q;
    }
  }
  const RM d_qkv_w = w.E.transpose() * w.dQKV;
  const RowVec d_qkv_b = w.dQKV.colwise().sum();
  grads[kQueryW] = to_matrix(d_qkv_w.leftCols(aw));
  grads[kKeyW] = to_matrix(d_qkv_w.middleCols(aw, aw));
  grads[kValueW] = to_matrix(d_qkv_w.rightCols(aw));
  grads[kQueryB] = to_matrix(d_qkv_b.leftCols(aw));
  grads[kKeyB] = to_matrix(d_qkv_b.middleCols(aw, aw));
  grads[kValueB] = to_matrix(d_qkv_b.rightCols(aw));
  w.dE.noalias() += w.dQKV * w.qkv_w.transpose();

  // Embedding layer (ReLU mask: E > 0 exactly where the pre-activation is).
  w.dE = w.dE.cwiseProduct((w.E.array() > 0.0).cast<double>().matrix());
  w.dEP.setZero(N, w.de);
  w.dEV.setZero(S, w.de);
  RowVec d_wy = RowVec::Zero(w.de);
  for (Eigen::Index n = 0; n < N; ++n) {
    for (Eigen::Index i = 0; i < S; ++i) {
      const auto row = w.dE.row(n * S + i);
      w.dEP.row(n) += row;
      w.dEV.row(i) += row;
      if (Y(i, n) != 0.0) d_wy += Y(i, n) * row;
    }
  }
  RM d_embed_w(2 * D + 1, w.de);
  d_embed_w.topRows(D).noalias() = P.transpose() * w.dEP;
  d_embed_w.middleRows(D, D).noalias() = V.transpose() * w.dEV;
  d_embed_w.row(2 * D) = d_wy;
  grads[kEmbedW] = to_matrix(d_embed_w);
  grads[kEmbedB] = to_matrix(w.dEP.colwise().sum());
  w.dP.noalias() = w.dEP * embed_w.topRows(D).transpose();

  // Gate and the -P term of the distance gradients.
  w.dpre.resize(N * S, D);
  w.dGP.setZero(N, D);
  w.dGV.setZero(S, D);
  for (Eigen::Index n = 0; n < N; ++n) {
    for (Eigen::Index i = 0; i < S; ++i) {
      const Eigen::Index r = n * S + i;
      const auto g = w.gate.row(r).array();
      w.dpre.row(r) = (w.dDm.row(r).array() * V.row(i).array() * g * (1.0 - g)).matrix();
      w.dGP.row(n) += w.dpre.row(r);
      w.dGV.row(i) += w.dpre.row(r);
      w.dP.row(n) -= w.dDm.row(r);
    }
  }
  RM d_gate_w(2 * D, D);
  d_gate_w.topRows(D).noalias() = P.transpose() * w.dGP;
  d_gate_w.bottomRows(D).noalias() = V.transpose() * w.dGV;
  grads[kGateW] = to_matrix(d_gate_w);
  grads[kGateB] = to_matrix(w.dGP.colwise().sum());
  w.dP.noalias() += w.dGP * gate_w.topRows(D).transpose();

  ode::DifferentiableField::Vjp out;
  out.value = to_matrix(w.F);
  out.wrt_state = to_matrix(w.dP);
  out.wrt_params = std::move(grads);
  return out;
}

}  // namespace node_adapter::field::detail
