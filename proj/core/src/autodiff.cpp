#include "node_adapter/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "node_adapter/errors.hpp"

namespace node_adapter::ad {

namespace t = node_adapter::tensor;

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Strided = Eigen::OuterStride<>;
using ConstBlock = Eigen::Map<const RowMajor, 0, Strided>;
using MutBlock = Eigen::Map<RowMajor, 0, Strided>;

Tape& same_tape(const Var& a, const Var& b, const char* op) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw UsageError(std::string(op) + ": operands belong to different differentiation contexts");
  }
  return *a.tape();
}

Tape& tape_of(const Var& a, const char* op) {
  if (a.tape() == nullptr) throw UsageError(std::string(op) + ": value is not recorded on a tape");
  return *a.tape();
}

}  // namespace

const Matrix& Var::value() const {
  if (tape_ == nullptr) throw UsageError("Var::value on an empty handle");
  return tape_->value(id_);
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Pullback pullback) {
  bool tracked = false;
  for (const Var& in : inputs) {
    check_owned(in, "record");
    tracked = tracked || nodes_[in.id()].tracked;
  }
  nodes_.push_back(Node{std::move(value), tracked, tracked ? std::move(pullback) : Pullback{}});
  return Var(this, nodes_.size() - 1);
}

bool Tape::tracks(const Var& v) const { return v.tape() == this && nodes_[v.id()].tracked; }

void Tape::check_owned(const Var& v, const char* what) const {
  if (v.tape() != this || v.id() >= nodes_.size()) {
    throw UsageError(std::string(what) + ": value does not belong to this differentiation context");
  }
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  if (!nodes_[v.id()].tracked) return;
  Matrix& slot = grads_[v.id()];
  if (slot.rows() == 0 && slot.cols() == 0) {
    slot = g;
  } else {
    t::axpy(slot, 1.0, g);
  }
}

void Tape::accumulate(const Var& v, Matrix&& g) {
  if (!nodes_[v.id()].tracked) return;
  Matrix& slot = grads_[v.id()];
  if (slot.rows() == 0 && slot.cols() == 0) {
    slot = std::move(g);
  } else {
    t::axpy(slot, 1.0, g);
  }
}

std::vector<Matrix> Tape::vjp(const Var& output, const Matrix& cotangent, std::span<const Var> wrt) {
  check_owned(output, "vjp");
  for (const Var& w : wrt) check_owned(w, "grad: wrt");
  t::require_same_shape(output.value(), cotangent, "vjp cotangent");

  grads_.assign(nodes_.size(), Matrix{});
  std::vector<bool> keep(nodes_.size(), false);
  for (const Var& w : wrt) keep[w.id()] = true;
  if (nodes_[output.id()].tracked) grads_[output.id()] = cotangent;
  for (std::size_t id = output.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.pullback || grads_[id].rows() == 0) continue;
    node.pullback(*this, grads_[id], node.value);
    if (!keep[id]) grads_[id] = Matrix{};
  }

  std::vector<Matrix> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (grads_[w.id()].rows() == 0) {
      out.emplace_back(w.value().rows(), w.value().cols());
    } else {
      out.push_back(grads_[w.id()]);
    }
  }
  grads_.clear();
  return out;
}

std::vector<Matrix> Tape::grad(const Var& loss, std::span<const Var> wrt) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ShapeError("grad: loss must be 1x1, got " + loss.value().shape_string());
  }
  return vjp(loss, Matrix(1, 1, 1.0), wrt);
}

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  Tape& tp = same_tape(a, b, "matmul");
  return tp.record(t::matmul(a.value(), b.value()), {a, b}, [a, b](Tape& tape, const Matrix& g, const Matrix&) {
    if (tape.tracks(a)) tape.accumulate(a, t::matmul_nt(g, b.value()));
    if (tape.tracks(b)) tape.accumulate(b, t::matmul_tn(a.value(), g));
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  Tape& tp = same_tape(a, b, "matmul_nt");
  return tp.record(t::matmul_nt(a.value(), b.value()), {a, b}, [a, b](Tape& tape, const Matrix& g, const Matrix&) {
    if (tape.tracks(a)) tape.accumulate(a, t::matmul(g, b.value()));
    if (tape.tracks(b)) tape.accumulate(b, t::matmul_tn(g, a.value()));
  });
}

Var transpose(const Var& a) {
  Tape& tp = tape_of(a, "transpose");
  return tp.record(t::transpose(a.value()), {a},
                   [a](Tape& tape, const Matrix& g, const Matrix&) { tape.accumulate(a, t::transpose(g)); });
}

Var add(const Var& a, const Var& b) {
  Tape& tp = same_tape(a, b, "add");
  return tp.record(t::add(a.value(), b.value()), {a, b}, [a, b](Tape& tape, const Matrix& g, const Matrix&) {
    tape.accumulate(a, g);
    tape.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& tp = same_tape(a, b, "sub");
  return tp.record(t::sub(a.value(), b.value()), {a, b}, [a, b](Tape& tape, const Matrix& g, const Matrix&) {
    tape.accumulate(a, g);
    if (tape.tracks(b)) tape.accumulate(b, t::scale(g, -1.0));
  });
}

Var hadamard(const Var& a, const Var& b) {
  Tape& tp = same_tape(a, b, "hadamard");
  return tp.record(t::hadamard(a.value(), b.value()), {a, b}, [a, b](Tape& tape, const Matrix& g, const Matrix&) {
    if (tape.tracks(a)) tape.accumulate(a, t::hadamard(g, b.value()));
    if (tape.tracks(b)) tape.accumulate(b, t::hadamard(g, a.value()));
  });
}

Var scale(const Var& a, double s) {
  Tape& tp = tape_of(a, "scale");
  return tp.record(t::scale(a.value(), s), {a},
                   [a, s](Tape& tape, const Matrix& g, const Matrix&) { tape.accumulate(a, t::scale(g, s)); });
}

Var add_row(const Var& m, const Var& row) {
  Tape& tp = same_tape(m, row, "add_row");
  const Matrix& mv = m.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != mv.cols()) {
    throw ShapeError("add_row: shape mismatch " + mv.shape_string() + " vs " + rv.shape_string());
  }
  Matrix out = mv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto o = out.row(r);
    for (std::size_t c = 0; c < o.size(); ++c) o[c] += rv(0, c);
  }
  return tp.record(std::move(out), {m, row}, [m, row](Tape& tape, const Matrix& g, const Matrix&) {
    tape.accumulate(m, g);
    if (tape.tracks(row)) {
      Matrix gr(1, g.cols());
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gr(0, c) += g(r, c);
      tape.accumulate(row, std::move(gr));
    }
  });
}

Var scale_rows(const Var& m, const Var& col) {
  Tape& tp = same_tape(m, col, "scale_rows");
  const Matrix& mv = m.value();
  const Matrix& cv = col.value();
  if (cv.cols() != 1 || cv.rows() != mv.rows()) {
    throw ShapeError("scale_rows: shape mismatch " + mv.shape_string() + " vs " + cv.shape_string());
  }
  Matrix out = mv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (double& v : out.row(r)) v *= cv(r, 0);
  return tp.record(std::move(out), {m, col}, [m, col](Tape& tape, const Matrix& g, const Matrix&) {
    const Matrix& mv = m.value();
    const Matrix& cv = col.value();
    if (tape.tracks(m)) {
      Matrix gm = g;
      for (std::size_t r = 0; r < gm.rows(); ++r)
        for (double& v : gm.row(r)) v *= cv(r, 0);
      tape.accumulate(m, std::move(gm));
    }
    if (tape.tracks(col)) {
      Matrix gc(cv.rows(), 1);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gc(r, 0) += g(r, c) * mv(r, c);
      tape.accumulate(col, std::move(gc));
    }
  });
}

Var sigmoid(const Var& a) {
  Tape& tp = tape_of(a, "sigmoid");
  return tp.record(t::sigmoid(a.value()), {a}, [a](Tape& tape, const Matrix& g, const Matrix& y) {
    Matrix ga = g;
    auto gv = ga.values();
    auto yv = y.values();
    for (std::size_t i = 0; i < gv.size(); ++i) gv[i] *= yv[i] * (1.0 - yv[i]);
    tape.accumulate(a, std::move(ga));
  });
}

Var relu(const Var& a) {
  Tape& tp = tape_of(a, "relu");
  return tp.record(t::relu(a.value()), {a}, [a](Tape& tape, const Matrix& g, const Matrix&) {
    Matrix ga = g;
    auto gv = ga.values();
    auto xv = a.value().values();
    for (std::size_t i = 0; i < gv.size(); ++i)
      if (!(xv[i] > 0.0)) gv[i] = 0.0;
    tape.accumulate(a, std::move(ga));
  });
}

Var log(const Var& a, double floor) {
  Tape& tp = tape_of(a, "log");
  Matrix out = a.value();
  for (double& v : out.values()) v = std::log(std::max(v, floor));
  return tp.record(std::move(out), {a}, [a, floor](Tape& tape, const Matrix& g, const Matrix&) {
    Matrix ga = g;
    auto gv = ga.values();
    auto xv = a.value().values();
    for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = xv[i] > floor ? gv[i] / xv[i] : 0.0;
    tape.accumulate(a, std::move(ga));
  });
}

Var softmax_axis(const Var& a, t::Axis axis) {
  Tape& tp = tape_of(a, "softmax_axis");
  return tp.record(t::softmax_axis(a.value(), axis), {a}, [a, axis](Tape& tape, const Matrix& g, const Matrix& y) {
    // dx = y * (g - <g, y>) along the normalised axis.
    Matrix ga(y.rows(), y.cols());
    if (axis == t::Axis::Cols) {
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
        for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) = y(r, c) * (g(r, c) - dot);
      }
    } else {
      for (std::size_t c = 0; c < y.cols(); ++c) {
        double dot = 0.0;
        for (std::size_t r = 0; r < y.rows(); ++r) dot += g(r, c) * y(r, c);
        for (std::size_t r = 0; r < y.rows(); ++r) ga(r, c) = y(r, c) * (g(r, c) - dot);
      }
    }
    tape.accumulate(a, std::move(ga));
  });
}

Var l2_normalize_rows(const Var& a) {
  Tape& tp = tape_of(a, "l2_normalize_rows");
  return tp.record(t::l2_normalize_rows(a.value()), {a}, [a](Tape& tape, const Matrix& g, const Matrix& y) {
    // d(x/|x|) = (g - y <g, y>) / |x|
    const auto norms = t::row_norms(a.value());
    Matrix ga(y.rows(), y.cols());
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) = (g(r, c) - y(r, c) * dot) / norms[r];
    }
    tape.accumulate(a, std::move(ga));
  });
}

Var sum(const Var& a) {
  Tape& tp = tape_of(a, "sum");
  return tp.record(Matrix(1, 1, t::sum(a.value())), {a}, [a](Tape& tape, const Matrix& g, const Matrix&) {
    tape.accumulate(a, Matrix(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0.0) throw ShapeError("mean: empty operand");
  return scale(sum(a), 1.0 / n);
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
  Tape& tp = tape_of(a, "slice_rows");
  const Matrix& av = a.value();
  if (begin + count > av.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + av.shape_string());
  }
  Matrix out(count, av.cols(), std::span<const double>(av.data() + begin * av.cols(), count * av.cols()));
  return tp.record(std::move(out), {a}, [a, begin](Tape& tape, const Matrix& g, const Matrix&) {
    Matrix ga(a.rows(), a.cols());
    std::copy(g.values().begin(), g.values().end(), ga.data() + begin * ga.cols());
    tape.accumulate(a, std::move(ga));
  });
}

Var repeat_rows(const Var& a, std::size_t times) {
  Tape& tp = tape_of(a, "repeat_rows");
  const Matrix& av = a.value();
  Matrix out(av.rows() * times, av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t k = 0; k < times; ++k) std::copy(av.row(r).begin(), av.row(r).end(), out.row(r * times + k).begin());
  return tp.record(std::move(out), {a}, [a, times](Tape& tape, const Matrix& g, const Matrix&) {
    Matrix ga(a.rows(), a.cols());
    for (std::size_t r = 0; r < ga.rows(); ++r) {
      auto dst = ga.row(r);
      for (std::size_t k = 0; k < times; ++k) {
        auto src = g.row(r * times + k);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
      }
    }
    tape.accumulate(a, std::move(ga));
  });
}

Var tile_rows(const Var& a, std::size_t times) {
  Tape& tp = tape_of(a, "tile_rows");
  const Matrix& av = a.value();
  Matrix out(av.rows() * times, av.cols());
  for (std::size_t k = 0; k < times; ++k)
    std::copy(av.values().begin(), av.values().end(), out.data() + k * av.size());
  return tp.record(std::move(out), {a}, [a, times](Tape& tape, const Matrix& g, const Matrix&) {
    Matrix ga(a.rows(), a.cols());
    auto dst = ga.values();
    for (std::size_t k = 0; k < times; ++k) {
      const double* src = g.data() + k * dst.size();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
    tape.accumulate(a, std::move(ga));
  });
}

Var block_sum_rows(const Var& a, std::size_t blocks) {
  Tape& tp = tape_of(a, "block_sum_rows");
  const Matrix& av = a.value();
  if (blocks == 0 || av.rows() % blocks != 0) {
    throw ShapeError("block_sum_rows: " + av.shape_string() + " not divisible into " + std::to_string(blocks) + " blocks");
  }
  const std::size_t per = av.rows() / blocks;
  Matrix out(blocks, av.cols());
  for (std::size_t b = 0; b < blocks; ++b) {
    auto dst = out.row(b);
    for (std::size_t i = 0; i < per; ++i) {
      auto src = av.row(b * per + i);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
  }
  return tp.record(std::move(out), {a}, [a, per](Tape& tape, const Matrix& g, const Matrix&) {
    Matrix ga(a.rows(), a.cols());
    for (std::size_t r = 0; r < ga.rows(); ++r) std::copy(g.row(r / per).begin(), g.row(r / per).end(), ga.row(r).begin());
    tape.accumulate(a, std::move(ga));
  });
}

Var block_softmax_rows(const Var& a, std::size_t blocks) {
  Tape& tp = tape_of(a, "block_softmax_rows");
  const Matrix& av = a.value();
  if (blocks == 0 || av.rows() % blocks != 0) {
    throw ShapeError("block_softmax_rows: " + av.shape_string() + " not divisible into " + std::to_string(blocks) +
                     " blocks");
  }
  const std::size_t per = av.rows() / blocks;
  const std::size_t cols = av.cols();
  Matrix out(av.rows(), cols);
  std::vector<double> mx(cols), z(cols);
  for (std::size_t b = 0; b < blocks; ++b) {
    std::fill(mx.begin(), mx.end(), -INFINITY);
    std::fill(z.begin(), z.end(), 0.0);
    for (std::size_t i = 0; i < per; ++i) {
      auto src = av.row(b * per + i);
      for (std::size_t c = 0; c < cols; ++c) mx[c] = std::max(mx[c], src[c]);
    }
    for (std::size_t i = 0; i < per; ++i) {
      auto src = av.row(b * per + i);
      auto dst = out.row(b * per + i);
      for (std::size_t c = 0; c < cols; ++c) z[c] += (dst[c] = std::exp(src[c] - mx[c]));
    }
    for (std::size_t i = 0; i < per; ++i) {
      auto dst = out.row(b * per + i);
      for (std::size_t c = 0; c < cols; ++c) dst[c] /= z[c];
    }
  }
  return tp.record(std::move(out), {a}, [a, per](Tape& tape, const Matrix& g, const Matrix& y) {
    const std::size_t cols = y.cols();
    Matrix ga(y.rows(), cols);
    std::vector<double> dot(cols);
    for (std::size_t b = 0; b < y.rows() / per; ++b) {
      std::fill(dot.begin(), dot.end(), 0.0);
      for (std::size_t i = 0; i < per; ++i) {
        auto gr = g.row(b * per + i);
        auto yr = y.row(b * per + i);
        for (std::size_t c = 0; c < cols; ++c) dot[c] += gr[c] * yr[c];
      }
      for (std::size_t i = 0; i < per; ++i) {
        auto gr = g.row(b * per + i);
        auto yr = y.row(b * per + i);
        auto dst = ga.row(b * per + i);
        for (std::size_t c = 0; c < cols; ++c) dst[c] = yr[c] * (gr[c] - dot[c]);
      }
    }
    tape.accumulate(a, std::move(ga));
  });
}

Var pick(const Var& a, std::span<const std::size_t> index) {
  Tape& tp = tape_of(a, "pick");
  const Matrix& av = a.value();
  if (index.size() != av.rows()) {
    throw ShapeError("pick: " + std::to_string(index.size()) + " indices for " + av.shape_string());
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  Matrix out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    if (idx[r] >= av.cols()) throw ShapeError("pick: index " + std::to_string(idx[r]) + " out of range");
    out(r, 0) = av(r, idx[r]);
  }
  return tp.record(std::move(out), {a}, [a, idx = std::move(idx)](Tape& tape, const Matrix& g, const Matrix&) {
    Matrix ga(a.rows(), a.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) ga(r, idx[r]) = g(r, 0);
    tape.accumulate(a, std::move(ga));
  });
}

Var block_attention(const Var& q, const Var& k, const Var& v, std::size_t blocks, std::size_t heads) {
  Tape& tp = same_tape(q, k, "block_attention");
  same_tape(q, v, "block_attention");
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  t::require_same_shape(qv, kv, "block_attention q/k");
  t::require_same_shape(qv, vv, "block_attention q/v");
  if (blocks == 0 || heads == 0 || qv.rows() % blocks != 0 || qv.cols() % heads != 0) {
    throw ShapeError("block_attention: " + qv.shape_string() + " incompatible with " + std::to_string(blocks) +
                     " blocks and " + std::to_string(heads) + " heads");
  }
  const auto tokens = static_cast<Eigen::Index>(qv.rows() / blocks);
  const auto width = static_cast<Eigen::Index>(qv.cols());
  const auto head_dim = static_cast<Eigen::Index>(qv.cols() / heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const bool keep = tp.tracks(q) || tp.tracks(k) || tp.tracks(v);

  auto probs = std::make_shared<std::vector<RowMajor>>();
  if (keep) probs->reserve(blocks * heads);

  Matrix out(qv.rows(), qv.cols());
  RowMajor scores(tokens, tokens);
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t base = b * static_cast<std::size_t>(tokens * width);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = base + h * static_cast<std::size_t>(head_dim);
      ConstBlock qb(qv.data() + off, tokens, head_dim, Strided(width));
      ConstBlock kb(kv.data() + off, tokens, head_dim, Strided(width));
      ConstBlock vb(vv.data() + off, tokens, head_dim, Strided(width));
      MutBlock ob(out.data() + off, tokens, head_dim, Strided(width));
      scores.noalias() = (qb * kb.transpose()) * inv_sqrt;
      for (Eigen::Index r = 0; r < tokens; ++r) {
        auto row = scores.row(r);
        row = (row.array() - row.maxCoeff()).exp();
        row /= row.sum();
      }
      ob.noalias() = scores * vb;
      if (keep) probs->push_back(scores);
    }
  }

  return tp.record(std::move(out), {q, k, v},
                   [q, k, v, blocks, heads, tokens, width, head_dim, inv_sqrt, probs](Tape& tape, const Matrix& g,
                                                                                     const Matrix&) {
                     const Matrix& qv = q.value();
                     const Matrix& kv = k.value();
                     const Matrix& vv = v.value();
                     Matrix gq(qv.rows(), qv.cols());
                     Matrix gk(qv.rows(), qv.cols());
                     Matrix gv(qv.rows(), qv.cols());
                     RowMajor da(tokens, tokens);
                     for (std::size_t b = 0; b < blocks; ++b) {
                       const std::size_t base = b * static_cast<std::size_t>(tokens * width);
                       for (std::size_t h = 0; h < heads; ++h) {
                         const std::size_t off = base + h * static_cast<std::size_t>(head_dim);
                         const RowMajor& a = (*probs)[b * heads + h];
                         ConstBlock qb(qv.data() + off, tokens, head_dim, Strided(width));
                         ConstBlock kb(kv.data() + off, tokens, head_dim, Strided(width));
                         ConstBlock vb(vv.data() + off, tokens, head_dim, Strided(width));
                         ConstBlock gb(g.data() + off, tokens, head_dim, Strided(width));
                         MutBlock gqb(gq.data() + off, tokens, head_dim, Strided(width));
                         MutBlock gkb(gk.data() + off, tokens, head_dim, Strided(width));
                         MutBlock gvb(gv.data() + off, tokens, head_dim, Strided(width));
                         gvb.noalias() = a.transpose() * gb;
                         da.noalias() = gb * vb.transpose();
                         // softmax pullback, then fold in the 1/sqrt(d) scale
                         for (Eigen::Index r = 0; r < tokens; ++r) {
                           const double dot = da.row(r).dot(a.row(r));
                           da.row(r) = (a.row(r).array() * (da.row(r).array() - dot)) * inv_sqrt;
                         }
                         gqb.noalias() = da * kb;
                         gkb.noalias() = da.transpose() * qb;
                       }
                     }
                     tape.accumulate(q, std::move(gq));
                     tape.accumulate(k, std::move(gk));
                     tape.accumulate(v, std::move(gv));
                   });
}

}  // namespace node_adapter::ad
