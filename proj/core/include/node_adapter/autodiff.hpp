#pragma once

// Reverse-mode differentiation over Matrix values.
//
// A Tape is one differentiation context: values recorded on it form a DAG
// that `grad`/`vjp` sweep in reverse. Tapes are single-threaded and scoped to
// one forward evaluation; a Var is only meaningful on the tape that made it.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "node_adapter/tensor.hpp"

namespace node_adapter::ad {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Receives the gradient flowing into a node and its forward value; must
  /// route gradient into the node's inputs via `accumulate`.
  using Pullback = std::function<void(Tape&, const Matrix& grad_out, const Matrix& value_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is tracked.
  Var variable(Matrix value);
  /// Leaf treated as a constant.
  Var constant(Matrix value);

  /// Gradients of a 1x1 `loss` with respect to each of `wrt`.
  std::vector<Matrix> grad(const Var& loss, std::span<const Var> wrt);
  /// Vector-Jacobian product: gradients of <cotangent, output> with respect to `wrt`.
  std::vector<Matrix> vjp(const Var& output, const Matrix& cotangent, std::span<const Var> wrt);

  // Op-author interface.
  Var record(Matrix value, std::initializer_list<Var> inputs, Pullback pullback);
  bool tracks(const Var& v) const;
  void accumulate(const Var& v, const Matrix& g);
  /// Accumulate g into v in place, skipping the copy when v has no gradient yet.
  void accumulate(const Var& v, Matrix&& g);
  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    bool tracked = false;
    Pullback pullback;
  };
  void check_owned(const Var& v, const char* what) const;

  std::vector<Node> nodes_;
  std::vector<Matrix> grads_;
};

// Differentiable operations. All operands must live on the same tape.

Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// m (r x c) plus a 1 x c row broadcast over rows.
Var add_row(const Var& m, const Var& row);
/// m (r x c) with row r multiplied by col(r, 0).
Var scale_rows(const Var& m, const Var& col);
Var sigmoid(const Var& a);
Var relu(const Var& a);
/// Natural log of max(a, floor).
Var log(const Var& a, double floor = 0.0);
Var softmax_axis(const Var& a, tensor::Axis axis);
Var l2_normalize_rows(const Var& a);
/// 1x1 sum / mean of all entries.
Var sum(const Var& a);
Var mean(const Var& a);

Var slice_rows(const Var& a, std::size_t begin, std::size_t count);
/// Each row repeated `times` consecutively: out[r*times + k] = a[r].
Var repeat_rows(const Var& a, std::size_t times);
/// The whole matrix stacked `times` times: out[k*rows + r] = a[r].
Var tile_rows(const Var& a, std::size_t times);
/// a holds `blocks` contiguous row blocks; out[b] = sum of the rows of block b.
Var block_sum_rows(const Var& a, std::size_t blocks);
/// Softmax over the rows of each contiguous block, independently per column.
Var block_softmax_rows(const Var& a, std::size_t blocks);
/// out[r, 0] = a[r, index[r]].
Var pick(const Var& a, std::span<const std::size_t> index);

/// Scaled dot-product attention applied independently inside each of `blocks`
/// contiguous row blocks (the tokens) and each of `heads` equal column groups.
/// q, k, v are (blocks*tokens) x (heads*head_dim); returns the same shape.
Var block_attention(const Var& q, const Var& k, const Var& v, std::size_t blocks, std::size_t heads);

}  // namespace node_adapter::ad
