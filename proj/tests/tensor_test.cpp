#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "node_adapter/errors.hpp"
#include "node_adapter/tensor.hpp"
#include "support.hpp"

using namespace node_adapter;
using namespace node_adapter::tensor;
using testing::random_matrix;

namespace {

Matrix triple_loop(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

}  // namespace

TEST_CASE("matmul: identity and 2x2 product") {
  const Matrix m{{1, 2}, {3, 4}};
  CHECK(matmul(Matrix::identity(2), m) == m);
  CHECK(matmul(m, Matrix{{5, 6}, {7, 8}}) == Matrix{{19, 22}, {43, 50}});
}

TEST_CASE("matmul: random 7x3 by 3x5 against the triple loop") {
  SplitMix64 rng(11);
  const Matrix a = random_matrix(rng, 7, 3), b = random_matrix(rng, 3, 5);
  CHECK(testing::max_diff(matmul(a, b), triple_loop(a, b)) < 1e-12);
}

TEST_CASE("matmul: transposed variants agree with explicit transposes") {
  SplitMix64 rng(12);
  const Matrix a = random_matrix(rng, 6, 4), b = random_matrix(rng, 5, 4), c = random_matrix(rng, 6, 3);
  CHECK(testing::max_diff(matmul_nt(a, b), triple_loop(a, transpose(b))) < 1e-12);
  CHECK(testing::max_diff(matmul_tn(a, c), triple_loop(transpose(a), c)) < 1e-12);
}

TEST_CASE("matmul: shape mismatch names both shapes") {
  try {
    matmul(Matrix(2, 3), Matrix(4, 5));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    CHECK(what.find("2x3") != std::string::npos);
    CHECK(what.find("4x5") != std::string::npos);
  }
}

TEST_CASE("property: matmul matches the triple loop for dims up to 64") {
  SplitMix64 rng(13);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t m = 1 + rng.index(64), k = 1 + rng.index(64), n = 1 + rng.index(64);
    const Matrix a = random_matrix(rng, m, k, -3, 3), b = random_matrix(rng, k, n, -3, 3);
    const Matrix want = triple_loop(a, b);
    CHECK(testing::max_diff(matmul(a, b), want) <= 1e-12 * std::max(1.0, testing::max_abs(want)));
  }
}

TEST_CASE("softmax_axis: analytic cases") {
  const Matrix s = softmax_axis(Matrix{{0, 0, 0}}, Axis::Cols);
  for (double v : s.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
  const Matrix big = softmax_axis(Matrix{{1000, 1000, 1000}}, Axis::Cols);
  for (double v : big.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
  const Matrix two = softmax_axis(Matrix{{0, std::log(3.0)}}, Axis::Cols);
  CHECK(std::abs(two(0, 0) - 0.25) < 1e-15);
  CHECK(std::abs(two(0, 1) - 0.75) < 1e-15);
}

TEST_CASE("softmax_axis: rows axis normalises columns") {
  const Matrix s = softmax_axis(Matrix{{0, 5}, {std::log(3.0), 5}}, Axis::Rows);
  CHECK(std::abs(s(0, 0) - 0.25) < 1e-15);
  CHECK(std::abs(s(1, 0) - 0.75) < 1e-15);
  CHECK(std::abs(s(0, 1) - 0.5) < 1e-15);
}

TEST_CASE("property: softmax sums to one, is positive and shift invariant") {
  SplitMix64 rng(14);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t r = 1 + rng.index(8), c = 1 + rng.index(8);
    const double spread = std::pow(10.0, rng.uniform(-2, 3));
    const Matrix m = random_matrix(rng, r, c, -spread, spread);
    const Axis axis = trial % 2 ? Axis::Cols : Axis::Rows;
    const Matrix s = softmax_axis(m, axis);
    const std::size_t lines = axis == Axis::Cols ? r : c;
    for (std::size_t l = 0; l < lines; ++l) {
      double total = 0.0;
      for (std::size_t k = 0; k < (axis == Axis::Cols ? c : r); ++k) {
        const double v = axis == Axis::Cols ? s(l, k) : s(k, l);
        CHECK(v >= 0.0);
        total += v;
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
    Matrix shifted = m;
    const double shift = rng.uniform(-500, 500);
    for (double& v : shifted.values()) v += shift;
    CHECK(testing::max_diff(softmax_axis(shifted, axis), s) < 1e-12);
  }
}

TEST_CASE("sigmoid: symmetry point, saturation, reflection") {
  CHECK(sigmoid(0.0) == 0.5);
  const double s = sigmoid(40.0);
  CHECK(s <= 1.0);
  CHECK(1.0 - s < 1e-17);
  CHECK(std::isfinite(sigmoid(-40.0)));
  SplitMix64 rng(15);
  for (int k = 0; k < 50; ++k) {
    const double x = rng.uniform(-30, 30);
    CHECK(std::abs(sigmoid(x) + sigmoid(-x) - 1.0) < 1e-15);
    CHECK(sigmoid(x) > 0.0);
    CHECK(sigmoid(x) < 1.0);
  }
  const Matrix m = sigmoid(Matrix{{0, 40}});
  CHECK(m(0, 0) == 0.5);
}

TEST_CASE("l2_normalize_rows: examples and zero row") {
  const Matrix n = l2_normalize_rows(Matrix{{3, 4}});
  CHECK(std::abs(n(0, 0) - 0.6) < 1e-15);
  CHECK(std::abs(n(0, 1) - 0.8) < 1e-15);
  const Matrix unit{{1, 0, 0}};
  CHECK(l2_normalize_rows(unit) == unit);
  try {
    l2_normalize_rows(Matrix{{1, 0}, {0, 0}});
    FAIL("expected DegenerateInputError");
  } catch (const DegenerateInputError& e) {
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
  }
}

TEST_CASE("property: l2_normalize_rows gives unit rows and is idempotent") {
  SplitMix64 rng(16);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix m = random_matrix(rng, 1 + rng.index(6), 1 + rng.index(10), -10, 10);
    const Matrix once = l2_normalize_rows(m);
    for (double norm : row_norms(once)) CHECK(std::abs(norm - 1.0) < 1e-12);
    CHECK(testing::max_diff(l2_normalize_rows(once), once) < 1e-12);
  }
}

TEST_CASE("cosine_similarity against a direct formula") {
  SplitMix64 rng(17);
  const Matrix a = random_matrix(rng, 4, 5), b = random_matrix(rng, 3, 5);
  const Matrix cs = cosine_similarity(a, b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double dot = 0, na = 0, nb = 0;
      for (std::size_t k = 0; k < 5; ++k) {
        dot += a(i, k) * b(j, k);
        na += a(i, k) * a(i, k);
        nb += b(j, k) * b(j, k);
      }
      CHECK(std::abs(cs(i, j) - dot / std::sqrt(na * nb)) < 1e-14);
    }
}

TEST_CASE("elementwise helpers and finiteness") {
  const Matrix a{{1, 2}}, b{{3, -4}};
  CHECK(add(a, b) == Matrix{{4, -2}});
  CHECK(sub(a, b) == Matrix{{-2, 6}});
  CHECK(hadamard(a, b) == Matrix{{3, -8}});
  CHECK(scale(a, 2) == Matrix{{2, 4}});
  CHECK(relu(b) == Matrix{{3, 0}});
  Matrix c = a;
  axpy(c, 2.0, b);
  CHECK(c == Matrix{{7, -6}});
  CHECK(sum(b) == -1);
  CHECK(max_abs(b) == 4);
  CHECK(all_finite(a));
  CHECK_FALSE(all_finite(Matrix{{std::numeric_limits<double>::quiet_NaN()}}));
  CHECK_THROWS_AS(add(Matrix(1, 2), Matrix(2, 1)), ShapeError);
}

TEST_CASE("allocation counters track matrix storage") {
  reset_allocation_peak();
  const auto before = allocation_stats();
  {
    Matrix big(100, 100);
    CHECK(allocation_stats().live_bytes >= before.live_bytes + 100 * 100 * sizeof(double));
  }
  CHECK(allocation_stats().live_bytes == before.live_bytes);
  CHECK(allocation_stats().peak_bytes >= before.live_bytes + 100 * 100 * sizeof(double));
}
