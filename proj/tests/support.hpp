#pragma once

// Generators and finite-difference helpers shared by the test suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "node_adapter/embedding_io.hpp"
#include "node_adapter/rng.hpp"
#include "node_adapter/tensor.hpp"

namespace testing {

using node_adapter::Matrix;
using node_adapter::SplitMix64;

inline Matrix random_matrix(SplitMix64& rng, std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

inline Matrix random_unit_rows(SplitMix64& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double norm = 0.0;
    for (double& v : m.row(r)) {
      v = rng.normal();
      norm += v * v;
    }
    for (double& v : m.row(r)) v /= std::sqrt(norm);
  }
  return m;
}

using node_adapter::tensor::max_abs;

inline double max_diff(const Matrix& a, const Matrix& b) { return node_adapter::tensor::max_abs_diff(a, b); }

/// Normwise relative error: max |a - n| over max |n| (or 1e-12 if n is zero).
inline double relative_error(const Matrix& analytic, const Matrix& numeric) {
  return max_diff(analytic, numeric) / std::max(max_abs(numeric), 1e-12);
}

/// Central differences of a scalar function of `x`, perturbing x in place.
inline Matrix numeric_gradient(const std::function<double()>& f, Matrix& x, double h = 1e-5) {
  Matrix g(x.rows(), x.cols());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double saved = x.values()[k];
    x.values()[k] = saved + h;
    const double up = f();
    x.values()[k] = saved - h;
    const double down = f();
    x.values()[k] = saved;
    g.values()[k] = (up - down) / (2.0 * h);
  }
  return g;
}

/// <a, b> over all entries.
inline double inner(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a.values()[k] * b.values()[k];
  return s;
}

inline std::vector<std::size_t> random_permutation(SplitMix64& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t k = 0; k < n; ++k) p[k] = k;
  rng.shuffle(std::span<std::size_t>(p));
  return p;
}

inline Matrix permute_rows(const Matrix& m, const std::vector<std::size_t>& perm) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < perm.size(); ++r) std::copy(m.row(perm[r]).begin(), m.row(perm[r]).end(), out.row(r).begin());
  return out;
}

/// Set with `per_class` rows per class, class-major, random unit rows.
inline node_adapter::io::EmbeddingSet random_set(SplitMix64& rng, std::uint32_t classes, std::uint32_t per_class,
                                                 std::size_t dim,
                                                 node_adapter::io::Modality modality = node_adapter::io::Modality::Visual) {
  node_adapter::io::EmbeddingSet s;
  s.modality = modality;
  s.num_classes = classes;
  s.features = random_unit_rows(rng, static_cast<std::size_t>(classes) * per_class, dim);
  for (std::uint32_t c = 0; c < classes; ++c) s.labels.insert(s.labels.end(), per_class, c);
  return s;
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("node_adapter_tests_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
