#include "softmax_rows.hpp"

#include <cmath>

namespace node_adapter::field::detail {

void softmax_rows(double* data, std::size_t rows, std::size_t cols, std::size_t stride) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* x = data + r * stride;
    double m = x[0];
    for (std::size_t j = 1; j < cols; ++j) m = x[j] > m ? x[j] : m;
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      x[j] = std::exp(x[j] - m);
      s += x[j];
    }
    const double inv = 1.0 / s;
    for (std::size_t j = 0; j < cols; ++j) x[j] *= inv;
  }
}

}  // namespace node_adapter::field::detail
