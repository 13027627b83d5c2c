#pragma once

#include <cstddef>

namespace node_adapter::field::detail {

// In-place max-shifted softmax over each row of a dense row-major block.
// Lives in its own translation unit, built with flags that let the compiler
// call the vectorized libm exp; inputs must be finite.
void softmax_rows(double* data, std::size_t rows, std::size_t cols, std::size_t stride);

}  // namespace node_adapter::field::detail
