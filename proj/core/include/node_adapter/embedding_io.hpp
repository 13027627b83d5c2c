#pragma once

// EmbeddingSet and the NAEB interchange format.
//
// NAEB layout (little-endian):
//   0-3   magic "NAEB"
//   4     version (1)
//   5     dtype (1 = float32)
//   6     modality (0 visual, 1 textual)
//   7     reserved (0)
//   8-11  N rows (u32)      12-15 D (u32)      16-19 C classes (u32)
//   N x u32 labels, then N*D float32 features row-major,
//   u32 name_count (0 or C), then name_count x (u32 byte length + UTF-8 bytes).

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "node_adapter/tensor.hpp"

namespace node_adapter::io {

enum class Modality : std::uint8_t { Visual = 0, Textual = 1 };

const char* to_string(Modality m) noexcept;

struct EmbeddingSet {
  Modality modality = Modality::Visual;
  Matrix features;                       // rows are unit-norm
  std::vector<std::uint32_t> labels;     // one per row, < num_classes
  std::uint32_t num_classes = 0;
  std::vector<std::string> class_names;  // empty or num_classes entries

  std::size_t size() const noexcept { return features.rows(); }
  std::size_t dim() const noexcept { return features.cols(); }

  /// Row indices carrying label `c`, in row order.
  std::vector<std::size_t> rows_of_class(std::uint32_t c) const;
  /// Checks label range, label count and the class-name table.
  void validate() const;

  bool operator==(const EmbeddingSet&) const = default;
};

std::vector<std::uint8_t> encode_naeb(const EmbeddingSet& set);
/// Throws FormatError with the byte offset of the first problem.
EmbeddingSet decode_naeb(std::span<const std::uint8_t> bytes);

void write_naeb(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet read_naeb(const std::filesystem::path& path);

/// Debug import: header `label,f0,...,f{D-1}`, one row per sample. Rows are
/// L2-normalised; the class count is max(label) + 1.
EmbeddingSet read_csv_embeddings(const std::filesystem::path& path, Modality modality);

/// Round every feature through float32, the interchange precision.
Matrix quantize_f32(const Matrix& m);

}  // namespace node_adapter::io
