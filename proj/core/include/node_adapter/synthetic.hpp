#pragma once

// Seeded biased-support benchmark and N-way K-shot episode sampling.

#include <cstdint>
#include <vector>

#include "node_adapter/embedding_io.hpp"

namespace node_adapter::data {

using io::EmbeddingSet;

struct SyntheticSpec {
  std::uint32_t classes = 10;
  std::uint32_t dim = 32;
  std::uint32_t shots = 16;
  std::uint32_t queries = 20;
  std::uint32_t prompts = 5;
  double visual_noise = 0.25;   // per-coordinate std of visual rows
  double textual_noise = 0.15;  // per-coordinate std of prompt rows
  double support_bias = 0.3;    // length of the per-class shift applied to support rows only
  std::uint64_t seed = 1;

  /// Throws UsageError naming the offending field.
  void validate() const;
};

struct SyntheticBundle {
  EmbeddingSet support;  // classes*shots rows, class-major
  EmbeddingSet query;    // classes*queries rows, class-major
  EmbeddingSet prompts;  // classes*prompts rows, class-major, textual
  Matrix class_means;    // C x D unit latent directions
  Matrix bias_directions;  // C x D unit support-bias directions
};

/// Each generated component draws from its own substream of `spec.seed`, so
/// e.g. changing `queries` leaves the support rows untouched.
SyntheticBundle synth_generate(const SyntheticSpec& spec);

struct Episode {
  EmbeddingSet support;  // way*shot rows, labels 0..way-1, class-major
  EmbeddingSet query;    // way*queries rows
  EmbeddingSet prompts;  // every textual row of the chosen classes
  std::uint32_t way = 0;
  std::uint32_t shot = 0;
  std::vector<std::uint32_t> source_classes;  // episode label -> source label
};

/// Draws `way` classes and, per class, disjoint shot + queries rows of
/// `visual`. Throws CapacityError naming the first class that runs short.
Episode sample_episode(const EmbeddingSet& visual, const EmbeddingSet& textual, std::uint32_t way,
                       std::uint32_t shot, std::uint32_t queries, std::uint64_t seed);

/// Rows of `a` followed by rows of `b`; both must share modality, dimension
/// and class count.
EmbeddingSet concat(const EmbeddingSet& a, const EmbeddingSet& b);

}  // namespace node_adapter::data
