#pragma once

// Query evaluation, the four-variant component ablation, binary (2-way)
// episodes and multi-episode N-way K-shot runs.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "node_adapter/embedding_io.hpp"
#include "node_adapter/trainer.hpp"

namespace node_adapter::eval {

/// Which prototypes classify the queries.
enum class Variant { TP, VP, Fused, Refined };

/// "TP", "VP", "TP+VP", "TP+VP+NODE".
const char* to_string(Variant v) noexcept;
/// Throws UsageError for unknown tags.
Variant parse_variant(std::string_view tag);
inline constexpr Variant kAllVariants[] = {Variant::TP, Variant::VP, Variant::Fused, Variant::Refined};

struct EvalReport {
  std::string variant;
  double accuracy = 0.0;
  std::size_t n_queries = 0;
  std::uint64_t seed = 0;
  std::vector<std::optional<double>> per_class_accuracy;  // empty classes have no accuracy
  std::vector<std::vector<std::uint64_t>> confusion;      // [truth][predicted]

  bool operator==(const EvalReport&) const = default;
};

/// Report from predicted and true labels over `classes` classes.
EvalReport make_report(std::span<const std::uint32_t> predicted, std::span<const std::uint32_t> truth,
                       std::size_t classes, Variant variant, std::uint64_t seed);

/// Keys in fixed order: variant, accuracy, n_queries, seed, per_class_accuracy (null for
/// classes without queries), confusion.
std::string to_json(const EvalReport& report, int indent = -1);
std::string to_json(std::span<const EvalReport> reports, int indent = -1);
/// Header "truth,pred_0,...,pred_{N-1}", one row per true class.
std::string confusion_csv(const EvalReport& report);

/// TP + VP fused with u = 0 (lambda = 0.5).
Matrix unadapted_fusion(const Matrix& P_t, const Matrix& P_v);
Matrix prototypes_for(const train::TrainedModel& model, Variant variant);

/// Maps query labels onto the model's classes (by class name when both sides
/// carry names, else by index). Throws MappingError for unknown labels.
std::vector<std::uint32_t> map_labels(const train::TrainedModel& model, const io::EmbeddingSet& query);

EvalReport evaluate(const train::TrainedModel& model, const io::EmbeddingSet& query,
                    Variant variant = Variant::Refined);

struct AblationData {
  io::EmbeddingSet support;
  io::EmbeddingSet prompts;
  io::EmbeddingSet query;
};

/// Trains on support + prompts, then evaluates TP, VP, TP+VP and TP+VP+NODE
/// on the same queries. `trained` receives the model when given.
std::vector<EvalReport> ablation_run(const AblationData& data, const train::TrainConfig& cfg,
                                     train::TrainedModel* trained = nullptr);

enum class Side : std::uint32_t { Positive = 0, Negative = 1 };

struct BinaryOptions {
  /// When false the fused (TP+VP) prototypes classify; when true a field is
  /// trained on the 2-way support set and the refined prototypes classify.
  bool refine = false;
  train::TrainConfig train{};
};

/// 2-way episode: class 0 = positive, class 1 = negative. `prompts` holds the
/// positive prompt row(s) labelled 0 and the negative ones labelled 1.
/// Throws CapacityError if either support side is empty.
std::vector<Side> binary_episode(const Matrix& positive, const Matrix& negative, const io::EmbeddingSet& prompts,
                                 const Matrix& query, const BinaryOptions& options = {});

struct EpisodeSpec {
  std::uint32_t way = 5;
  std::uint32_t shot = 1;
  std::uint32_t queries = 15;
  std::uint32_t episodes = 10;
  std::uint64_t seed = 0;
  Variant variant = Variant::Refined;
};

/// Samples `episodes` episodes (episode e uses seed mix(seed, e)), trains
/// where the variant needs it and evaluates each. Work is spread over
/// `threads` workers; results are returned in episode order regardless.
std::vector<EvalReport> run_episodes(const io::EmbeddingSet& visual, const io::EmbeddingSet& textual,
                                     const EpisodeSpec& spec, const train::TrainConfig& cfg, unsigned threads = 1);

}  // namespace node_adapter::eval
