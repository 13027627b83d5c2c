#include "node_adapter/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "node_adapter/errors.hpp"
#include "node_adapter/rng.hpp"

namespace node_adapter::data {

namespace {

// Substream tags; fixed so outputs stay reproducible across versions.
enum : std::uint64_t { kMeans = 1, kBias = 2, kSupportNoise = 3, kQueryNoise = 4, kPromptNoise = 5 };

Matrix unit_directions(SplitMix64 rng, std::size_t count, std::size_t dim) {
  Matrix m(count, dim);
  for (double& v : m.values()) v = rng.normal();
  return tensor::l2_normalize_rows(m);
}

// Rows normalize(mean_c + shift_c + sigma * eps), `per_class` rows per class.
EmbeddingSet noisy_rows(SplitMix64 rng, const Matrix& means, const Matrix* shifts, double shift_scale,
                        double sigma, std::size_t per_class, io::Modality modality) {
  const std::size_t classes = means.rows();
  const std::size_t dim = means.cols();
  EmbeddingSet set;
  set.modality = modality;
  set.num_classes = static_cast<std::uint32_t>(classes);
  Matrix raw(classes * per_class, dim);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t k = 0; k < per_class; ++k) {
      auto row = raw.row(c * per_class + k);
      for (std::size_t d = 0; d < dim; ++d) {
        double v = means(c, d);
        if (shifts) v += shift_scale * (*shifts)(c, d);
        row[d] = v + sigma * rng.normal();
      }
      set.labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  set.features = tensor::l2_normalize_rows(raw);
  for (std::size_t c = 0; c < classes; ++c) set.class_names.push_back("class_" + std::to_string(c));
  return set;
}

}  // namespace

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& what) { throw UsageError(what); };
  if (classes < 2) fail("classes must be >= 2");
  if (dim < 2) fail("dim must be >= 2");
  if (shots < 1) fail("shots must be >= 1");
  if (prompts < 1) fail("prompts must be >= 1");
  if (!(visual_noise >= 0.0) || !std::isfinite(visual_noise)) fail("visual_noise must be finite and >= 0");
  if (!(textual_noise >= 0.0) || !std::isfinite(textual_noise)) fail("textual_noise must be finite and >= 0");
  if (!(support_bias >= 0.0) || !std::isfinite(support_bias)) fail("support_bias must be finite and >= 0");
}

SyntheticBundle synth_generate(const SyntheticSpec& spec) {
  spec.validate();
  const SplitMix64 root(spec.seed);
  SyntheticBundle out;
  out.class_means = unit_directions(root.substream(kMeans), spec.classes, spec.dim);
  out.bias_directions = unit_directions(root.substream(kBias), spec.classes, spec.dim);
  out.support = noisy_rows(root.substream(kSupportNoise), out.class_means, &out.bias_directions, spec.support_bias,
                           spec.visual_noise, spec.shots, io::Modality::Visual);
  out.query = noisy_rows(root.substream(kQueryNoise), out.class_means, nullptr, 0.0, spec.visual_noise, spec.queries,
                         io::Modality::Visual);
  out.prompts = noisy_rows(root.substream(kPromptNoise), out.class_means, nullptr, 0.0, spec.textual_noise,
                           spec.prompts, io::Modality::Textual);
  return out;
}

EmbeddingSet concat(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.modality != b.modality || a.num_classes != b.num_classes || (a.size() && b.size() && a.dim() != b.dim())) {
    throw ShapeError("concat: incompatible embedding sets");
  }
  EmbeddingSet out;
  out.modality = a.modality;
  out.num_classes = a.num_classes;
  out.class_names = a.class_names.empty() ? b.class_names : a.class_names;
  const std::size_t dim = a.size() ? a.dim() : b.dim();
  std::vector<double> values(a.features.values().begin(), a.features.values().end());
  values.insert(values.end(), b.features.values().begin(), b.features.values().end());
  out.features = Matrix(a.size() + b.size(), dim, values);
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

Episode sample_episode(const EmbeddingSet& visual, const EmbeddingSet& textual, std::uint32_t way,
                       std::uint32_t shot, std::uint32_t queries, std::uint64_t seed) {
  if (way < 1 || way > visual.num_classes) {
    throw UsageError("way " + std::to_string(way) + " must be in [1, " + std::to_string(visual.num_classes) + "]");
  }
  if (shot < 1) throw UsageError("shot must be >= 1");
  if (textual.num_classes != visual.num_classes || (textual.size() && textual.dim() != visual.dim())) {
    throw MappingError("visual and textual sets disagree on classes or dimension");
  }

  SplitMix64 rng(seed);
  std::vector<std::uint32_t> classes(visual.num_classes);
  std::iota(classes.begin(), classes.end(), 0u);
  rng.shuffle(std::span<std::uint32_t>(classes));
  classes.resize(way);

  Episode ep;
  ep.way = way;
  ep.shot = shot;
  ep.source_classes = classes;

  auto start = [&](io::Modality modality) {
    EmbeddingSet s;
    s.modality = modality;
    s.num_classes = way;
    if (!visual.class_names.empty()) {
      for (auto c : classes) s.class_names.push_back(visual.class_names[c]);
    }
    return s;
  };
  ep.support = start(io::Modality::Visual);
  ep.query = start(io::Modality::Visual);
  ep.prompts = start(io::Modality::Textual);

  std::vector<double> support_values, query_values, prompt_values;
  auto take = [](std::vector<double>& dst, const EmbeddingSet& src, std::size_t row) {
    const auto r = src.features.row(row);
    dst.insert(dst.end(), r.begin(), r.end());
  };

  for (std::uint32_t label = 0; label < way; ++label) {
    const std::uint32_t source = classes[label];
    auto rows = visual.rows_of_class(source);
    if (rows.size() < static_cast<std::size_t>(shot) + queries) {
      throw CapacityError("class " + std::to_string(source) + " has " + std::to_string(rows.size()) +
                          " visual rows, needs " + std::to_string(shot + queries));
    }
    auto prompt_rows = textual.rows_of_class(source);
    if (prompt_rows.empty()) throw CapacityError("class " + std::to_string(source) + " has no prompt rows");

    SplitMix64 class_rng = rng.substream(source);
    class_rng.shuffle(std::span<std::size_t>(rows));
    for (std::uint32_t k = 0; k < shot; ++k) {
      take(support_values, visual, rows[k]);
      ep.support.labels.push_back(label);
    }
    for (std::uint32_t q = 0; q < queries; ++q) {
      take(query_values, visual, rows[shot + q]);
      ep.query.labels.push_back(label);
    }
    for (auto r : prompt_rows) {
      take(prompt_values, textual, r);
      ep.prompts.labels.push_back(label);
    }
  }
  const std::size_t dim = visual.dim();
  ep.support.features = Matrix(ep.support.labels.size(), dim, support_values);
  ep.query.features = Matrix(ep.query.labels.size(), dim, query_values);
  ep.prompts.features = Matrix(ep.prompts.labels.size(), dim, prompt_values);
  return ep;
}

}  // namespace node_adapter::data
