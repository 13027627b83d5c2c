#include "node_adapter/evaluation.hpp"

#include <atomic>
#include <exception>
#include <map>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "node_adapter/classifier.hpp"
#include "node_adapter/errors.hpp"
#include "node_adapter/prototype.hpp"
#include "node_adapter/rng.hpp"
#include "node_adapter/synthetic.hpp"

namespace node_adapter::eval {

namespace {
using json = nlohmann::ordered_json;

json report_json(const EvalReport& r) {
  json per_class = json::array();
  for (const auto& a : r.per_class_accuracy) per_class.push_back(a ? json(*a) : json(nullptr));
  json j;
  j["variant"] = r.variant;
  j["accuracy"] = r.accuracy;
  j["n_queries"] = r.n_queries;
  j["seed"] = r.seed;
  j["per_class_accuracy"] = std::move(per_class);
  j["confusion"] = r.confusion;
  return j;
}
}  // namespace

const char* to_string(Variant v) noexcept {
  switch (v) {
    case Variant::TP: return "TP";
    case Variant::VP: return "VP";
    case Variant::Fused: return "TP+VP";
    case Variant::Refined: return "TP+VP+NODE";
  }
  return "?";
}

Variant parse_variant(std::string_view tag) {
  for (Variant v : kAllVariants)
    if (tag == to_string(v)) return v;
  throw UsageError("unknown variant '" + std::string(tag) + "' (expected TP, VP, TP+VP or TP+VP+NODE)");
}

EvalReport make_report(std::span<const std::uint32_t> predicted, std::span<const std::uint32_t> truth,
                       std::size_t classes, Variant variant, std::uint64_t seed) {
  if (predicted.size() != truth.size()) throw ShapeError("make_report: length mismatch");
  EvalReport r;
  r.variant = to_string(variant);
  r.seed = seed;
  r.n_queries = truth.size();
  r.confusion.assign(classes, std::vector<std::uint64_t>(classes, 0));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= classes || predicted[i] >= classes) throw MappingError("make_report: label out of range");
    ++r.confusion[truth[i]][predicted[i]];
    hits += truth[i] == predicted[i];
  }
  r.accuracy = truth.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(truth.size());
  for (std::size_t c = 0; c < classes; ++c) {
    std::uint64_t total = 0;
    for (auto n : r.confusion[c]) total += n;
    r.per_class_accuracy.push_back(total ? std::optional<double>(static_cast<double>(r.confusion[c][c]) /
                                                                 static_cast<double>(total))
                                         : std::nullopt);
  }
  return r;
}

std::string to_json(const EvalReport& report, int indent) { return report_json(report).dump(indent); }

std::string to_json(std::span<const EvalReport> reports, int indent) {
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(report_json(r));
  return arr.dump(indent);
}

std::string confusion_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "truth";
  for (std::size_t k = 0; k < report.confusion.size(); ++k) out << ",pred_" << k;
  out << '\n';
  for (std::size_t c = 0; c < report.confusion.size(); ++c) {
    out << c;
    for (auto n : report.confusion[c]) out << ',' << n;
    out << '\n';
  }
  return out.str();
}

Matrix unadapted_fusion(const Matrix& P_t, const Matrix& P_v) {
  const std::vector<double> half(P_t.rows(), 0.5);
  return proto::fuse(P_t, P_v, half).P;
}

Matrix prototypes_for(const train::TrainedModel& model, Variant variant) {
  switch (variant) {
    case Variant::TP: return model.P_t;
    case Variant::VP: return model.P_v;
    case Variant::Fused: return unadapted_fusion(model.P_t, model.P_v);
    case Variant::Refined: return model.P_tm;
  }
  throw UsageError("unknown variant");
}

std::vector<std::uint32_t> map_labels(const train::TrainedModel& model, const io::EmbeddingSet& query) {
  const std::size_t N = model.classes();
  std::vector<std::uint32_t> labels(query.labels.size());
  const bool by_name = !model.class_names.empty() && !query.class_names.empty();
  std::map<std::string, std::uint32_t> index;
  if (by_name) {
    for (std::uint32_t c = 0; c < model.class_names.size(); ++c) index.emplace(model.class_names[c], c);
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::uint32_t l = query.labels[i];
    if (by_name) {
      if (l >= query.class_names.size()) throw MappingError("query row " + std::to_string(i) + " has no class name");
      const auto it = index.find(query.class_names[l]);
      if (it == index.end()) throw MappingError("query class '" + query.class_names[l] + "' is unknown to the model");
      labels[i] = it->second;
    } else {
      if (l >= N) {
        throw MappingError("query label " + std::to_string(l) + " is outside the model's " + std::to_string(N) +
                           " classes");
      }
      labels[i] = l;
    }
  }
  return labels;
}

EvalReport evaluate(const train::TrainedModel& model, const io::EmbeddingSet& query, Variant variant) {
  const auto truth = map_labels(model, query);
  if (query.size() && query.dim() != model.P_tm.cols()) {
    throw MappingError("query width " + std::to_string(query.dim()) + " differs from model width " +
                       std::to_string(model.P_tm.cols()));
  }
  const auto predicted = cls::predict(query.features, prototypes_for(model, variant));
  return make_report(predicted, truth, model.classes(), variant, model.config.seed);
}

std::vector<EvalReport> ablation_run(const AblationData& data, const train::TrainConfig& cfg,
                                     train::TrainedModel* trained) {
  train::TrainedModel model = train::train(data.support, data.prompts, cfg);
  std::vector<EvalReport> reports;
  for (Variant v : kAllVariants) reports.push_back(evaluate(model, data.query, v));
  if (trained) *trained = std::move(model);
  return reports;
}

std::vector<Side> binary_episode(const Matrix& positive, const Matrix& negative, const io::EmbeddingSet& prompts,
                                 const Matrix& query, const BinaryOptions& options) {
  if (positive.rows() == 0) throw CapacityError("binary episode: positive support set is empty");
  if (negative.rows() == 0) throw CapacityError("binary episode: negative support set is empty");
  if (prompts.num_classes != 2) throw MappingError("binary episode: prompts must cover exactly 2 classes");

  io::EmbeddingSet support;
  support.num_classes = 2;
  std::vector<double> values(positive.values().begin(), positive.values().end());
  values.insert(values.end(), negative.values().begin(), negative.values().end());
  support.features = Matrix(positive.rows() + negative.rows(), positive.cols(), values);
  support.labels.assign(positive.rows(), 0);
  support.labels.resize(support.features.rows(), 1);

  Matrix P;
  if (options.refine) {
    P = train::train(support, prompts, options.train).P_tm;
  } else {
    const auto problem = train::make_problem(support, prompts);
    P = unadapted_fusion(problem.P_t, problem.P_v);
  }
  std::vector<Side> sides;
  for (auto label : cls::predict(query, P)) sides.push_back(static_cast<Side>(label));
  return sides;
}

std::vector<EvalReport> run_episodes(const io::EmbeddingSet& visual, const io::EmbeddingSet& textual,
                                     const EpisodeSpec& spec, const train::TrainConfig& cfg, unsigned threads) {
  std::vector<EvalReport> reports(spec.episodes);
  std::vector<std::exception_ptr> errors(spec.episodes);
  std::atomic<std::uint32_t> next{0};

  auto worker = [&] {
    for (std::uint32_t e = next++; e < spec.episodes; e = next++) {
      try {
        const std::uint64_t seed = SplitMix64::mix64(spec.seed ^ SplitMix64::mix64(e + 1));
        const auto ep = data::sample_episode(visual, textual, spec.way, spec.shot, spec.queries, seed);
        train::TrainConfig episode_cfg = cfg;
        if (spec.variant != Variant::Refined) episode_cfg.epochs = 0;
        const auto model = train::train(ep.support, ep.prompts, episode_cfg);
        reports[e] = evaluate(model, ep.query, spec.variant);
        reports[e].seed = seed;
      } catch (...) {
        errors[e] = std::current_exception();
      }
    }
  };

  const unsigned n = std::max(1u, std::min<unsigned>(threads, spec.episodes));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned k = 0; k < n; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);
  return reports;
}

}  // namespace node_adapter::eval
