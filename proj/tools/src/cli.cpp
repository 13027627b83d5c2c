#include "node_adapter_cli/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "node_adapter/errors.hpp"
#include "node_adapter/evaluation.hpp"
#include "node_adapter/model_io.hpp"
#include "node_adapter_cli/checks.hpp"
#include "node_adapter_cli/run_config.hpp"

namespace node_adapter::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr std::initializer_list<const char*> kSynthKeys = {
    "classes", "dim", "shots", "queries", "prompts", "visual_noise", "textual_noise", "bias", "seed"};
constexpr std::initializer_list<const char*> kTrainKeys = {
    "epochs",  "lr",      "lr_min",     "temperature", "weight_decay", "beta1", "beta2", "eps",
    "decay_rate", "horizon", "embed_dim", "solver",    "steps",        "t0",    "tm",    "seed"};
constexpr std::initializer_list<const char*> kEpisodeKeys = {"way", "shot", "queries", "episodes", "variant"};

std::string flag_of(std::string_view key) {
  std::string f = "--" + std::string(key);
  for (char& c : f)
    if (c == '_') c = '-';
  return f;
}

// Options of one subcommand that mirror RunConfig keys, plus --config.
class ConfiguredCommand {
 public:
  ConfiguredCommand(CLI::App* app, std::initializer_list<std::initializer_list<const char*>> key_sets) {
    const RunConfig defaults;
    for (const auto& keys : key_sets) {
      for (const char* key : keys) {
        if (values_.count(key)) continue;
        const ConfigKey* k = find_key(key);
        values_[key];
        options_[key] = app->add_option(flag_of(key), values_[key], k->help)->default_str(k->get(defaults));
      }
    }
    app->add_option("--config", config_path_, "flat key = value file; flags override it");
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_path_.empty()) apply_config(cfg, read_config(config_path_));
    for (const auto& [key, opt] : options_) {
      if (opt->count() == 0) continue;
      try {
        find_key(key)->set(cfg, values_.at(key));
      } catch (const UsageError& e) {
        // Messages start with the key; report the flag instead.
        throw UsageError(flag_of(key) + std::string(e.what()).substr(key.size()));
      }
    }
    return cfg;
  }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, CLI::Option*> options_;
  std::string config_path_;
};

json set_json(const std::string& name, const fs::path& path, const io::EmbeddingSet& set) {
  json j;
  j["name"] = name;
  j["path"] = path.generic_string();
  j["modality"] = io::to_string(set.modality);
  j["rows"] = set.size();
  j["dim"] = set.dim();
  j["classes"] = set.num_classes;
  return j;
}

json train_config_json(const train::TrainConfig& c) {
  json j;
  j["epochs"] = c.epochs;
  j["lr0"] = c.lr0;
  j["lr_min"] = c.lr_min;
  j["temperature"] = c.temperature;
  j["weight_decay"] = c.weight_decay;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["eps"] = c.eps;
  j["decay_rate"] = c.decay_rate;
  j["horizon"] = c.horizon;
  j["embed_dim"] = c.embed_dim;
  j["solver"] = {{"method", ode::to_string(c.solver.method)},
                 {"steps", c.solver.steps},
                 {"t0", c.solver.t0},
                 {"tm", c.solver.tm}};
  j["seed"] = c.seed;
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

void require_modality(const io::EmbeddingSet& set, io::Modality want, const std::string& what) {
  if (set.modality != want) {
    throw MappingError(what + " file holds " + io::to_string(set.modality) + " features, expected " +
                       io::to_string(want));
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

unsigned thread_count() {
  const char* env = std::getenv("NODE_ADAPTER_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024) {
    throw UsageError(std::string("NODE_ADAPTER_THREADS must be an integer in [1, 1024], got '") + env + "'");
  }
  return static_cast<unsigned>(n);
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-modal prototype refinement with a learned Neural-ODE gradient field.", "node_adapter"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  // synth
  auto* synth = app.add_subcommand("synth", "write a synthetic biased-support benchmark (NAEB files)");
  ConfiguredCommand synth_opts(synth, {kSynthKeys});
  std::string synth_out;
  synth->add_option("--out", synth_out, "output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train u and the gradient field, write a NAPM model");
  ConfiguredCommand train_opts(train_cmd, {kTrainKeys});
  std::string support_path, prompts_path, model_out, metrics_path;
  train_cmd->add_option("--support", support_path, "visual support set (NAEB)")->required();
  train_cmd->add_option("--prompts", prompts_path, "textual prompt set (NAEB)")->required();
  train_cmd->add_option("--out", model_out, "model file to write")->required();
  train_cmd->add_option("--metrics", metrics_path, "per-epoch metrics (JSON lines)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a model on a query set");
  ConfiguredCommand eval_opts(eval_cmd, {{"variant"}});
  std::string model_path, query_path, report_path, confusion_path;
  bool ablation = false;
  eval_cmd->add_option("--model", model_path, "model file (NAPM)")->required();
  eval_cmd->add_option("--query", query_path, "query set (NAEB)")->required();
  eval_cmd->add_flag("--ablation", ablation, "report all four variants");
  eval_cmd->add_option("--report", report_path, "write the JSON report here instead of stdout");
  eval_cmd->add_option("--confusion-csv", confusion_path, "write the confusion matrix of the last report as CSV");

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference checks of the tape, the field and the adjoint");
  GradcheckOptions gc;
  double threshold = 1e-4;
  grad_cmd->add_option("--threshold", threshold, "maximum accepted relative error")->capture_default_str();
  grad_cmd->add_option("--seed", gc.seed, "instance seed")->capture_default_str();
  grad_cmd->add_option("--embed-dim", gc.embed_dim, "field embedding width")->capture_default_str()->check(
      CLI::PositiveNumber);
  grad_cmd->add_option("--t0", gc.t0, "start of the adjoint check's interval")->capture_default_str();
  grad_cmd->add_option("--tm", gc.tm, "end of the adjoint check's interval")->capture_default_str();
  grad_cmd->add_option("--fd-step", gc.fd_step, "central-difference step")->capture_default_str()->check(
      CLI::PositiveNumber);
  grad_cmd->add_option("--steps", gc.steps, "solver steps of the adjoint check")->capture_default_str()->check(
      CLI::PositiveNumber);

  // solver-bench
  auto* bench_cmd = app.add_subcommand("solver-bench", "global error vs step count on dp/dt = -p (CSV)");
  std::vector<int> bench_steps = {4, 8, 16, 32, 64, 128};
  std::vector<std::string> bench_methods = {"euler", "ab2", "abm2", "rk4"};
  bench_cmd->add_option("--steps", bench_steps, "step counts")->capture_default_str()->check(CLI::PositiveNumber);
  bench_cmd->add_option("--method", bench_methods, "methods")->capture_default_str();

  // episode
  auto* episode_cmd = app.add_subcommand("episode", "N-way K-shot episodic evaluation");
  ConfiguredCommand episode_opts(episode_cmd, {kEpisodeKeys, kTrainKeys});
  std::string visual_path, textual_path;
  episode_cmd->add_option("--visual", visual_path, "labelled visual rows to draw episodes from (NAEB)")->required();
  episode_cmd->add_option("--textual", textual_path, "prompt rows for the same classes (NAEB)")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);

    if (synth->parsed()) {
      const auto spec = synth_opts.resolve().synth_spec();
      const auto bundle = data::synth_generate(spec);
      const fs::path dir(synth_out);
      std::error_code ec;
      fs::create_directories(dir, ec);
      if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
      json manifest;
      manifest["seed"] = spec.seed;
      manifest["spec"] = {{"classes", spec.classes},           {"dim", spec.dim},
                          {"shots", spec.shots},               {"queries", spec.queries},
                          {"prompts", spec.prompts},           {"visual_noise", spec.visual_noise},
                          {"textual_noise", spec.textual_noise}, {"bias", spec.support_bias}};
      manifest["files"] = json::array();
      for (const auto& [name, set] : {std::pair<const char*, const io::EmbeddingSet*>{"support", &bundle.support},
                                      {"query", &bundle.query},
                                      {"prompts", &bundle.prompts}}) {
        const fs::path path = dir / (std::string(name) + ".naeb");
        io::write_naeb(*set, path);
        manifest["files"].push_back(set_json(name, path, *set));
      }
      out << manifest.dump(2) << '\n';
      err << "wrote " << bundle.support.size() << " support, " << bundle.query.size() << " query and "
          << bundle.prompts.size() << " prompt rows to " << dir.string() << '\n';
      return kOk;
    }

    if (train_cmd->parsed()) {
      const auto tc = train_opts.resolve().train_config();
      const auto support = io::read_naeb(support_path);
      const auto prompts = io::read_naeb(prompts_path);
      require_modality(support, io::Modality::Visual, "support");
      require_modality(prompts, io::Modality::Textual, "prompts");

      std::ofstream metrics;
      if (!metrics_path.empty()) {
        metrics.open(metrics_path, std::ios::binary | std::ios::trunc);
        if (!metrics) throw IoError("cannot open " + metrics_path + " for writing");
        metrics << json{{"header", train_config_json(tc)}}.dump() << '\n' << std::flush;
      }
      std::optional<train::EpochRecord> last;
      const auto start = std::chrono::steady_clock::now();
      const auto model = train::train(support, prompts, tc, [&](const train::EpochRecord& r) {
        last = r;
        if (metrics.is_open()) {
          metrics << json{{"epoch", r.epoch}, {"lr", r.lr}, {"loss", r.loss}, {"support_acc", r.support_acc}}.dump()
                  << '\n'
                  << std::flush;
        }
        err << "epoch " << r.epoch << "  lr " << r.lr << "  loss " << r.loss << "  support acc " << r.support_acc
            << '\n';
      });
      const double elapsed = seconds_since(start);
      io::write_model(model, model_out);

      json summary;
      summary["model"] = model_out;
      summary["classes"] = model.classes();
      summary["dim"] = model.P_tm.cols();
      summary["epochs_run"] = model.epochs_run;
      summary["parameters"] = model.params.parameter_count() + model.u.size();
      summary["last_epoch"] = last ? json{{"epoch", last->epoch},
                                          {"lr", last->lr},
                                          {"loss", last->loss},
                                          {"support_acc", last->support_acc}}
                                   : json(nullptr);
      out << summary.dump(2) << '\n';
      err << "trained " << model.epochs_run << " epochs in " << elapsed << " s, model written to " << model_out
          << '\n';
      return kOk;
    }

    if (eval_cmd->parsed()) {
      const auto cfg = eval_opts.resolve();
      const auto model = io::read_model(model_path);
      const auto query = io::read_naeb(query_path);
      std::vector<eval::EvalReport> reports;
      if (ablation) {
        for (auto v : eval::kAllVariants) reports.push_back(eval::evaluate(model, query, v));
      } else {
        reports.push_back(eval::evaluate(model, query, eval::parse_variant(cfg.variant)));
      }
      const std::string text = ablation ? eval::to_json(reports, 2) : eval::to_json(reports.front(), 2);
      if (!report_path.empty()) {
        write_text(report_path, text + "\n");
      } else {
        out << text << '\n';
      }
      if (!confusion_path.empty()) write_text(confusion_path, eval::confusion_csv(reports.back()));
      for (const auto& r : reports) err << r.variant << "  accuracy " << r.accuracy << "  (" << r.n_queries << " queries)\n";
      return kOk;
    }

    if (grad_cmd->parsed()) {
      const auto results = run_gradchecks(gc);
      bool pass = true;
      json report;
      report["threshold"] = threshold;
      report["seed"] = gc.seed;
      report["checks"] = json::array();
      for (const auto& r : results) {
        const bool ok = r.max_rel_error < threshold;
        pass = pass && ok;
        report["checks"].push_back(
            {{"name", r.name}, {"max_rel_error", r.max_rel_error}, {"entries", r.entries}, {"pass", ok}});
        err << r.name << ": max relative error " << r.max_rel_error << " over " << r.entries << " entries"
            << (ok ? "" : "  FAIL") << '\n';
      }
      report["pass"] = pass;
      out << report.dump(2) << '\n';
      return pass ? kOk : kCheckFailed;
    }

    if (bench_cmd->parsed()) {
      std::vector<ode::Method> methods;
      for (const auto& m : bench_methods) methods.push_back(ode::parse_method(m));
      const auto rows = solver_bench(methods, bench_steps);
      out << solver_bench_csv(rows);
      return kOk;
    }

    if (episode_cmd->parsed()) {
      const auto cfg = episode_opts.resolve();
      const auto tc = cfg.train_config();
      const unsigned threads = thread_count();
      const auto visual = io::read_naeb(visual_path);
      const auto textual = io::read_naeb(textual_path);
      require_modality(visual, io::Modality::Visual, "visual");
      require_modality(textual, io::Modality::Textual, "textual");
      eval::EpisodeSpec spec;
      spec.way = cfg.way;
      spec.shot = cfg.shot;
      spec.queries = cfg.synth.queries;
      spec.episodes = cfg.episodes;
      spec.seed = cfg.seed;
      spec.variant = eval::parse_variant(cfg.variant);
      const auto start = std::chrono::steady_clock::now();
      const auto reports = eval::run_episodes(visual, textual, spec, tc, threads);
      double mean = 0.0;
      for (const auto& r : reports) mean += r.accuracy / static_cast<double>(reports.size());
      json j;
      j["way"] = spec.way;
      j["shot"] = spec.shot;
      j["queries"] = spec.queries;
      j["episodes"] = spec.episodes;
      j["seed"] = spec.seed;
      j["variant"] = eval::to_string(spec.variant);
      j["mean_accuracy"] = mean;
      j["reports"] = json::parse(eval::to_json(reports));
      out << j.dump(2) << '\n';
      err << spec.episodes << " episodes (" << spec.way << "-way " << spec.shot << "-shot, " << threads
          << " threads) in " << seconds_since(start) << " s, mean accuracy " << mean << '\n';
      return kOk;
    }
    return kUsage;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kOk;
    }
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kDivergence;
  } catch (const Error& e) {
    // Mapping, capacity, shape and degenerate-input errors: the data do not fit together.
    err << "error: " << e.what() << '\n';
    return kDataMismatch;
  }
}

}  // namespace node_adapter::cli
