#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "node_adapter/embedding_io.hpp"
#include "node_adapter/errors.hpp"
#include "node_adapter_cli/cli.hpp"
#include "node_adapter_cli/run_config.hpp"
#include "support.hpp"

using namespace node_adapter;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

const std::vector<std::string> kSmall = {"--classes", "3", "--dim", "8", "--shots", "2", "--queries", "2",
                                         "--prompts", "2"};
const std::vector<std::string> kQuickTrain = {"--embed-dim", "8", "--epochs", "2", "--steps", "30"};

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Synthetic data plus a trained model in a fresh directory.
fs::path prepared(const std::string& name) {
  const auto dir = testing::scratch_dir(name);
  REQUIRE(invoke(cat({"synth", "--out", dir.string()}, kSmall)).code == cli::kOk);
  const auto trained = invoke(cat({"train", "--support", (dir / "support.naeb").string(), "--prompts",
                                   (dir / "prompts.naeb").string(), "--out", (dir / "model.napm").string()},
                                  kQuickTrain));
  REQUIRE(trained.code == cli::kOk);
  return dir;
}

}  // namespace

TEST_CASE("cli: synth writes a manifest and byte-identical files") {
  const auto a = testing::scratch_dir("cli_synth_a"), b = testing::scratch_dir("cli_synth_b");
  const auto ra = invoke(cat({"synth", "--out", a.string()}, kSmall));
  REQUIRE(ra.code == cli::kOk);
  const auto manifest = nlohmann::json::parse(ra.out);
  CHECK(manifest["files"].size() == 3);
  CHECK(manifest["files"][0]["rows"] == 6);
  CHECK(manifest["spec"]["dim"] == 8);
  REQUIRE(invoke(cat({"synth", "--out", b.string()}, kSmall)).code == cli::kOk);
  for (const char* f : {"support.naeb", "query.naeb", "prompts.naeb"}) CHECK(slurp(a / f) == slurp(b / f));

  const auto bad = invoke(cat(cat({"synth", "--out", a.string()}, kSmall), {"--shots", "0"}));
  CHECK(bad.code == cli::kUsage);
  CHECK(bad.err.find("--shots") != std::string::npos);
  CHECK(invoke({"synth"}).code == cli::kUsage);
  CHECK(invoke({}).code == cli::kUsage);
  CHECK(invoke({"frobnicate"}).code == cli::kUsage);
}

TEST_CASE("cli: train and eval are deterministic") {
  const auto dir = prepared("cli_train");
  const auto again = testing::scratch_dir("cli_train_again");
  REQUIRE(invoke(cat({"train", "--support", (dir / "support.naeb").string(), "--prompts",
                      (dir / "prompts.naeb").string(), "--out", (again / "model.napm").string()},
                     kQuickTrain))
              .code == cli::kOk);
  CHECK(slurp(dir / "model.napm") == slurp(again / "model.napm"));

  const std::vector<std::string> eval_args = {"eval", "--model", (dir / "model.napm").string(), "--query",
                                              (dir / "query.naeb").string()};
  const auto e1 = invoke(eval_args), e2 = invoke(eval_args);
  REQUIRE(e1.code == cli::kOk);
  CHECK(e1.out == e2.out);
  const auto report = nlohmann::json::parse(e1.out);
  CHECK(report["variant"] == "TP+VP+NODE");
  CHECK(report["n_queries"] == 6);
}

TEST_CASE("cli: metrics file with zero epochs holds only the header") {
  const auto dir = prepared("cli_metrics");
  const auto metrics = dir / "metrics.jsonl";
  const auto r = invoke({"train", "--support", (dir / "support.naeb").string(), "--prompts",
                         (dir / "prompts.naeb").string(), "--out", (dir / "zero.napm").string(), "--metrics",
                         metrics.string(), "--epochs", "0", "--embed-dim", "8"});
  REQUIRE(r.code == cli::kOk);
  const auto text = slurp(metrics);
  CHECK(std::count(text.begin(), text.end(), '\n') == 1);
  CHECK(nlohmann::json::parse(text).contains("header"));
  CHECK(nlohmann::json::parse(r.out)["last_epoch"].is_null());

  const auto two = invoke({"train", "--support", (dir / "support.naeb").string(), "--prompts",
                           (dir / "prompts.naeb").string(), "--out", (dir / "two.napm").string(), "--metrics",
                           metrics.string(), "--epochs", "2", "--embed-dim", "8"});
  REQUIRE(two.code == cli::kOk);
  const auto lines = slurp(metrics);
  CHECK(std::count(lines.begin(), lines.end(), '\n') == 3);
}

TEST_CASE("cli: exit codes for io, divergence and mismatched data") {
  const auto dir = prepared("cli_errors");
  const auto support = (dir / "support.naeb").string(), prompts = (dir / "prompts.naeb").string();
  const auto out = (dir / "m.napm").string();

  CHECK(invoke({"train", "--support", support, "--prompts", (dir / "none.naeb").string(), "--out", out}).code ==
        cli::kIo);

  std::ofstream(dir / "junk.naeb") << "not a file";
  CHECK(invoke({"train", "--support", support, "--prompts", (dir / "junk.naeb").string(), "--out", out}).code ==
        cli::kIo);

  const auto diverged = invoke({"train", "--support", support, "--prompts", prompts, "--out", out, "--solver",
                                "euler", "--steps", "400", "--tm", "4000", "--decay-rate", "0", "--epochs", "1",
                                "--embed-dim", "8"});
  CHECK(diverged.code == cli::kDivergence);
  CHECK(diverged.err.find("non-finite") != std::string::npos);

  CHECK(invoke({"train", "--support", support, "--prompts", support, "--out", out}).code == cli::kDataMismatch);

  const auto wide = testing::scratch_dir("cli_errors_wide");
  REQUIRE(invoke({"synth", "--out", wide.string(), "--classes", "3", "--dim", "9", "--shots", "2"}).code ==
          cli::kOk);
  CHECK(invoke({"eval", "--model", (dir / "model.napm").string(), "--query", (wide / "query.naeb").string()}).code ==
        cli::kDataMismatch);
}

TEST_CASE("cli: eval variants, ablation and confusion output") {
  const auto dir = prepared("cli_eval");
  const std::vector<std::string> base = {"eval", "--model", (dir / "model.napm").string(), "--query",
                                         (dir / "query.naeb").string()};
  CHECK(invoke(cat(base, {"--variant", "NODE"})).code == cli::kUsage);
  CHECK(nlohmann::json::parse(invoke(cat(base, {"--variant", "VP"})).out)["variant"] == "VP");

  const auto csv = dir / "confusion.csv", report = dir / "report.json";
  const auto r = invoke(cat(base, {"--ablation", "--report", report.string(), "--confusion-csv", csv.string()}));
  REQUIRE(r.code == cli::kOk);
  CHECK(r.out.empty());
  const auto rows = nlohmann::json::parse(slurp(report));
  REQUIRE(rows.size() == 4);
  CHECK(rows[3]["variant"] == "TP+VP+NODE");
  CHECK(slurp(csv).rfind("truth,pred_0,pred_1,pred_2\n", 0) == 0);
}

TEST_CASE("cli: gradcheck and solver-bench") {
  const auto strict = invoke({"gradcheck", "--threshold", "0"});
  CHECK(strict.code == cli::kCheckFailed);
  CHECK(nlohmann::json::parse(strict.out)["checks"].size() == 3);

  const auto bench = invoke({"solver-bench", "--steps", "4", "8", "--method", "euler", "rk4"});
  REQUIRE(bench.code == cli::kOk);
  CHECK(bench.out.rfind("method,steps,h,global_error\n", 0) == 0);
  CHECK(std::count(bench.out.begin(), bench.out.end(), '\n') == 5);
  CHECK(invoke({"solver-bench", "--method", "heun"}).code == cli::kUsage);
}

TEST_CASE("cli: config file values yield to flags") {
  const auto dir = testing::scratch_dir("cli_config");
  std::ofstream(dir / "run.cfg") << "# synthetic set\nclasses = 4\ndim = 5\n\nshots = 3\n";
  const auto r = invoke({"synth", "--out", (dir / "data").string(), "--config", (dir / "run.cfg").string(),
                         "--dim", "7", "--queries", "1", "--prompts", "1"});
  REQUIRE(r.code == cli::kOk);
  const auto spec = nlohmann::json::parse(r.out)["spec"];
  CHECK(spec["classes"] == 4);
  CHECK(spec["shots"] == 3);
  CHECK(spec["dim"] == 7);

  std::ofstream(dir / "bad.cfg") << "classes = 4\ncolour = blue\n";
  const auto bad = invoke({"synth", "--out", (dir / "data").string(), "--config", (dir / "bad.cfg").string()});
  CHECK(bad.code == cli::kUsage);
  CHECK(bad.err.find("line 2") != std::string::npos);

  CHECK_THROWS_AS(cli::parse_config("classes 4\n"), UsageError);
  const auto entries = cli::parse_config("  epochs = 3  \n# note\n");
  REQUIRE(entries.size() == 1);
  CHECK(entries[0].key == "epochs");
  CHECK(entries[0].value == "3");
  for (const auto& k : cli::config_keys()) {
    cli::RunConfig c;
    k.set(c, k.get(c));
    CHECK(k.get(c) == k.get(cli::RunConfig{}));
  }
}

TEST_CASE("cli: episode command") {
  const auto dir = testing::scratch_dir("cli_episode");
  REQUIRE(invoke({"synth", "--out", dir.string(), "--classes", "6", "--dim", "8", "--shots", "2", "--queries", "4",
                  "--prompts", "2"})
              .code == cli::kOk);
  const std::vector<std::string> args = {"episode", "--visual", (dir / "query.naeb").string(), "--textual",
                                         (dir / "prompts.naeb").string(), "--way", "3", "--shot", "2",
                                         "--queries", "2", "--episodes", "4", "--variant", "TP+VP"};
  const auto r = invoke(args);
  REQUIRE(r.code == cli::kOk);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["reports"].size() == 4);
  CHECK(j["variant"] == "TP+VP");
  CHECK(invoke(args).out == r.out);
  std::vector<std::string> greedy = args;
  greedy[8] = "3";  // more shots than any class holds
  CHECK(greedy[7] == "--shot");
  CHECK(invoke(greedy).code == cli::kDataMismatch);
}
