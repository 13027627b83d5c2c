#include <doctest.h>

#include <fstream>
#include <json.hpp>

#include "node_adapter/errors.hpp"
#include "node_adapter/model_io.hpp"
#include "node_adapter/synthetic.hpp"
#include "support.hpp"

using namespace node_adapter;

namespace {

train::TrainedModel small_model() {
  data::SyntheticSpec spec;
  spec.classes = 3;
  spec.dim = 6;
  spec.shots = 2;
  spec.prompts = 2;
  spec.queries = 1;
  const auto b = data::synth_generate(spec);
  train::TrainConfig cfg;
  cfg.embed_dim = 8;
  cfg.epochs = 1;
  cfg.solver.steps = 30;
  auto model = train::train(b.support, b.prompts, cfg);
  model.class_names = {"cat", "dog", "\xc3\xa9lan"};
  return model;
}

std::uint64_t format_offset(const std::vector<std::uint8_t>& bytes) {
  try {
    io::decode_model(bytes);
  } catch (const FormatError& e) {
    return e.offset();
  }
  FAIL("decode succeeded");
  return 0;
}

std::size_t blob_offset(const train::TrainedModel& m, const std::vector<std::uint8_t>& bytes) {
  return bytes.size() - 4 - io::model_config_json(m).size();
}

}  // namespace

TEST_CASE("napm: lossless round trip and deterministic bytes") {
  const auto model = small_model();
  const auto bytes = io::encode_model(model);
  CHECK(std::equal(bytes.begin(), bytes.begin() + 4, "NAPM"));
  CHECK(bytes[4] == 1);
  const auto back = io::decode_model(bytes);
  CHECK(back == model);
  CHECK(io::encode_model(back) == bytes);
  CHECK(io::encode_model(small_model()) == bytes);

  const auto dir = testing::scratch_dir("napm_roundtrip");
  io::write_model(model, dir / "m.napm");
  CHECK(io::read_model(dir / "m.napm") == model);
  CHECK_THROWS_AS(io::read_model(dir / "missing.napm"), IoError);
}

TEST_CASE("napm: config blob records the field and training settings") {
  const auto model = small_model();
  const auto j = nlohmann::json::parse(io::model_config_json(model));
  CHECK(j.dump().find("\"embed_dim\":8") != std::string::npos);
  CHECK(j.dump().find("\xc3\xa9lan") != std::string::npos);
}

TEST_CASE("property: round trip is lossless for random parameter values") {
  auto model = small_model();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SplitMix64 rng(seed);
    for (Matrix* m : model.params.tensors())
      for (double& v : m->values()) v = rng.normal() * std::pow(10.0, rng.uniform(-300, 300));
    for (double& v : model.P_tm.values()) v = rng.normal();
    model.epochs_run = static_cast<int>(rng.index(100));
    CHECK(io::decode_model(io::encode_model(model)) == model);
  }
}

TEST_CASE("napm: corruptions report their byte offset") {
  const auto model = small_model();
  const auto good = io::encode_model(model);

  auto magic = good;
  magic[1] = 'X';
  CHECK(format_offset(magic) == 0);

  auto version = good;
  version[4] = 2;
  CHECK(format_offset(version) == 4);

  CHECK(format_offset({}) == 0);
  CHECK(format_offset({'N', 'A', 'P', 'M', 1}) == 4);  // short header is reported where it starts

  // First tensor: 4-byte name length, name, rows, cols, then its payload.
  const std::size_t first = 9;
  const std::size_t name_len = good[first];
  const std::size_t payload_at = first + 4 + name_len + 8;
  std::vector<std::uint8_t> cut(good.begin(), good.begin() + payload_at + 3);
  CHECK(format_offset(cut) == payload_at);

  auto trailing = good;
  trailing.push_back(0);
  CHECK(format_offset(trailing) == good.size());

  const std::size_t blob_at = blob_offset(model, good);
  auto blob = good;
  blob[blob_at + 4] = '!';
  CHECK(format_offset(blob) == blob_at);

  auto bad_names = model;
  bad_names.class_names.pop_back();
  CHECK(format_offset(io::encode_model(bad_names)) == blob_offset(bad_names, io::encode_model(bad_names)));
}
