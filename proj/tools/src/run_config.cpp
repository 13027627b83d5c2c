#include "node_adapter_cli/run_config.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "node_adapter/errors.hpp"
#include "node_adapter/ode.hpp"

namespace node_adapter::cli {

namespace {

[[noreturn]] void bad(std::string_view key, const std::string& what) {
  throw UsageError(std::string(key) + ": " + what);
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::uint64_t parse_uint(std::string_view key, std::string_view v, std::uint64_t min, std::uint64_t max) {
  std::uint64_t x = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc{} || end != v.data() + v.size()) bad(key, "expected an integer, got '" + std::string(v) + "'");
  if (x < min || x > max) {
    bad(key, "must be in [" + std::to_string(min) + ", " + std::to_string(max) + "], got " + std::string(v));
  }
  return x;
}

double parse_real(std::string_view key, std::string_view v) {
  double x = 0.0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc{} || end != v.data() + v.size() || !std::isfinite(x)) {
    bad(key, "expected a finite number, got '" + std::string(v) + "'");
  }
  return x;
}

double non_negative(std::string_view key, std::string_view v) {
  const double x = parse_real(key, v);
  if (x < 0.0) bad(key, "must be >= 0, got " + std::string(v));
  return x;
}

double positive(std::string_view key, std::string_view v) {
  const double x = parse_real(key, v);
  if (!(x > 0.0)) bad(key, "must be > 0, got " + std::string(v));
  return x;
}

std::string show(double x) {
  std::ostringstream s;
  s << x;
  return s.str();
}

constexpr std::uint64_t kU32 = std::numeric_limits<std::uint32_t>::max();
constexpr std::uint64_t kInt = std::numeric_limits<int>::max();

const std::array kKeys = {
    ConfigKey{"classes", "synthetic classes C",
              [](RunConfig& c, std::string_view v) { c.synth.classes = parse_uint("classes", v, 2, kU32); },
              [](const RunConfig& c) { return std::to_string(c.synth.classes); }},
    ConfigKey{"dim", "feature width D",
              [](RunConfig& c, std::string_view v) { c.synth.dim = parse_uint("dim", v, 2, kU32); },
              [](const RunConfig& c) { return std::to_string(c.synth.dim); }},
    ConfigKey{"shots", "support rows per class K",
              [](RunConfig& c, std::string_view v) { c.synth.shots = parse_uint("shots", v, 1, kU32); },
              [](const RunConfig& c) { return std::to_string(c.synth.shots); }},
    ConfigKey{"queries", "query rows per class",
              [](RunConfig& c, std::string_view v) { c.synth.queries = parse_uint("queries", v, 0, kU32); },
              [](const RunConfig& c) { return std::to_string(c.synth.queries); }},
    ConfigKey{"prompts", "prompt rows per class M",
              [](RunConfig& c, std::string_view v) { c.synth.prompts = parse_uint("prompts", v, 1, kU32); },
              [](const RunConfig& c) { return std::to_string(c.synth.prompts); }},
    ConfigKey{"visual_noise", "per-coordinate std of visual rows",
              [](RunConfig& c, std::string_view v) { c.synth.visual_noise = non_negative("visual_noise", v); },
              [](const RunConfig& c) { return show(c.synth.visual_noise); }},
    ConfigKey{"textual_noise", "per-coordinate std of prompt rows",
              [](RunConfig& c, std::string_view v) { c.synth.textual_noise = non_negative("textual_noise", v); },
              [](const RunConfig& c) { return show(c.synth.textual_noise); }},
    ConfigKey{"bias", "length of the per-class support bias",
              [](RunConfig& c, std::string_view v) { c.synth.support_bias = non_negative("bias", v); },
              [](const RunConfig& c) { return show(c.synth.support_bias); }},
    ConfigKey{"seed", "seed for generation, initialisation and episode sampling",
              [](RunConfig& c, std::string_view v) {
                c.seed = parse_uint("seed", v, 0, std::numeric_limits<std::uint64_t>::max());
              },
              [](const RunConfig& c) { return std::to_string(c.seed); }},
    ConfigKey{"epochs", "training epochs",
              [](RunConfig& c, std::string_view v) { c.train.epochs = static_cast<int>(parse_uint("epochs", v, 0, kInt)); },
              [](const RunConfig& c) { return std::to_string(c.train.epochs); }},
    ConfigKey{"lr", "initial learning rate",
              [](RunConfig& c, std::string_view v) { c.train.lr0 = non_negative("lr", v); },
              [](const RunConfig& c) { return show(c.train.lr0); }},
    ConfigKey{"lr_min", "final learning rate of the cosine schedule",
              [](RunConfig& c, std::string_view v) { c.train.lr_min = non_negative("lr_min", v); },
              [](const RunConfig& c) { return show(c.train.lr_min); }},
    ConfigKey{"temperature", "softmax temperature tau",
              [](RunConfig& c, std::string_view v) { c.train.temperature = positive("temperature", v); },
              [](const RunConfig& c) { return show(c.train.temperature); }},
    ConfigKey{"weight_decay", "AdamW decoupled weight decay",
              [](RunConfig& c, std::string_view v) { c.train.weight_decay = non_negative("weight_decay", v); },
              [](const RunConfig& c) { return show(c.train.weight_decay); }},
    ConfigKey{"beta1", "AdamW first-moment decay",
              [](RunConfig& c, std::string_view v) { c.train.beta1 = non_negative("beta1", v); },
              [](const RunConfig& c) { return show(c.train.beta1); }},
    ConfigKey{"beta2", "AdamW second-moment decay",
              [](RunConfig& c, std::string_view v) { c.train.beta2 = non_negative("beta2", v); },
              [](const RunConfig& c) { return show(c.train.beta2); }},
    ConfigKey{"eps", "AdamW epsilon",
              [](RunConfig& c, std::string_view v) { c.train.eps = positive("eps", v); },
              [](const RunConfig& c) { return show(c.train.eps); }},
    ConfigKey{"decay_rate", "field decay rate eta",
              [](RunConfig& c, std::string_view v) { c.train.decay_rate = non_negative("decay_rate", v); },
              [](const RunConfig& c) { return show(c.train.decay_rate); }},
    ConfigKey{"horizon", "integral time T",
              [](RunConfig& c, std::string_view v) { c.train.horizon = positive("horizon", v); },
              [](const RunConfig& c) { return show(c.train.horizon); }},
    ConfigKey{"embed_dim", "field embedding width d_e",
              [](RunConfig& c, std::string_view v) { c.train.embed_dim = parse_uint("embed_dim", v, 1, kU32); },
              [](const RunConfig& c) { return std::to_string(c.train.embed_dim); }},
    ConfigKey{"solver", "euler, ab2, abm2 or rk4",
              [](RunConfig& c, std::string_view v) {
                try {
                  ode::parse_method(v);
                } catch (const UsageError& e) {
                  bad("solver", e.what());
                }
                c.solver = std::string(v);
              },
              [](const RunConfig& c) { return c.solver; }},
    ConfigKey{"steps", "solver steps over [t0, tm]",
              [](RunConfig& c, std::string_view v) { c.steps = static_cast<int>(parse_uint("steps", v, 1, kInt)); },
              [](const RunConfig& c) { return std::to_string(c.steps); }},
    ConfigKey{"t0", "integration start time",
              [](RunConfig& c, std::string_view v) { c.t0 = parse_real("t0", v); },
              [](const RunConfig& c) { return show(c.t0); }},
    ConfigKey{"tm", "integration end time, or horizon (the default)",
              [](RunConfig& c, std::string_view v) {
                if (v == "horizon") {
                  c.tm.reset();
                } else {
                  c.tm = parse_real("tm", v);
                }
              },
              [](const RunConfig& c) { return c.tm ? show(*c.tm) : std::string("horizon"); }},
    ConfigKey{"way", "classes per episode",
              [](RunConfig& c, std::string_view v) { c.way = static_cast<std::uint32_t>(parse_uint("way", v, 1, kU32)); },
              [](const RunConfig& c) { return std::to_string(c.way); }},
    ConfigKey{"shot", "support rows per class per episode",
              [](RunConfig& c, std::string_view v) { c.shot = static_cast<std::uint32_t>(parse_uint("shot", v, 1, kU32)); },
              [](const RunConfig& c) { return std::to_string(c.shot); }},
    ConfigKey{"episodes", "number of episodes",
              [](RunConfig& c, std::string_view v) {
                c.episodes = static_cast<std::uint32_t>(parse_uint("episodes", v, 1, kU32));
              },
              [](const RunConfig& c) { return std::to_string(c.episodes); }},
    ConfigKey{"variant", "TP, VP, TP+VP or TP+VP+NODE",
              [](RunConfig& c, std::string_view v) {
                if (v != "TP" && v != "VP" && v != "TP+VP" && v != "TP+VP+NODE") {
                  bad("variant", "expected TP, VP, TP+VP or TP+VP+NODE, got '" + std::string(v) + "'");
                }
                c.variant = std::string(v);
              },
              [](const RunConfig& c) { return c.variant; }},
};

}  // namespace

RunConfig::RunConfig() {
  // Desk-scale default; 1024 is the full-size width.
  train.embed_dim = 64;
}

data::SyntheticSpec RunConfig::synth_spec() const {
  data::SyntheticSpec s = synth;
  s.seed = seed;
  s.validate();
  return s;
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig t = train;
  t.seed = seed;
  t.solver.method = ode::parse_method(solver);
  t.solver.steps = steps;
  t.solver.t0 = t0;
  t.solver.tm = tm.value_or(t.horizon);
  t.validate();
  return t;
}

std::span<const ConfigKey> config_keys() { return kKeys; }

const ConfigKey* find_key(std::string_view key) {
  for (const auto& k : kKeys)
    if (key == k.key) return &k;
  return nullptr;
}

std::vector<ConfigEntry> parse_config(std::string_view text) {
  std::vector<ConfigEntry> entries;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view raw = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(line_no);
    if (eq == std::string_view::npos) throw UsageError(where + ": expected 'key = value'");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    if (!find_key(key)) throw UsageError(where + ": unknown key '" + std::string(key) + "'");
    if (value.empty()) throw UsageError(where + ": missing value for '" + std::string(key) + "'");
    entries.push_back({std::string(key), std::string(value), line_no});
  }
  return entries;
}

std::vector<ConfigEntry> read_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

void apply_config(RunConfig& cfg, std::span<const ConfigEntry> entries) {
  for (const auto& e : entries) {
    const ConfigKey* k = find_key(e.key);
    if (!k) throw UsageError("unknown config key '" + e.key + "'");
    try {
      k->set(cfg, e.value);
    } catch (const UsageError& err) {
      throw UsageError("config line " + std::to_string(e.line) + ": " + err.what());
    }
  }
}

}  // namespace node_adapter::cli
