#include "node_adapter/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "node_adapter/errors.hpp"

namespace node_adapter::io {

namespace {

using json = nlohmann::ordered_json;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  void skip(std::size_t n) { pos_ += n; }
  void need(std::uint64_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(pos_, std::string("truncated ") + what + ": expected " + std::to_string(n) + " bytes, got " +
                                  std::to_string(remaining()));
    }
  }
  std::uint8_t u8() {
    need(1, "u8");
    return bytes_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  double f64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return std::bit_cast<double>(v);
  }
  std::string str(const char* what) {
    const std::uint32_t len = u32(what);
    need(len, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

json config_to_json(const train::TrainedModel& m) {
  const auto& c = m.config;
  json j;
  j["field"] = {{"dim", m.field.dim},
                {"embed_dim", m.field.embed_dim},
                {"heads", m.field.heads},
                {"head_dim", m.field.head_dim},
                {"decay_rate", m.field.decay_rate},
                {"horizon", m.field.horizon}};
  j["train"] = {{"epochs", c.epochs},
                {"lr0", c.lr0},
                {"lr_min", c.lr_min},
                {"temperature", c.temperature},
                {"weight_decay", c.weight_decay},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"eps", c.eps},
                {"decay_rate", c.decay_rate},
                {"horizon", c.horizon},
                {"embed_dim", c.embed_dim},
                {"seed", c.seed},
                {"solver",
                 {{"method", ode::to_string(c.solver.method)},
                  {"steps", c.solver.steps},
                  {"t0", c.solver.t0},
                  {"tm", c.solver.tm}}}};
  j["epochs_run"] = m.epochs_run;
  j["class_names"] = m.class_names;
  return j;
}

void config_from_json(const json& j, train::TrainedModel& m) {
  const auto& f = j.at("field");
  m.field.dim = f.at("dim").get<std::size_t>();
  m.field.embed_dim = f.at("embed_dim").get<std::size_t>();
  m.field.heads = f.at("heads").get<std::size_t>();
  m.field.head_dim = f.at("head_dim").get<std::size_t>();
  m.field.decay_rate = f.at("decay_rate").get<double>();
  m.field.horizon = f.at("horizon").get<double>();
  const auto& t = j.at("train");
  auto& c = m.config;
  c.epochs = t.at("epochs").get<int>();
  c.lr0 = t.at("lr0").get<double>();
  c.lr_min = t.at("lr_min").get<double>();
  c.temperature = t.at("temperature").get<double>();
  c.weight_decay = t.at("weight_decay").get<double>();
  c.beta1 = t.at("beta1").get<double>();
  c.beta2 = t.at("beta2").get<double>();
  c.eps = t.at("eps").get<double>();
  c.decay_rate = t.at("decay_rate").get<double>();
  c.horizon = t.at("horizon").get<double>();
  c.embed_dim = t.at("embed_dim").get<std::size_t>();
  c.seed = t.at("seed").get<std::uint64_t>();
  const auto& s = t.at("solver");
  c.solver.method = ode::parse_method(s.at("method").get<std::string>());
  c.solver.steps = s.at("steps").get<int>();
  c.solver.t0 = s.at("t0").get<double>();
  c.solver.tm = s.at("tm").get<double>();
  m.epochs_run = j.at("epochs_run").get<int>();
  m.class_names = j.at("class_names").get<std::vector<std::string>>();
}

std::vector<std::pair<std::string, const Matrix*>> named_tensors(const train::TrainedModel& m) {
  std::vector<std::pair<std::string, const Matrix*>> out;
  const auto ts = m.params.tensors();
  for (std::size_t k = 0; k < field::kParameterTensors; ++k) out.emplace_back(field::kParameterNames[k], ts[k]);
  out.emplace_back("u", &m.u);
  out.emplace_back("P_tm", &m.P_tm);
  out.emplace_back("P_t", &m.P_t);
  out.emplace_back("P_v", &m.P_v);
  return out;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::string model_config_json(const train::TrainedModel& model) { return config_to_json(model).dump(); }

std::vector<std::uint8_t> encode_model(const train::TrainedModel& model) {
  std::vector<std::uint8_t> out = {'N', 'A', 'P', 'M', 1};
  const auto tensors = named_tensors(model);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    put_string(out, name);
    put_u32(out, static_cast<std::uint32_t>(m->rows()));
    put_u32(out, static_cast<std::uint32_t>(m->cols()));
    for (double v : m->values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  put_string(out, model_config_json(model));
  return out;
}

train::TrainedModel decode_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "NAPM", 4) != 0) throw FormatError(0, "bad magic, expected NAPM");
  Reader in(bytes);
  in.skip(4);
  auto at = [&] { return in.offset(); };
  auto fail = [](std::size_t offset, const std::string& what) { throw FormatError(offset, what); };

  if (in.remaining() < 5) fail(4, "truncated header: expected 5 bytes, got " + std::to_string(in.remaining()));
  if (const auto version = in.u8(); version != 1) fail(4, "unsupported version " + std::to_string(version));
  const std::uint32_t count = in.u32("tensor count");

  std::map<std::string, Matrix> tensors;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t name_at = at();
    std::string name = in.str("tensor name");
    const std::uint32_t rows = in.u32("tensor rows");
    const std::uint32_t cols = in.u32("tensor cols");
    const std::uint64_t payload = static_cast<std::uint64_t>(rows) * cols * 8;
    if (in.remaining() < payload) {
      fail(at(), "truncated tensor '" + name + "': expected " + std::to_string(payload) + " bytes, got " +
                     std::to_string(in.remaining()));
    }
    Matrix m(rows, cols);
    for (double& v : m.values()) v = in.f64();
    if (!tensors.emplace(std::move(name), std::move(m)).second) fail(name_at, "duplicate tensor name");
  }

  const std::size_t blob_at = at();
  train::TrainedModel model;
  try {
    config_from_json(json::parse(in.str("config blob")), model);
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    fail(blob_at, std::string("invalid config blob: ") + e.what());
  }
  if (in.remaining() != 0) fail(at(), std::to_string(in.remaining()) + " trailing bytes after config blob");

  try {
    model.field.validate();
    model.config.validate();
  } catch (const UsageError& e) {
    fail(blob_at, std::string("invalid configuration: ") + e.what());
  }

  auto take = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    auto it = tensors.find(name);
    if (it == tensors.end()) fail(blob_at, "missing tensor '" + name + "'");
    if (it->second.rows() != rows || it->second.cols() != cols) {
      fail(blob_at, "tensor '" + name + "' is " + it->second.shape_string() + ", expected " + std::to_string(rows) +
                        " x " + std::to_string(cols));
    }
    Matrix m = std::move(it->second);
    tensors.erase(it);
    return m;
  };

  const auto expected = field::FieldParameters::zeros(model.field);
  auto params = model.params.tensors();
  const auto shapes = expected.tensors();
  for (std::size_t k = 0; k < field::kParameterTensors; ++k) {
    *params[k] = take(field::kParameterNames[k], shapes[k]->rows(), shapes[k]->cols());
  }
  const std::size_t D = model.field.dim;
  model.u = take("u", D, 1);
  const auto it = tensors.find("P_tm");
  const std::size_t N = it == tensors.end() ? 0 : it->second.rows();
  model.P_tm = take("P_tm", N, D);
  model.P_t = take("P_t", N, D);
  model.P_v = take("P_v", N, D);
  if (!tensors.empty()) fail(blob_at, "unknown tensor '" + tensors.begin()->first + "'");
  if (!model.class_names.empty() && model.class_names.size() != N) {
    fail(blob_at, "class name count does not match prototype rows");
  }
  return model;
}

void write_model(const train::TrainedModel& model, const std::filesystem::path& path) {
  const auto bytes = encode_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

train::TrainedModel read_model(const std::filesystem::path& path) { return decode_model(slurp(path)); }

}  // namespace node_adapter::io
