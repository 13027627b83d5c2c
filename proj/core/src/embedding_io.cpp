#include "node_adapter/embedding_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "node_adapter/errors.hpp"

namespace node_adapter::io {

namespace {

constexpr std::size_t kHeaderBytes = 20;
// Rows whose norm is off by at most this much are kept bit-exact; float32
// quantisation of a unit row stays well inside it.
constexpr double kKeepTolerance = 1e-6;
constexpr double kRenormTolerance = 1e-3;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(pos_, std::string("truncated ") + what + ": expected " + std::to_string(n) +
                                  " bytes, got " + std::to_string(remaining()));
    }
  }
  std::uint8_t u8() { return bytes_[pos_++]; }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

}  // namespace

const char* to_string(Modality m) noexcept { return m == Modality::Visual ? "visual" : "textual"; }

std::vector<std::size_t> EmbeddingSet::rows_of_class(std::uint32_t c) const {
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < labels.size(); ++r)
    if (labels[r] == c) rows.push_back(r);
  return rows;
}

void EmbeddingSet::validate() const {
  if (labels.size() != features.rows()) {
    throw ShapeError("EmbeddingSet: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(features.rows()) + " rows");
  }
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= num_classes) {
      throw MappingError("EmbeddingSet: row " + std::to_string(r) + " has label " + std::to_string(labels[r]) +
                         " >= class count " + std::to_string(num_classes));
    }
  }
  if (!class_names.empty() && class_names.size() != num_classes) {
    throw ShapeError("EmbeddingSet: " + std::to_string(class_names.size()) + " class names for " +
                     std::to_string(num_classes) + " classes");
  }
}

Matrix quantize_f32(const Matrix& m) {
  Matrix out = m;
  for (double& v : out.values()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

std::vector<std::uint8_t> encode_naeb(const EmbeddingSet& set) {
  set.validate();
  std::vector<std::uint8_t> out = {'N', 'A', 'E', 'B', 1, 1, static_cast<std::uint8_t>(set.modality), 0};
  out.reserve(kHeaderBytes + set.size() * (4 + 4 * set.dim()) + 4);
  put_u32(out, static_cast<std::uint32_t>(set.size()));
  put_u32(out, static_cast<std::uint32_t>(set.dim()));
  put_u32(out, set.num_classes);
  for (std::uint32_t l : set.labels) put_u32(out, l);
  for (double v : set.features.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  put_u32(out, static_cast<std::uint32_t>(set.class_names.size()));
  for (const auto& name : set.class_names) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
  }
  return out;
}

EmbeddingSet decode_naeb(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "NAEB", 4) != 0) throw FormatError(0, "bad magic, expected NAEB");
  in.need(kHeaderBytes, "header");
  in.str(4);
  if (const auto version = in.u8(); version != 1) {
    throw FormatError(4, "unsupported version " + std::to_string(version));
  }
  if (const auto dtype = in.u8(); dtype != 1) throw FormatError(5, "unsupported dtype " + std::to_string(dtype));
  const auto modality = in.u8();
  if (modality > 1) throw FormatError(6, "unknown modality " + std::to_string(modality));
  if (in.u8() != 0) throw FormatError(7, "reserved byte must be 0");

  EmbeddingSet set;
  set.modality = static_cast<Modality>(modality);
  const std::uint32_t n = in.u32();
  const std::uint32_t d = in.u32();
  set.num_classes = in.u32();

  const std::uint64_t payload = static_cast<std::uint64_t>(n) * 4 + static_cast<std::uint64_t>(n) * d * 4;
  if (in.remaining() < payload) {
    throw FormatError(in.offset(), "truncated payload: expected " + std::to_string(payload) + " bytes, got " +
                                       std::to_string(in.remaining()));
  }
  set.labels.resize(n);
  for (std::uint32_t r = 0; r < n; ++r) {
    const std::size_t at = in.offset();
    set.labels[r] = in.u32();
    if (set.labels[r] >= set.num_classes) {
      throw FormatError(at, "label " + std::to_string(set.labels[r]) + " >= class count " +
                                std::to_string(set.num_classes));
    }
  }
  set.features = Matrix(n, d);
  const std::size_t feature_base = in.offset();
  for (double& v : set.features.values()) v = static_cast<double>(in.f32());

  const auto norms = tensor::row_norms(set.features);
  for (std::uint32_t r = 0; r < n; ++r) {
    const double dev = std::abs(norms[r] - 1.0);
    if (!(dev <= kRenormTolerance)) {
      throw FormatError(feature_base + static_cast<std::size_t>(r) * d * 4,
                        "row " + std::to_string(r) + " has norm " + std::to_string(norms[r]) + ", expected unit norm");
    }
    if (dev > kKeepTolerance) {
      for (double& v : set.features.row(r)) v /= norms[r];
    }
  }

  in.need(4, "class-name count");
  const std::size_t count_at = in.offset();
  const std::uint32_t name_count = in.u32();
  if (name_count != 0 && name_count != set.num_classes) {
    throw FormatError(count_at, "name count " + std::to_string(name_count) + " must be 0 or " +
                                    std::to_string(set.num_classes));
  }
  set.class_names.reserve(name_count);
  for (std::uint32_t i = 0; i < name_count; ++i) {
    in.need(4, "class-name length");
    const std::uint32_t len = in.u32();
    in.need(len, "class name");
    set.class_names.push_back(in.str(len));
  }
  if (in.remaining() != 0) {
    throw FormatError(in.offset(), std::to_string(in.remaining()) + " trailing bytes after class-name table");
  }
  return set;
}

void write_naeb(const EmbeddingSet& set, const std::filesystem::path& path) {
  const auto bytes = encode_naeb(set);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

EmbeddingSet read_naeb(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  return decode_naeb(bytes);
}

EmbeddingSet read_csv_embeddings(const std::filesystem::path& path, Modality modality) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(0, "empty CSV file");

  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 2 || header[0] != "label") throw FormatError(0, "CSV header must start with label,f0");
  const std::size_t d = header.size() - 1;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j + 1] != "f" + std::to_string(j)) throw FormatError(0, "unexpected CSV column " + header[j + 1]);
  }

  std::vector<double> values;
  EmbeddingSet set;
  set.modality = modality;
  std::size_t offset = line.size() + 1;
  while (std::getline(in, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != d + 1) {
      throw FormatError(offset, "expected " + std::to_string(d + 1) + " columns, got " + std::to_string(cells.size()));
    }
    try {
      const long label = std::stol(cells[0]);
      if (label < 0) throw FormatError(offset, "negative label");
      set.labels.push_back(static_cast<std::uint32_t>(label));
      for (std::size_t j = 0; j < d; ++j) values.push_back(std::stod(cells[j + 1]));
    } catch (const std::logic_error&) {
      throw FormatError(offset, "unparsable number");
    }
    offset += line.size() + 1;
  }
  for (std::uint32_t l : set.labels) set.num_classes = std::max(set.num_classes, l + 1);
  set.features = tensor::l2_normalize_rows(Matrix(set.labels.size(), d, values));
  return set;
}

}  // namespace node_adapter::io
