#include "sfr/feature_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sfr/errors.hpp"

namespace sfr {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

namespace {

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big)
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  return v;
}

float decode_f32(const unsigned char* p) {
  std::uint32_t bits;
  std::memcpy(&bits, p, 4);
  return std::bit_cast<float>(to_le(bits));
}

void encode_f32(float v, unsigned char* p) {
  std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(v));
  std::memcpy(p, &bits, 4);
}

template <typename T>
T require(const json& doc, const char* key, const std::string& where) {
  if (!doc.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(where + ": field '" + key + "' has wrong type (" + e.what() + ")");
  }
}

}  // namespace

FeatureSet::FeatureSet(RowMatrix<float> v, std::vector<Label> l)
    : dim(v.cols()), values(std::move(v)), labels(std::move(l)) {
  if (static_cast<std::size_t>(values.rows()) != labels.size())
    throw DimensionMismatch("FeatureSet: " + std::to_string(values.rows()) + " rows but " +
                            std::to_string(labels.size()) + " labels");
}

std::vector<Label> FeatureSet::label_set() const {
  std::set<Label> s(labels.begin(), labels.end());
  return {s.begin(), s.end()};
}

RowMatrix<float> FeatureSet::rows_of(Label label) const {
  const auto n = std::count(labels.begin(), labels.end(), label);
  RowMatrix<float> out(n, dim);
  Index k = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) out.row(k++) = values.row(static_cast<Index>(i));
  return out;
}

void FeatureSet::append(const FeatureSet& other) {
  if (other.empty()) return;
  if (empty() && dim == 0) dim = other.dim;
  if (other.dim != dim)
    throw DimensionMismatch("FeatureSet::append: dim " + std::to_string(other.dim) + " vs " +
                            std::to_string(dim));
  const Index n = values.rows();
  values.conservativeResize(n + other.values.rows(), dim);
  values.bottomRows(other.values.rows()) = other.values;
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

void FeatureSet::append(Label label, const Eigen::Ref<const RowMatrix<float>>& rows) {
  if (rows.rows() == 0) return;
  if (empty() && dim == 0) dim = rows.cols();
  if (rows.cols() != dim)
    throw DimensionMismatch("FeatureSet::append: dim " + std::to_string(rows.cols()) + " vs " +
                            std::to_string(dim));
  const Index n = values.rows();
  values.conservativeResize(n + rows.rows(), dim);
  values.bottomRows(rows.rows()) = rows;
  labels.insert(labels.end(), static_cast<std::size_t>(rows.rows()), label);
}

bool operator==(const FeatureSet& a, const FeatureSet& b) {
  if (a.dim != b.dim || a.labels != b.labels) return false;
  if (a.values.size() != b.values.size()) return false;
  // Bitwise so that -0.0 and 0.0 are told apart.
  return a.values.size() == 0 ||
         std::memcmp(a.values.data(), b.values.data(), sizeof(float) * a.values.size()) == 0;
}

std::vector<Label> DatasetManifest::session_labels(std::size_t session) const {
  std::vector<Label> out;
  for (const auto& c : sessions.at(session).classes) out.push_back(c.label);
  return out;
}

std::vector<Label> DatasetManifest::all_labels() const {
  std::vector<Label> out;
  for (const auto& s : sessions)
    for (const auto& c : s.classes) out.push_back(c.label);
  return out;
}

const ClassEntry& DatasetManifest::entry(Label label) const {
  for (const auto& s : sessions)
    for (const auto& c : s.classes)
      if (c.label == label) return c;
  throw UnknownLabel("manifest has no class " + std::to_string(label));
}

void validate_manifest(DatasetManifest& m) {
  if (m.version != kManifestVersion)
    throw ValidationError("manifest: unsupported version " + std::to_string(m.version));
  if (m.dim <= 0) throw ValidationError("manifest: dim must be positive");
  if (m.dtype != kManifestDtype) throw ValidationError("manifest: dtype must be \"f32le\", got \"" + m.dtype + "\"");
  if (m.sessions.empty()) throw ValidationError("manifest: no sessions");

  std::vector<SessionEntry*> by_id(m.sessions.size(), nullptr);
  for (auto& s : m.sessions) {
    if (s.session_id < 0 || static_cast<std::size_t>(s.session_id) >= m.sessions.size() || by_id[s.session_id])
      throw ValidationError("manifest: session ids must be 0..N-1 without repeats (bad id " +
                            std::to_string(s.session_id) + ")");
    by_id[s.session_id] = &s;
  }
  std::vector<SessionEntry> ordered;
  for (auto* s : by_id) ordered.push_back(std::move(*s));
  m.sessions = std::move(ordered);

  std::map<Label, int> owner;
  for (const auto& s : m.sessions) {
    if (s.classes.empty())
      throw ValidationError("manifest: session " + std::to_string(s.session_id) + " has no classes");
    for (const auto& c : s.classes) {
      if (c.label < 0) throw ValidationError("manifest: negative label " + std::to_string(c.label));
      auto [it, inserted] = owner.emplace(c.label, s.session_id);
      if (!inserted)
        throw ValidationError("manifest: label " + std::to_string(c.label) + " appears in sessions " +
                              std::to_string(it->second) + " and " + std::to_string(s.session_id));
      if (c.train_count == 0)
        throw ValidationError("manifest: class " + std::to_string(c.label) + " has train_count 0");
      if (c.test_count == 0)
        m.warnings.push_back("class " + std::to_string(c.label) + " has no test rows");

      auto check_file = [&](const std::string& rel, std::size_t count, const char* what) {
        const fs::path p = m.root / rel;
        std::error_code ec;
        const auto size = fs::file_size(p, ec);
        if (ec) throw ValidationError("manifest: " + std::string(what) + " file missing: " + p.string());
        const auto expected = static_cast<std::uintmax_t>(count) * static_cast<std::uintmax_t>(m.dim) * 4u;
        if (size != expected)
          throw ValidationError("manifest: " + p.string() + " has " + std::to_string(size) +
                                " bytes, expected " + std::to_string(expected));
      };
      check_file(c.train_file, c.train_count, "train");
      check_file(c.test_file, c.test_count, "test");
    }
  }
}

DatasetManifest load_manifest(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "manifest.json" : path;
  std::ifstream in(file);
  if (!in) throw ValidationError("manifest: cannot open " + file.string());

  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("manifest " + file.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw ParseError("manifest " + file.string() + ": top level must be an object");

  const std::string where = "manifest " + file.string();
  DatasetManifest m;
  m.root = file.parent_path();
  m.version = require<int>(doc, "version", where);
  m.dim = require<Index>(doc, "dim", where);
  m.dtype = require<std::string>(doc, "dtype", where);
  if (doc.contains("label_names")) {
    const auto& names = doc.at("label_names");
    if (!names.is_object()) throw ParseError(where + ": label_names must be an object");
    for (const auto& [key, value] : names.items()) {
      try {
        m.label_names[std::stoi(key)] = value.get<std::string>();
      } catch (const std::exception&) {
        throw ParseError(where + ": bad label_names entry '" + key + "'");
      }
    }
  }
  const auto sessions = require<json>(doc, "sessions", where);
  if (!sessions.is_array()) throw ParseError(where + ": sessions must be an array");
  for (const auto& s : sessions) {
    SessionEntry entry;
    entry.session_id = require<int>(s, "session_id", where);
    const auto classes = require<json>(s, "classes", where);
    if (!classes.is_array()) throw ParseError(where + ": classes must be an array");
    for (const auto& c : classes) {
      ClassEntry ce;
      ce.label = require<Label>(c, "label", where);
      ce.train_file = require<std::string>(c, "train_file", where);
      ce.test_file = require<std::string>(c, "test_file", where);
      ce.train_count = require<std::size_t>(c, "train_count", where);
      ce.test_count = require<std::size_t>(c, "test_count", where);
      entry.classes.push_back(std::move(ce));
    }
    m.sessions.push_back(std::move(entry));
  }
  validate_manifest(m);
  return m;
}

void write_manifest(const DatasetManifest& m, const fs::path& dir) {
  json doc;
  doc["version"] = m.version;
  doc["dim"] = m.dim;
  doc["dtype"] = m.dtype;
  json sessions = json::array();
  for (const auto& s : m.sessions) {
    json classes = json::array();
    for (const auto& c : s.classes)
      classes.push_back({{"label", c.label},
                         {"train_file", c.train_file},
                         {"test_file", c.test_file},
                         {"train_count", c.train_count},
                         {"test_count", c.test_count}});
    sessions.push_back({{"session_id", s.session_id}, {"classes", std::move(classes)}});
  }
  doc["sessions"] = std::move(sessions);
  if (!m.label_names.empty()) {
    json names = json::object();
    for (const auto& [label, name] : m.label_names) names[std::to_string(label)] = name;
    doc["label_names"] = std::move(names);
  }
  fs::create_directories(dir);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << doc.dump(2) << '\n';
}

RowMatrix<float> read_feature_file(const fs::path& path, Index dim, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file " + path.string());
  const std::size_t row_bytes = static_cast<std::size_t>(dim) * 4u;
  std::vector<unsigned char> buf(row_bytes);
  RowMatrix<float> out(static_cast<Index>(count), dim);
  for (std::size_t r = 0; r < count; ++r) {
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(row_bytes)))
      throw IoError(path.string() + ": truncated at row " + std::to_string(r));
    for (Index j = 0; j < dim; ++j) {
      const float v = decode_f32(buf.data() + 4 * j);
      if (!std::isfinite(v)) throw NonFiniteError(path.string(), r);
      out(static_cast<Index>(r), j) = v;
    }
  }
  return out;
}

void write_feature_file(const Eigen::Ref<const RowMatrix<float>>& rows, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write feature file " + path.string());
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows.cols()) * 4u);
  for (Index i = 0; i < rows.rows(); ++i) {
    for (Index j = 0; j < rows.cols(); ++j) encode_f32(rows(i, j), buf.data() + 4 * j);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

FeatureSet read_csv_features(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);
  if (header.size() < 2 || header[0] != "label")
    throw ParseError(path.string() + ": header must be label,f0,...");
  for (std::size_t j = 1; j < header.size(); ++j)
    if (header[j] != "f" + std::to_string(j - 1))
      throw ParseError(path.string() + ": header column " + std::to_string(j) + " must be f" +
                       std::to_string(j - 1));
  const Index dim = static_cast<Index>(header.size() - 1);

  std::vector<Label> labels;
  std::vector<float> flat;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size())
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(header.size()) + " columns, got " + std::to_string(cells.size()));
    try {
      std::size_t used = 0;
      const long label = std::stol(cells[0], &used);
      if (used != cells[0].size() || label < 0) throw std::invalid_argument("label");
      labels.push_back(static_cast<Label>(label));
      for (std::size_t j = 1; j < cells.size(); ++j) {
        const float v = std::stof(cells[j], &used);
        if (used != cells[j].size()) throw std::invalid_argument("value");
        if (!std::isfinite(v)) throw NonFiniteError(path.string(), labels.size() - 1);
        flat.push_back(v);
      }
    } catch (const NonFiniteError&) {
      throw;
    } catch (const std::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  RowMatrix<float> values = Eigen::Map<RowMatrix<float>>(flat.data(), static_cast<Index>(labels.size()), dim);
  return FeatureSet(std::move(values), std::move(labels));
}

void write_csv_features(const FeatureSet& set, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "label";
  for (Index j = 0; j < set.dim; ++j) out << ",f" << j;
  out << '\n';
  out.precision(9);
  for (std::size_t i = 0; i < set.size(); ++i) {
    out << set.labels[i];
    for (Index j = 0; j < set.dim; ++j) out << ',' << set.values(static_cast<Index>(i), j);
    out << '\n';
  }
}

std::shared_ptr<const RowMatrix<float>> ManifestSource::train(Label label) const {
  const auto& e = manifest_.entry(label);
  return std::make_shared<const RowMatrix<float>>(
      read_feature_file(manifest_.root / e.train_file, manifest_.dim, e.train_count));
}

std::shared_ptr<const RowMatrix<float>> ManifestSource::test(Label label) const {
  const auto& e = manifest_.entry(label);
  return std::make_shared<const RowMatrix<float>>(
      read_feature_file(manifest_.root / e.test_file, manifest_.dim, e.test_count));
}

MemorySource::MemorySource(const FeatureSet& train, const FeatureSet& test) : dim_(train.dim) {
  if (!test.empty() && test.dim != train.dim) throw DimensionMismatch("MemorySource: train/test dims differ");
  for (Label l : train.label_set()) train_[l] = train.rows_of(l);
  for (Label l : test.label_set()) test_[l] = test.rows_of(l);
}

std::shared_ptr<const RowMatrix<float>> MemorySource::train(Label label) const {
  auto it = train_.find(label);
  if (it == train_.end()) throw UnknownLabel("no training rows for class " + std::to_string(label));
  return std::make_shared<const RowMatrix<float>>(it->second);
}

std::shared_ptr<const RowMatrix<float>> MemorySource::test(Label label) const {
  auto it = test_.find(label);
  if (it == test_.end()) return std::make_shared<const RowMatrix<float>>(0, dim_);
  return std::make_shared<const RowMatrix<float>>(it->second);
}

}  // namespace sfr
