#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sfr/types.hpp"

namespace sfr {

/// Labeled collection of feature vectors, one sample per row. Row order is
/// the order the samples were read in.
struct FeatureSet {
  Index dim = 0;
  RowMatrix<float> values;
  std::vector<Label> labels;

  FeatureSet() = default;
  explicit FeatureSet(Index d) : dim(d), values(0, d) {}
  FeatureSet(RowMatrix<float> v, std::vector<Label> l);

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }

  /// Sorted distinct labels.
  std::vector<Label> label_set() const;
  RowMatrix<float> rows_of(Label label) const;
  void append(const FeatureSet& other);
  void append(Label label, const Eigen::Ref<const RowMatrix<float>>& rows);

  friend bool operator==(const FeatureSet& a, const FeatureSet& b);
};

struct ClassEntry {
  Label label = 0;
  std::string train_file;
  std::string test_file;
  std::size_t train_count = 0;
  std::size_t test_count = 0;
};

struct SessionEntry {
  int session_id = 0;
  std::vector<ClassEntry> classes;
};

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kManifestDtype = "f32le";

struct DatasetManifest {
  int version = kManifestVersion;
  Index dim = 0;
  std::string dtype = kManifestDtype;
  std::vector<SessionEntry> sessions;
  /// Optional human-readable names; ignored by the engine.
  std::map<Label, std::string> label_names;
  /// Directory the per-class file paths are relative to.
  std::filesystem::path root;
  /// Non-fatal findings from validation (e.g. empty test files).
  std::vector<std::string> warnings;

  std::vector<Label> session_labels(std::size_t session) const;
  std::vector<Label> all_labels() const;
  const ClassEntry& entry(Label label) const;
};

/// Loads and validates a manifest. `path` may name the manifest document or
/// the dataset directory containing `manifest.json`.
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Checks every manifest invariant (contiguous session ids, exclusive label
/// spaces, file presence and byte lengths). Throws ValidationError.
void validate_manifest(DatasetManifest& manifest);

/// Writes `manifest.json` into `dir`. Does not touch the feature files.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& dir);

/// Reads `count` rows of `dim` f32le values. Rejects NaN/Inf with the row index.
RowMatrix<float> read_feature_file(const std::filesystem::path& path, Index dim, std::size_t count);

void write_feature_file(const Eigen::Ref<const RowMatrix<float>>& rows, const std::filesystem::path& path);

/// CSV with header `label,f0,...,f{d-1}`; dim is inferred from the header.
FeatureSet read_csv_features(const std::filesystem::path& path);
void write_csv_features(const FeatureSet& set, const std::filesystem::path& path);

/// Per-class access to training and test rows. Rows are handed out as shared
/// pointers so callers (and test instrumentation) can reason about lifetime.
class FeatureSource {
 public:
  virtual ~FeatureSource() = default;
  virtual Index dim() const = 0;
  virtual std::shared_ptr<const RowMatrix<float>> train(Label label) const = 0;
  virtual std::shared_ptr<const RowMatrix<float>> test(Label label) const = 0;
};

/// Reads class files named by a manifest on demand.
class ManifestSource final : public FeatureSource {
 public:
  explicit ManifestSource(DatasetManifest manifest) : manifest_(std::move(manifest)) {}
  Index dim() const override { return manifest_.dim; }
  std::shared_ptr<const RowMatrix<float>> train(Label label) const override;
  std::shared_ptr<const RowMatrix<float>> test(Label label) const override;
  const DatasetManifest& manifest() const noexcept { return manifest_; }

 private:
  DatasetManifest manifest_;
};

/// In-memory source built from labeled train/test sets.
class MemorySource final : public FeatureSource {
 public:
  MemorySource(const FeatureSet& train, const FeatureSet& test);
  Index dim() const override { return dim_; }
  std::shared_ptr<const RowMatrix<float>> train(Label label) const override;
  std::shared_ptr<const RowMatrix<float>> test(Label label) const override;

 private:
  Index dim_;
  std::map<Label, RowMatrix<float>> train_;
  std::map<Label, RowMatrix<float>> test_;
};

}  // namespace sfr
