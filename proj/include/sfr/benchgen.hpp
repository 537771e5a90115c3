#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sfr/feature_store.hpp"

namespace sfr {

/// Seeded Gaussian-mixture benchmark in the feature-store format.
struct BenchSpec {
  Index dim = 64;
  int n_classes = 20;
  int train_per_class = 100;
  int test_per_class = 50;
  /// Minimum pairwise distance between class means in units of the
  /// within-class standard deviation (mean variance per direction is 1).
  /// Zero puts every mean at the origin.
  double separation = 8.0;
  /// Forces every class covariance to this rank (< dim).
  std::optional<Index> rank;
  int base_classes = 8;
  int increment_size = 2;
  int n_increments = 6;
  std::uint64_t seed = 0;
  /// Degrees of freedom of a Student-t scale mixture; 0 keeps classes Gaussian.
  double tail_dof = 0.0;
  /// Upper bound on the condition number of each class covariance.
  double max_condition = 10.0;

  int used_classes() const noexcept { return base_classes + increment_size * n_increments; }
  void validate() const;
};

/// Parses a spec document; unknown keys are rejected.
BenchSpec bench_spec_from_json(const std::string& text);
BenchSpec load_bench_spec(const std::filesystem::path& path);

/// Writes manifest.json plus train/ and test/ class files into `out_dir` and
/// returns the validated manifest. Labels are 0..used_classes()-1: the first
/// `base_classes` form session 0, then consecutive runs of `increment_size`.
DatasetManifest generate(const BenchSpec& spec, const std::filesystem::path& out_dir);

/// Percent of test rows whose nearest training mean (Euclidean) belongs to
/// their own class.
double nearest_mean_oracle(const FeatureSource& source, const std::vector<Label>& labels);
double nearest_mean_oracle(const DatasetManifest& manifest);

}  // namespace sfr
