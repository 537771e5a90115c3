#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sfr/classifier.hpp"
#include "sfr/feature_store.hpp"
#include "sfr/prototype.hpp"
#include "sfr/sampler.hpp"

namespace sfr {

/// Base split, ordered increments and trial seeds of one experiment.
struct SessionPlan {
  std::vector<Label> base_classes;
  std::vector<std::vector<Label>> increments;
  /// K shots per incremental class; empty means full-shot.
  std::optional<int> shots;
  std::vector<std::uint64_t> trials;
  /// DFCIL trials shuffle the incremental classes (keeping increment sizes);
  /// FSCIL trials keep the order and re-draw shots.
  bool permute_class_order = false;

  std::size_t num_sessions() const noexcept { return 1 + increments.size(); }
  void validate() const;
};

/// Base = session 0 of the manifest, increments = sessions 1..N-1. Trial
/// seeds are derive_seed(seed, "trial", {t}).
SessionPlan plan_from_manifest(const DatasetManifest& manifest, std::uint64_t seed, int trials,
                               bool permute_class_order);

/// Incremental class order actually executed by a trial.
std::vector<std::vector<Label>> trial_increments(const SessionPlan& plan, std::size_t trial);

struct ClassCount {
  int correct = 0;
  int total = 0;
};

struct MetricsRecord {
  int session = 0;
  double G = 0.0;
  double L = 0.0;
  double IFM = 0.0;
  std::vector<Label> novel;
  std::map<Label, ClassCount> counts;
};

struct TrialReport {
  std::uint64_t seed = 0;
  std::vector<std::vector<Label>> increments;
  std::vector<MetricsRecord> sessions;
  std::map<std::string, int> warnings;
  /// Means over sessions 1..N-1 (session 0 alone for single-session runs).
  double mean_G = 0.0;
  double mean_IFM = 0.0;
  std::optional<double> sad;
};

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single trial
};

struct SessionAggregate {
  int session = 0;
  Stat G;
  Stat L;
  Stat IFM;
};

struct RunReport {
  std::string mode;  // "dfcil" or "fscil"
  bool augment = false;
  std::optional<int> shots;
  int replay_per_class = 0;
  std::vector<TrialReport> trials;
  std::vector<SessionAggregate> sessions;
  Stat mean_G;
  Stat mean_IFM;
  std::optional<Stat> sad;
  std::map<std::string, int> warnings;

  /// Rebuilds every derived field (per-record G/L/IFM, trial means, SAD and
  /// across-trial statistics) from the per-class count tables.
  void recompute_aggregates();
};

/// 100 |L - G| / (L + G); 0 when both are 0.
double compute_ifm(double local, double global);

/// G(session 0) - G(last session).
double compute_sad(const std::vector<MetricsRecord>& sessions);

/// G over seen+novel, L over novel. With `novel` empty (base session) L = G
/// and IFM = 0. Test rows outside seen+novel are skipped and counted in
/// `excluded`.
MetricsRecord evaluate(const LinearClassifier<double>& clf, const FeatureSet& test, const std::vector<Label>& seen,
                       const std::vector<Label>& novel, int* excluded = nullptr);

struct RunOptions {
  PrototypeOptions prototype;
  bool augment = false;
  /// Synthetic rows per augmented class; defaults to sampler.replay_per_class.
  std::optional<int> augment_target;
  int jobs = 1;
  /// Called before a session touches any data.
  std::function<void(std::size_t trial, int session)> on_session_start;
  /// Receives the final prototype store and classifier of each trial.
  std::function<void(std::size_t trial, const PrototypeStore<double>&, const LinearClassifier<double>&)> on_trial_end;
};

RunReport run_dfcil(const FeatureSource& source, const SessionPlan& plan, const SamplerConfig& sampler,
                    const TrainConfig& train, const RunOptions& options = {});

/// Few-shot variant; requires plan.shots.
RunReport run_fscil(const FeatureSource& source, const SessionPlan& plan, const SamplerConfig& sampler,
                    const TrainConfig& train, const RunOptions& options = {});

struct SweepPoint {
  int size = 0;
  RunReport report;
};

/// One run per replay buffer size.
std::vector<SweepPoint> replay_size_sweep(const FeatureSource& source, const SessionPlan& plan,
                                          const std::vector<int>& sizes, const SamplerConfig& sampler,
                                          const TrainConfig& train, const RunOptions& options = {});

/// Accuracy (percent) of one classifier trained on all real training rows of
/// `labels` at once, evaluated on all their test rows.
double joint_oracle_accuracy(const FeatureSource& source, const std::vector<Label>& labels, const TrainConfig& train);

}  // namespace sfr
