#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <vector>

#include <Eigen/Eigenvalues>

#include "sfr/classifier.hpp"
#include "sfr/errors.hpp"
#include "sfr/prototype.hpp"
#include "sfr/random.hpp"
#include "sfr/synthetic_batch.hpp"

namespace sfr {

struct SamplerConfig {
  int replay_per_class = 100;
  int candidate_pool = 300;
  double beta = 30.0;
  double beta_decay = 0.9;
  double beta_floor = 1e-3;
  int max_filter_rounds = 50;
  std::uint64_t seed = 0;

  void validate() const {
    if (replay_per_class < 1) throw ValidationError("sampler.replay_per_class must be >= 1");
    if (candidate_pool < replay_per_class)
      throw ValidationError("sampler.candidate_pool must be >= sampler.replay_per_class");
    if (!(beta >= 0.0)) throw ValidationError("sampler.beta must be non-negative");
    if (!(beta_decay > 0.0 && beta_decay < 1.0)) throw ValidationError("sampler.beta_decay must lie in (0,1)");
    if (!(beta_floor > 0.0)) throw ValidationError("sampler.beta_floor must be positive");
    if (max_filter_rounds < 1) throw ValidationError("sampler.max_filter_rounds must be >= 1");
  }
};

/// Draws from N(mean, cov) as mean + U sqrt(max(L, 0)) g, using the
/// eigendecomposition cov = U L U^T. Reduced prototypes are sampled in their
/// r-dim coordinates and reverted with the basis.
template <typename Scalar>
class GaussianSampler {
 public:
  explicit GaussianSampler(const ClassPrototype<Scalar>& p) : proto_(&p) {
    const Matrix<Scalar>& cov = p.reduced() ? p.reduction->cov : p.cov;
    if (cov.rows() == 0) return;
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(cov);
    const Vector<Scalar> root = eig.eigenvalues().cwiseMax(Scalar(0)).cwiseSqrt();
    transform_ = eig.eigenvectors() * root.asDiagonal();
  }

  RowMatrix<Scalar> sample(Index n, Rng& rng) const {
    const auto& p = *proto_;
    RowMatrix<Scalar> out(n, p.dim());
    const Index k = transform_.cols();
    if (k == 0) {
      out.rowwise() = p.mean.transpose();
      return out;
    }
    RowMatrix<Scalar> g(n, k);
    fill_standard_normal(g, rng);
    RowMatrix<Scalar> local = g * transform_.transpose();
    if (p.reduced()) {
      local.rowwise() += p.reduction->mean.transpose();
      out = local * p.reduction->basis.transpose();
    } else {
      out = std::move(local);
    }
    out.rowwise() += p.mean.transpose();
    return out;
  }

 private:
  const ClassPrototype<Scalar>* proto_;
  Matrix<Scalar> transform_;
};

template <typename Scalar>
SyntheticBatch<Scalar> sample_gaussian(const ClassPrototype<Scalar>& p, Index n, Rng& rng,
                                       Provenance provenance = Provenance::Replay) {
  if (n < 1) throw EmptyInput("sample_gaussian: n must be >= 1");
  return {p.label, GaussianSampler<Scalar>(p).sample(n, rng), provenance};
}

/// Keeps the rows of `rows` at `keep` positions, in order.
template <typename Scalar>
RowMatrix<Scalar> select_rows(const RowMatrix<Scalar>& rows, const std::vector<Index>& keep) {
  RowMatrix<Scalar> out(static_cast<Index>(keep.size()), rows.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) out.row(static_cast<Index>(i)) = rows.row(keep[i]);
  return out;
}

/// Rows whose predicted class is the batch label.
template <typename Scalar>
SyntheticBatch<Scalar> filter_by_classifier(const SyntheticBatch<Scalar>& batch, const LinearClassifier<Scalar>& clf) {
  clf.require_index(batch.label);
  SyntheticBatch<Scalar> out{batch.label, RowMatrix<Scalar>(0, batch.vectors.cols()), batch.provenance};
  if (batch.empty()) return out;
  const auto pred = predict(clf, batch.vectors);
  std::vector<Index> keep;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == batch.label) keep.push_back(static_cast<Index>(i));
  out.vectors = select_rows(batch.vectors, keep);
  return out;
}

struct ReplayStats {
  /// Rows per class filled from unfiltered samples after the filter rounds ran out.
  std::map<Label, int> unfiltered_fill;
  /// Filter rounds used per class.
  std::map<Label, int> rounds;

  int total_unfiltered() const {
    int n = 0;
    for (const auto& [l, k] : unfiltered_fill) n += k;
    return n;
  }
};

/// Classifier-filtered replay: exactly `replay_per_class` rows per stored class.
template <typename Scalar>
std::vector<SyntheticBatch<Scalar>> synthetic_replay(const PrototypeStore<Scalar>& store,
                                                     const LinearClassifier<Scalar>& prev_clf,
                                                     const SamplerConfig& cfg, ReplayStats* stats = nullptr) {
  cfg.validate();
  if (store.empty()) throw EmptyInput("synthetic_replay: empty prototype store");
  const Index want = cfg.replay_per_class;
  std::vector<SyntheticBatch<Scalar>> out;
  for (const auto& [label, proto] : store) {
    prev_clf.require_index(label);
    Rng rng(derive_seed(cfg.seed, "replay", {static_cast<std::uint64_t>(label)}));
    const GaussianSampler<Scalar> sampler(proto);

    RowMatrix<Scalar> kept(0, store.dim());
    int rounds = 0;
    while (kept.rows() < want && rounds < cfg.max_filter_rounds) {
      SyntheticBatch<Scalar> cand{label, sampler.sample(cfg.candidate_pool, rng), Provenance::Replay};
      const auto pass = filter_by_classifier(cand, prev_clf);
      kept.conservativeResize(kept.rows() + pass.size(), Eigen::NoChange);
      kept.bottomRows(pass.size()) = pass.vectors;
      ++rounds;
    }

    SyntheticBatch<Scalar> batch{label, {}, Provenance::Replay};
    if (kept.rows() >= want) {
      std::vector<Index> idx(static_cast<std::size_t>(kept.rows()));
      std::iota(idx.begin(), idx.end(), Index(0));
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(want));
      std::sort(idx.begin(), idx.end());
      batch.vectors = select_rows(kept, idx);
    } else {
      const Index missing = want - kept.rows();
      batch.vectors.resize(want, store.dim());
      batch.vectors.topRows(kept.rows()) = kept;
      batch.vectors.bottomRows(missing) = sampler.sample(missing, rng);
      if (stats) stats->unfiltered_fill[label] = static_cast<int>(missing);
    }
    if (stats) stats->rounds[label] = rounds;
    out.push_back(std::move(batch));
  }
  return out;
}

/// For every row, the smallest Mahalanobis distance to any prototype in
/// `others` other than `self`. +inf when there is none.
template <typename Scalar>
Vector<Scalar> min_mahalanobis(const RowMatrix<Scalar>& rows, const PrototypeStore<Scalar>& others, Label self,
                               const PrototypeOptions& opts = {}) {
  Vector<Scalar> best = Vector<Scalar>::Constant(rows.rows(), std::numeric_limits<Scalar>::infinity());
  for (const auto& [label, proto] : others) {
    if (label == self) continue;
    const MahalanobisMetric<Scalar> metric(proto, opts);
    best = best.cwiseMin(metric.rows(rows));
  }
  return best;
}

/// Keeps rows at distance >= beta from every other class prototype.
template <typename Scalar>
SyntheticBatch<Scalar> filter_by_mahalanobis(const SyntheticBatch<Scalar>& batch, const PrototypeStore<Scalar>& others,
                                             double beta, const PrototypeOptions& opts = {}) {
  const Vector<Scalar> dist = min_mahalanobis(batch.vectors, others, batch.label, opts);
  std::vector<Index> keep;
  for (Index i = 0; i < dist.size(); ++i)
    if (dist(i) >= static_cast<Scalar>(beta)) keep.push_back(i);
  return {batch.label, select_rows(batch.vectors, keep), batch.provenance};
}

template <typename Scalar>
struct AugmentResult {
  /// Real rows followed by the re-sampled synthetic rows.
  SyntheticBatch<Scalar> pool;
  Index real_count = 0;
  Index survivors = 0;
  double final_beta = 0.0;
  bool accepted_all = false;
  ClassPrototype<Scalar> naive;
  ClassPrototype<Scalar> calibrated;
};

/// Few-shot augmentation: sample from the naive prototype, drop candidates
/// too close to other classes (relaxing beta geometrically until enough
/// survive), refit on the survivors and re-sample `target_n` rows.
template <typename Scalar, typename Derived>
AugmentResult<Scalar> synthetic_augment(Label label, const Eigen::MatrixBase<Derived>& real,
                                        const PrototypeStore<Scalar>& others, const SamplerConfig& cfg, Index target_n,
                                        const PrototypeOptions& opts = {}) {
  cfg.validate();
  if (real.rows() == 0) throw EmptyInput("synthetic_augment: no real rows for class " + std::to_string(label));
  if (target_n < 1) throw ValidationError("synthetic_augment: target_n must be >= 1");

  AugmentResult<Scalar> res;
  res.real_count = real.rows();
  res.naive = fit_prototype(label, real.template cast<Scalar>(), opts);

  Rng rng(derive_seed(cfg.seed, "augment", {static_cast<std::uint64_t>(label)}));
  const RowMatrix<Scalar> cand = GaussianSampler<Scalar>(res.naive).sample(cfg.candidate_pool, rng);
  const Vector<Scalar> dist = min_mahalanobis(cand, others, label, opts);

  double beta = cfg.beta;
  std::vector<Index> keep;
  for (;;) {
    keep.clear();
    for (Index i = 0; i < dist.size(); ++i)
      if (dist(i) >= static_cast<Scalar>(beta)) keep.push_back(i);
    if (static_cast<Index>(keep.size()) >= target_n) break;
    beta *= cfg.beta_decay;
    if (beta < cfg.beta_floor) {
      keep.resize(static_cast<std::size_t>(cand.rows()));
      std::iota(keep.begin(), keep.end(), Index(0));
      res.accepted_all = true;
      break;
    }
  }
  res.final_beta = beta;
  res.survivors = static_cast<Index>(keep.size());

  res.calibrated = fit_prototype(label, select_rows(cand, keep), opts);
  const RowMatrix<Scalar> synth = GaussianSampler<Scalar>(res.calibrated).sample(target_n, rng);

  res.pool.label = label;
  res.pool.provenance = Provenance::Augment;
  res.pool.vectors.resize(real.rows() + target_n, real.cols());
  res.pool.vectors.topRows(real.rows()) = real.template cast<Scalar>();
  res.pool.vectors.bottomRows(target_n) = synth;
  return res;
}

}  // namespace sfr
