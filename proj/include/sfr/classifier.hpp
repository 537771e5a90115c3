#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "sfr/errors.hpp"
#include "sfr/random.hpp"
#include "sfr/synthetic_batch.hpp"
#include "sfr/types.hpp"

namespace sfr {

struct TrainConfig {
  double lr = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int epochs = 50;
  int batch_size = 64;
  /// Replay rows per optimizer step = alpha * rows of the new-data mini-batch.
  int alpha = 8;
  bool use_bias = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0.0)) throw ValidationError("train.lr must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0)) throw ValidationError("train.beta1 must lie in (0,1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) throw ValidationError("train.beta2 must lie in (0,1)");
    if (epochs < 1) throw ValidationError("train.epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
    if (alpha < 0) throw ValidationError("train.alpha must be >= 0");
  }
};

/// Linear softmax head. Row i of `weights` scores `labels[i]`.
template <typename Scalar>
struct LinearClassifier {
  std::vector<Label> labels;
  Matrix<Scalar> weights;
  Vector<Scalar> bias;
  bool use_bias = true;

  LinearClassifier() = default;
  LinearClassifier(Index dim, std::vector<Label> head_labels, bool with_bias = true)
      : labels(std::move(head_labels)),
        weights(Matrix<Scalar>::Zero(static_cast<Index>(labels.size()), dim)),
        bias(Vector<Scalar>::Zero(static_cast<Index>(labels.size()))),
        use_bias(with_bias) {
    if (std::set<Label>(labels.begin(), labels.end()).size() != labels.size())
      throw DuplicateLabel("LinearClassifier: duplicate label in head");
  }

  Index dim() const noexcept { return weights.cols(); }
  Index num_classes() const noexcept { return static_cast<Index>(labels.size()); }

  std::optional<Index> index_of(Label label) const {
    auto it = std::find(labels.begin(), labels.end(), label);
    if (it == labels.end()) return std::nullopt;
    return static_cast<Index>(it - labels.begin());
  }

  Index require_index(Label label) const {
    if (auto i = index_of(label)) return *i;
    throw UnknownLabel("classifier head has no class " + std::to_string(label));
  }

  /// n x C logits.
  template <typename Derived>
  Matrix<Scalar> logits(const Eigen::MatrixBase<Derived>& x) const {
    if (x.cols() != dim())
      throw DimensionMismatch("classifier: input dim " + std::to_string(x.cols()) + " vs " + std::to_string(dim()));
    Matrix<Scalar> z = x.template cast<Scalar>() * weights.transpose();
    if (use_bias) z.rowwise() += bias.transpose();
    return z;
  }
};

/// Appends zero rows for `new_labels`; existing rows are untouched.
template <typename Scalar>
LinearClassifier<Scalar> expand_head(const LinearClassifier<Scalar>& clf, const std::vector<Label>& new_labels) {
  std::set<Label> seen(clf.labels.begin(), clf.labels.end());
  for (Label l : new_labels)
    if (!seen.insert(l).second) throw DuplicateLabel("expand_head: class " + std::to_string(l) + " already in head");
  LinearClassifier<Scalar> out = clf;
  const Index c0 = clf.num_classes(), c1 = c0 + static_cast<Index>(new_labels.size());
  out.labels.insert(out.labels.end(), new_labels.begin(), new_labels.end());
  out.weights.conservativeResize(c1, clf.dim());
  out.weights.bottomRows(c1 - c0).setZero();
  out.bias.conservativeResize(c1);
  out.bias.tail(c1 - c0).setZero();
  return out;
}

/// Argmax of the logits; ties go to the smallest label id.
template <typename Scalar, typename Derived>
std::vector<Label> predict(const LinearClassifier<Scalar>& clf, const Eigen::MatrixBase<Derived>& x) {
  const Matrix<Scalar> z = clf.logits(x);
  std::vector<Label> out(static_cast<std::size_t>(z.rows()));
  for (Index i = 0; i < z.rows(); ++i) {
    Index best = 0;
    for (Index c = 1; c < z.cols(); ++c)
      if (z(i, c) > z(i, best) || (z(i, c) == z(i, best) && clf.labels[c] < clf.labels[best])) best = c;
    out[static_cast<std::size_t>(i)] = clf.labels[best];
  }
  return out;
}

template <typename Scalar>
struct LossAndGrad {
  Scalar loss = 0;
  Matrix<Scalar> grad_weights;
  Vector<Scalar> grad_bias;
};

/// Mean softmax cross-entropy and its exact gradient.
template <typename Scalar, typename Derived>
LossAndGrad<Scalar> loss_and_grad(const LinearClassifier<Scalar>& clf, const Eigen::MatrixBase<Derived>& x,
                                  const std::vector<Label>& y) {
  const Index n = x.rows(), c = clf.num_classes();
  if (static_cast<std::size_t>(n) != y.size()) throw DimensionMismatch("loss_and_grad: rows vs labels");
  if (n == 0) throw EmptyInput("loss_and_grad: empty batch");
  std::vector<Index> target(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) target[i] = clf.require_index(y[i]);

  Matrix<Scalar> z = clf.logits(x);
  LossAndGrad<Scalar> out;
  for (Index i = 0; i < n; ++i) {
    const Scalar m = z.row(i).maxCoeff();
    auto e = (z.row(i).array() - m).exp();
    const Scalar sum = e.sum();
    out.loss += std::log(sum) + m - z(i, target[static_cast<std::size_t>(i)]);
    z.row(i) = e / sum;  // softmax
    z(i, target[static_cast<std::size_t>(i)]) -= Scalar(1);
  }
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
  out.loss *= inv_n;
  z *= inv_n;
  out.grad_weights = z.transpose() * x.template cast<Scalar>();
  out.grad_bias = clf.use_bias ? Vector<Scalar>(z.colwise().sum().transpose()) : Vector<Scalar>::Zero(c);
  return out;
}

/// Endless cyclic stream over the rows of a set of synthetic batches,
/// reshuffled on every full pass. Rows are put in a canonical order (by
/// label) before shuffling, so the draws do not depend on batch storage order.
template <typename Scalar>
class RollingMixer {
 public:
  RollingMixer(const std::vector<SyntheticBatch<Scalar>>& batches, std::uint64_t seed) : rng_(seed) {
    std::vector<const SyntheticBatch<Scalar>*> order;
    Index total = 0, dim = 0;
    for (const auto& b : batches) {
      if (b.empty()) continue;
      if (dim == 0) dim = b.vectors.cols();
      if (b.vectors.cols() != dim) throw DimensionMismatch("RollingMixer: batches differ in dim");
      order.push_back(&b);
      total += b.size();
    }
    std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->label < b->label; });
    rows_.resize(total, dim);
    Index k = 0;
    for (const auto* b : order) {
      rows_.middleRows(k, b->size()) = b->vectors;
      labels_.insert(labels_.end(), static_cast<std::size_t>(b->size()), b->label);
      k += b->size();
    }
    perm_.resize(static_cast<std::size_t>(total));
    std::iota(perm_.begin(), perm_.end(), Index(0));
    cursor_ = perm_.size();
  }

  Index size() const noexcept { return rows_.rows(); }
  bool empty() const noexcept { return rows_.rows() == 0; }
  const std::vector<Label>& labels() const noexcept { return labels_; }

  /// Appends `count` row indices into the pool.
  void draw(Index count, std::vector<Index>& out) {
    if (empty()) return;
    for (Index i = 0; i < count; ++i) {
      if (cursor_ == perm_.size()) {
        std::shuffle(perm_.begin(), perm_.end(), rng_);
        cursor_ = 0;
      }
      out.push_back(perm_[cursor_++]);
    }
  }

  auto row(Index i) const { return rows_.row(i); }
  Label label(Index i) const { return labels_[static_cast<std::size_t>(i)]; }

 private:
  Rng rng_;
  RowMatrix<Scalar> rows_;
  std::vector<Label> labels_;
  std::vector<Index> perm_;
  std::size_t cursor_ = 0;
};

struct TrainTrace {
  /// Mean step loss of each epoch.
  std::vector<double> epoch_loss;
  std::size_t steps = 0;
};

/// Mini-batch Adam over the new data; each step mixes in alpha * batch rows
/// from the replay stream. Returns the final-epoch model.
template <typename Scalar, typename Derived>
LinearClassifier<Scalar> train(LinearClassifier<Scalar> clf, const Eigen::MatrixBase<Derived>& new_x,
                               const std::vector<Label>& new_y, const std::vector<SyntheticBatch<Scalar>>& replay,
                               const TrainConfig& cfg, TrainTrace* trace = nullptr) {
  cfg.validate();
  if (static_cast<std::size_t>(new_x.rows()) != new_y.size()) throw DimensionMismatch("train: rows vs labels");
  for (Label l : new_y) clf.require_index(l);
  for (const auto& b : replay) {
    clf.require_index(b.label);
    if (!b.empty() && b.vectors.cols() != clf.dim()) throw DimensionMismatch("train: replay dim");
  }
  if (new_x.rows() > 0 && new_x.cols() != clf.dim()) throw DimensionMismatch("train: input dim");

  RollingMixer<Scalar> mixer(replay, derive_seed(cfg.seed, "replay-mixer"));
  const Index n_new = new_x.rows();
  if (n_new == 0 && mixer.empty()) throw EmptyInput("train: no new data and no replay");

  Rng order_rng(derive_seed(cfg.seed, "batch-order"));
  const Index d = clf.dim(), c = clf.num_classes(), bs = cfg.batch_size;
  Matrix<Scalar> m_w = Matrix<Scalar>::Zero(c, d), v_w = m_w;
  Vector<Scalar> m_b = Vector<Scalar>::Zero(c), v_b = m_b;
  const auto b1 = static_cast<Scalar>(cfg.beta1), b2 = static_cast<Scalar>(cfg.beta2);
  const auto lr = static_cast<Scalar>(cfg.lr), eps = static_cast<Scalar>(cfg.adam_epsilon);
  long step = 0;

  std::vector<Index> perm(static_cast<std::size_t>(n_new));
  std::iota(perm.begin(), perm.end(), Index(0));
  std::vector<Index> replay_idx;
  RowMatrix<Scalar> xb;
  std::vector<Label> yb;

  auto adam_step = [&]() {
    const auto g = loss_and_grad(clf, xb, yb);
    ++step;
    const Scalar c1 = Scalar(1) - std::pow(b1, static_cast<Scalar>(step));
    const Scalar c2 = Scalar(1) - std::pow(b2, static_cast<Scalar>(step));
    m_w = b1 * m_w + (Scalar(1) - b1) * g.grad_weights;
    v_w = b2 * v_w + (Scalar(1) - b2) * g.grad_weights.cwiseAbs2();
    clf.weights.array() -= lr * (m_w.array() / c1) / ((v_w.array() / c2).sqrt() + eps);
    if (clf.use_bias) {
      m_b = b1 * m_b + (Scalar(1) - b1) * g.grad_bias;
      v_b = b2 * v_b + (Scalar(1) - b2) * g.grad_bias.cwiseAbs2();
      clf.bias.array() -= lr * (m_b.array() / c1) / ((v_b.array() / c2).sqrt() + eps);
    }
    return g.loss;
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t steps = 0;
    if (n_new > 0) {
      std::shuffle(perm.begin(), perm.end(), order_rng);
      for (Index start = 0; start < n_new; start += bs) {
        const Index take = std::min(bs, n_new - start);
        replay_idx.clear();
        mixer.draw(take * cfg.alpha, replay_idx);
        const Index rows = take + static_cast<Index>(replay_idx.size());
        xb.resize(rows, d);
        yb.resize(static_cast<std::size_t>(rows));
        for (Index i = 0; i < take; ++i) {
          const Index src = perm[static_cast<std::size_t>(start + i)];
          xb.row(i) = new_x.row(src).template cast<Scalar>();
          yb[static_cast<std::size_t>(i)] = new_y[static_cast<std::size_t>(src)];
        }
        for (std::size_t j = 0; j < replay_idx.size(); ++j) {
          xb.row(take + static_cast<Index>(j)) = mixer.row(replay_idx[j]);
          yb[static_cast<std::size_t>(take) + j] = mixer.label(replay_idx[j]);
        }
        loss_sum += static_cast<double>(adam_step());
        ++steps;
      }
    } else {
      // Replay only: an epoch is one pass worth of replay rows.
      for (Index start = 0; start < mixer.size(); start += bs) {
        const Index take = std::min(bs, mixer.size() - start);
        replay_idx.clear();
        mixer.draw(take, replay_idx);
        xb.resize(take, d);
        yb.resize(static_cast<std::size_t>(take));
        for (Index j = 0; j < take; ++j) {
          xb.row(j) = mixer.row(replay_idx[static_cast<std::size_t>(j)]);
          yb[static_cast<std::size_t>(j)] = mixer.label(replay_idx[static_cast<std::size_t>(j)]);
        }
        loss_sum += static_cast<double>(adam_step());
        ++steps;
      }
    }
    if (trace) {
      trace->epoch_loss.push_back(loss_sum / static_cast<double>(steps));
      trace->steps += steps;
    }
  }
  return clf;
}

}  // namespace sfr
