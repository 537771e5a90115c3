#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "sfr/errors.hpp"
#include "sfr/types.hpp"

namespace sfr {

enum class CovariancePath {
  /// Shrink; reduce only when the data is rank-collapsed or the shrunk
  /// covariance still fails the PSD check.
  Auto,
  ShrinkOnly,
  ForceReduce,
};

struct PrototypeOptions {
  /// Relative shrinkage floor: eps = shrinkage * trace(S)/d (or * 1 when the
  /// trace is zero). Zero disables it.
  double shrinkage = 1e-6;
  CovariancePath path = CovariancePath::Auto;
  /// Singular values below sigma_max * rank_tolerance count as zero.
  double rank_tolerance = 1e-7;
  /// Mahalanobis distance with diag(cov) only.
  bool diagonal_mahalanobis = false;
};

/// Low-rank coordinates of a class: x = mean + basis * y, y ~ N(mean_y, cov_y).
template <typename Scalar>
struct Reduction {
  Matrix<Scalar> basis;  // d x r, orthonormal columns
  Vector<Scalar> mean;   // r
  Matrix<Scalar> cov;    // r x r
};

/// Gaussian model of one class in feature space.
template <typename Scalar>
struct ClassPrototype {
  Label label = 0;
  Vector<Scalar> mean;
  /// Full d x d covariance. For reduced prototypes this is the reverted
  /// basis * cov_y * basis^T and has rank r.
  Matrix<Scalar> cov;
  std::optional<Reduction<Scalar>> reduction;
  Index sample_count = 0;

  Index dim() const noexcept { return mean.size(); }
  bool reduced() const noexcept { return reduction.has_value(); }
  Index rank() const noexcept { return reduction ? reduction->basis.cols() : dim(); }

  /// basis^T (x - mean). Requires a reduced prototype.
  template <typename Derived>
  Vector<Scalar> project(const Eigen::MatrixBase<Derived>& x) const {
    return reduction->basis.transpose() * (x - mean);
  }

  /// mean + basis * y. Requires a reduced prototype.
  template <typename Derived>
  Vector<Scalar> revert(const Eigen::MatrixBase<Derived>& y) const {
    return mean + reduction->basis * y;
  }
};

/// Saved per-class knowledge; the only class-level state that crosses a
/// session boundary.
template <typename Scalar>
class PrototypeStore {
 public:
  PrototypeStore() = default;
  explicit PrototypeStore(Index dim) : dim_(dim) {}

  Index dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  bool contains(Label label) const { return entries_.count(label) != 0; }

  void insert(ClassPrototype<Scalar> p) {
    if (dim_ == 0 && entries_.empty()) dim_ = p.dim();
    if (p.dim() != dim_)
      throw DimensionMismatch("PrototypeStore: prototype dim " + std::to_string(p.dim()) + " vs store dim " +
                              std::to_string(dim_));
    const Label label = p.label;
    if (!entries_.emplace(label, std::move(p)).second)
      throw DuplicateLabel("PrototypeStore: class " + std::to_string(label) + " already stored");
  }

  const ClassPrototype<Scalar>& at(Label label) const {
    auto it = entries_.find(label);
    if (it == entries_.end()) throw UnknownLabel("PrototypeStore: no prototype for class " + std::to_string(label));
    return it->second;
  }

  std::vector<Label> labels() const {
    std::vector<Label> out;
    for (const auto& [l, p] : entries_) out.push_back(l);
    return out;
  }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  Index dim_ = 0;
  std::map<Label, ClassPrototype<Scalar>> entries_;
};

namespace detail {

template <typename Scalar, typename Derived>
Vector<Scalar> column_mean(const Eigen::MatrixBase<Derived>& rows) {
  const Index n = rows.rows(), d = rows.cols();
  Vector<Scalar> mean = Vector<Scalar>::Zero(d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) mean(j) += static_cast<Scalar>(rows(i, j));
  for (Index j = 0; j < d; ++j) mean(j) /= static_cast<Scalar>(n);
  return mean;
}

/// Unbiased scatter / (n-1), accumulated sample by sample so the result does
/// not depend on blocking. Zero for n < 2.
template <typename Scalar, typename Derived>
Matrix<Scalar> sample_covariance(const Eigen::MatrixBase<Derived>& rows, const Vector<Scalar>& mean) {
  const Index n = rows.rows(), d = rows.cols();
  Matrix<Scalar> cov = Matrix<Scalar>::Zero(d, d);
  if (n < 2) return cov;
  Vector<Scalar> c(d);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) c(j) = static_cast<Scalar>(rows(i, j)) - mean(j);
    for (Index a = 0; a < d; ++a)
      for (Index b = a; b < d; ++b) cov(a, b) += c(a) * c(b);
  }
  const Scalar denom = static_cast<Scalar>(n - 1);
  for (Index a = 0; a < d; ++a)
    for (Index b = a; b < d; ++b) {
      cov(a, b) /= denom;
      cov(b, a) = cov(a, b);
    }
  return cov;
}

template <typename Scalar, typename Derived>
RowMatrix<Scalar> centered(const Eigen::MatrixBase<Derived>& rows, const Vector<Scalar>& mean) {
  return rows.template cast<Scalar>().rowwise() - mean.transpose();
}

template <typename Scalar>
void check_rows(Index n, Index d, const char* who) {
  if (n == 0) throw EmptyInput(std::string(who) + ": no input vectors");
  if (d == 0) throw DimensionMismatch(std::string(who) + ": zero-dimensional vectors");
}

/// Flips each column so its largest-magnitude entry is positive.
template <typename Scalar>
void canonicalize_signs(Matrix<Scalar>& basis) {
  for (Index c = 0; c < basis.cols(); ++c) {
    Index arg;
    basis.col(c).cwiseAbs().maxCoeff(&arg);
    if (basis(arg, c) < Scalar(0)) basis.col(c) *= Scalar(-1);
  }
}

}  // namespace detail

/// eps = scale * trace(cov)/d, with trace/d replaced by 1 when the trace is 0.
template <typename Scalar>
Scalar shrinkage_epsilon(const Matrix<Scalar>& cov, double scale) {
  if (cov.rows() == 0) return Scalar(0);
  Scalar trace(0);
  for (Index i = 0; i < cov.rows(); ++i) trace += cov(i, i);
  const Scalar level = trace == Scalar(0) ? Scalar(1) : trace / static_cast<Scalar>(cov.rows());
  return static_cast<Scalar>(scale) * level;
}

/// Smallest eigenvalue >= -1e-8 * trace.
template <typename Scalar>
bool is_psd(const Matrix<Scalar>& cov) {
  if (cov.rows() == 0) return true;
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(cov, Eigen::EigenvaluesOnly);
  const Scalar trace = cov.trace();
  return eig.eigenvalues().minCoeff() >= Scalar(-1e-8) * std::abs(trace);
}

/// Number of singular values of a centered data matrix above
/// sigma_max * tolerance, capped at n - 1.
template <typename Derived>
Index numerical_rank(const Eigen::MatrixBase<Derived>& centered_rows, double tolerance) {
  using Scalar = typename Derived::Scalar;
  const Index n = centered_rows.rows();
  if (n < 2) return 0;
  Eigen::BDCSVD<Matrix<Scalar>> svd(centered_rows, Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == Scalar(0)) return 0;
  const Scalar cut = s(0) * static_cast<Scalar>(tolerance);
  Index r = 0;
  while (r < s.size() && s(r) > cut) ++r;
  return std::min(r, n - 1);
}

/// Reduced-form prototype: the basis spans the top-r right singular vectors of
/// the centered data; mean and covariance are refitted in those coordinates.
/// Identical inputs give r = 0 (mean only).
template <typename Derived>
ClassPrototype<typename Derived::Scalar> svd_reduce(Label label, const Eigen::MatrixBase<Derived>& rows,
                                                    const PrototypeOptions& opts = {}) {
  using Scalar = typename Derived::Scalar;
  const Index n = rows.rows(), d = rows.cols();
  detail::check_rows<Scalar>(n, d, "svd_reduce");

  ClassPrototype<Scalar> p;
  p.label = label;
  p.sample_count = n;
  p.mean = detail::column_mean<Scalar>(rows);
  const RowMatrix<Scalar> x = detail::centered<Scalar>(rows, p.mean);

  Index r = 0;
  Matrix<Scalar> v;
  if (n >= 2) {
    Eigen::BDCSVD<Matrix<Scalar>> svd(x, Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    if (s.size() > 0 && s(0) > Scalar(0)) {
      const Scalar cut = s(0) * static_cast<Scalar>(opts.rank_tolerance);
      while (r < s.size() && s(r) > cut) ++r;
      r = std::min(r, n - 1);
    }
    v = svd.matrixV().leftCols(r);
  }

  Reduction<Scalar> red;
  red.basis = r > 0 ? v : Matrix<Scalar>(d, 0);
  detail::canonicalize_signs(red.basis);
  const RowMatrix<Scalar> y = x * red.basis;
  red.mean = r > 0 ? detail::column_mean<Scalar>(y) : Vector<Scalar>(0);
  red.cov = r > 0 ? detail::sample_covariance<Scalar>(y, red.mean) : Matrix<Scalar>(0, 0);
  if (r > 0 && opts.shrinkage > 0.0)
    red.cov.diagonal().array() += shrinkage_epsilon(red.cov, opts.shrinkage);

  p.cov = red.basis * red.cov * red.basis.transpose();
  p.reduction = std::move(red);
  return p;
}

/// Mean and unbiased covariance plus the shrinkage floor. Falls back to the
/// reduced form per `opts.path`.
template <typename Derived>
ClassPrototype<typename Derived::Scalar> fit_prototype(Label label, const Eigen::MatrixBase<Derived>& rows,
                                                       const PrototypeOptions& opts = {}) {
  using Scalar = typename Derived::Scalar;
  const Index n = rows.rows(), d = rows.cols();
  detail::check_rows<Scalar>(n, d, "fit_prototype");

  if (opts.path == CovariancePath::ForceReduce) return svd_reduce(label, rows, opts);

  ClassPrototype<Scalar> p;
  p.label = label;
  p.sample_count = n;
  p.mean = detail::column_mean<Scalar>(rows);
  p.cov = detail::sample_covariance<Scalar>(rows, p.mean);
  if (opts.shrinkage > 0.0) p.cov.diagonal().array() += shrinkage_epsilon(p.cov, opts.shrinkage);

  if (opts.path == CovariancePath::Auto && n >= 2) {
    // Rank below what the sample count allows means the class lives on a
    // lower-dimensional affine subspace.
    const Index r = numerical_rank(detail::centered<Scalar>(rows, p.mean), opts.rank_tolerance);
    if (r < std::min(n - 1, d) || !is_psd(p.cov)) return svd_reduce(label, rows, opts);
  }
  return p;
}

/// Precomputed inverse-covariance factorization of one prototype.
template <typename Scalar>
class MahalanobisMetric {
 public:
  MahalanobisMetric(const ClassPrototype<Scalar>& p, const PrototypeOptions& opts = {})
      : proto_(&p), diagonal_(opts.diagonal_mahalanobis) {
    const Matrix<Scalar>& cov = p.reduced() ? p.reduction->cov : p.cov;
    if (cov.rows() == 0) return;
    if (diagonal_) {
      inv_diag_ = cov.diagonal();
      if ((inv_diag_.array() <= Scalar(0)).any())
        throw SingularCovariance("class " + std::to_string(p.label) + ": non-positive variance");
      inv_diag_ = inv_diag_.cwiseInverse();
    } else {
      llt_.compute(cov);
      if (llt_.info() != Eigen::Success)
        throw SingularCovariance("class " + std::to_string(p.label) + ": covariance is not positive definite");
    }
  }

  template <typename Derived>
  Scalar squared(const Eigen::MatrixBase<Derived>& z) const {
    const auto& p = *proto_;
    if (z.size() != p.dim())
      throw DimensionMismatch("mahalanobis: vector dim " + std::to_string(z.size()) + " vs prototype dim " +
                              std::to_string(p.dim()));
    Vector<Scalar> diff = z.template cast<Scalar>() - p.mean;
    if (p.reduced()) {
      if (p.reduction->basis.cols() == 0) return Scalar(0);
      diff = p.reduction->basis.transpose() * diff - p.reduction->mean;
    }
    if (diagonal_) return diff.cwiseAbs2().dot(inv_diag_);
    return diff.dot(llt_.solve(diff));
  }

  template <typename Derived>
  Scalar operator()(const Eigen::MatrixBase<Derived>& z) const {
    return std::sqrt(std::max(squared(z), Scalar(0)));
  }

  /// Distances of every row.
  template <typename Derived>
  Vector<Scalar> rows(const Eigen::MatrixBase<Derived>& z) const {
    Vector<Scalar> out(z.rows());
    for (Index i = 0; i < z.rows(); ++i) out(i) = (*this)(z.row(i).transpose());
    return out;
  }

 private:
  const ClassPrototype<Scalar>* proto_;
  bool diagonal_;
  Eigen::LLT<Matrix<Scalar>> llt_;
  Vector<Scalar> inv_diag_;
};

/// D_M(z, p); evaluated in reduced coordinates for reduced prototypes.
template <typename Derived, typename Scalar>
Scalar mahalanobis(const Eigen::MatrixBase<Derived>& z, const ClassPrototype<Scalar>& p,
                   const PrototypeOptions& opts = {}) {
  return MahalanobisMetric<Scalar>(p, opts)(z);
}

}  // namespace sfr
