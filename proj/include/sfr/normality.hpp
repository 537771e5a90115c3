#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/SVD>

#include "sfr/errors.hpp"
#include "sfr/prototype.hpp"
#include "sfr/types.hpp"

namespace sfr {

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Inverse of normal_cdf by bisection; p must lie in (0, 1).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p outside (0,1)");
  double lo = -40.0, hi = 40.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    const double mid = 0.5 * (lo + hi);
    (normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

struct PrincipalComponent {
  Index index = 0;
  double variance = 0.0;
  /// Centered data projected on the component, in input row order.
  std::vector<double> projections;
  /// (theoretical, sample) quantile pairs of the standardized projections.
  std::vector<std::pair<double, double>> qq_points;
};

struct NormalityReport {
  Index rank = 0;
  std::vector<PrincipalComponent> components;
  std::vector<std::string> warnings;
};

/// Projections onto the top-k principal axes of a class and standard-normal
/// Q-Q pairs at plotting positions (i - 0.5)/n.
template <typename Derived>
NormalityReport principal_component_report(const Eigen::MatrixBase<Derived>& rows, Index k,
                                           double rank_tolerance = 1e-7) {
  const Index n = rows.rows();
  if (n < 3) throw EmptyInput("principal_component_report: need at least 3 vectors, got " + std::to_string(n));

  const Vector<double> mean = detail::column_mean<double>(rows);
  const RowMatrix<double> x = detail::centered<double>(rows, mean);
  Eigen::BDCSVD<Matrix<double>> svd(x, Eigen::ComputeThinV);
  const auto& s = svd.singularValues();

  NormalityReport report;
  if (s.size() > 0 && s(0) > 0.0) {
    const double cut = s(0) * rank_tolerance;
    while (report.rank < s.size() && s(report.rank) > cut) ++report.rank;
    report.rank = std::min(report.rank, n - 1);
  }
  if (report.rank == 0) {
    report.warnings.push_back("data has rank 0; no principal components");
    return report;
  }
  if (k > report.rank) {
    report.warnings.push_back("k=" + std::to_string(k) + " exceeds rank " + std::to_string(report.rank) +
                              "; clamped");
    k = report.rank;
  }

  Matrix<double> axes = svd.matrixV().leftCols(k);
  detail::canonicalize_signs(axes);
  const Matrix<double> proj = x * axes;
  for (Index c = 0; c < k; ++c) {
    PrincipalComponent pc;
    pc.index = c;
    pc.variance = s(c) * s(c) / static_cast<double>(n - 1);
    pc.projections.assign(proj.col(c).data(), proj.col(c).data() + n);

    const double sd = std::sqrt(pc.variance);
    std::vector<double> z(pc.projections);
    double m = 0.0;
    for (double v : z) m += v;
    m /= static_cast<double>(n);
    for (double& v : z) v = (v - m) / sd;
    std::sort(z.begin(), z.end());
    for (Index i = 0; i < n; ++i)
      pc.qq_points.emplace_back(normal_quantile((static_cast<double>(i) + 0.5) / static_cast<double>(n)), z[i]);
    report.components.push_back(std::move(pc));
  }
  return report;
}

}  // namespace sfr
