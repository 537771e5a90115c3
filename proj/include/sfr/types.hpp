#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace sfr {

using Label = std::int32_t;
using Index = Eigen::Index;

/// Samples are stored one per row.
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

}  // namespace sfr
