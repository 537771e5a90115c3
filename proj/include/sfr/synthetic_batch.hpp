#pragma once

#include <string_view>

#include "sfr/types.hpp"

namespace sfr {

enum class Provenance { Replay, Augment };

constexpr std::string_view to_string(Provenance p) noexcept {
  return p == Provenance::Replay ? "replay" : "augment";
}

/// Synthetic feature vectors of a single class, one per row.
template <typename Scalar>
struct SyntheticBatch {
  Label label = 0;
  RowMatrix<Scalar> vectors;
  Provenance provenance = Provenance::Replay;

  Index size() const noexcept { return vectors.rows(); }
  bool empty() const noexcept { return vectors.rows() == 0; }
};

}  // namespace sfr
