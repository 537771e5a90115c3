#pragma once

#include <filesystem>
#include <optional>

#include "sfr/classifier.hpp"
#include "sfr/prototype.hpp"

namespace sfr {

/// Prototype store plus an optional classifier checkpoint, saved in one
/// binary container.
///
/// Layout (all integers u32 little-endian unless noted, reals f32le):
///   magic "SFRM", version, dim, record count
///   record := tag (1 = prototype, 2 = classifier), payload
///   prototype := label (i32), flags (bit 0: reduced), sample_count, mean[d],
///                reduced ? (r, basis[d*r] row-major, reduced_mean[r], reduced_cov[r*r])
///                        : cov[d*d]
///   classifier := class count C, flags (bit 0: bias), labels[C] (i32),
///                 weights[C*d] row-major, bias[C]
struct ModelArchive {
  PrototypeStore<double> store;
  std::optional<LinearClassifier<double>> classifier;
};

inline constexpr std::uint32_t kArchiveVersion = 1;

void write_archive(const ModelArchive& archive, const std::filesystem::path& path);
ModelArchive read_archive(const std::filesystem::path& path);

}  // namespace sfr
