#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

#include <Eigen/Core>

namespace sfr {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// FNV-1a of a tag, used to separate sub-seed namespaces.
constexpr std::uint64_t tag_hash(std::string_view tag) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Sub-seed = fold of mix64 over (seed, tag, parts...). Components derive
/// their own streams from this so adding a consumer never shifts another one.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                    std::initializer_list<std::uint64_t> parts = {}) noexcept {
  std::uint64_t h = mix64(seed ^ mix64(tag_hash(tag)));
  for (std::uint64_t p : parts) h = mix64(h ^ mix64(p));
  return h;
}

/// Fills a matrix with i.i.d. standard normal draws in row-major order.
template <typename Derived>
void fill_standard_normal(Eigen::MatrixBase<Derived>& out, Rng& rng) {
  using Scalar = typename Derived::Scalar;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) = static_cast<Scalar>(normal(rng));
}

}  // namespace sfr
