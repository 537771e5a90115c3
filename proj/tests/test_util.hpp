#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include <unistd.h>

#include "sfr/random.hpp"
#include "sfr/types.hpp"

namespace sfr::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("sfr_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

inline RowMatrix<double> gaussian_rows(Index n, Index d, std::uint64_t seed) {
  Rng rng(seed);
  RowMatrix<double> x(n, d);
  fill_standard_normal(x, rng);
  return x;
}

/// Random SPD matrix A A^T + d I / 4.
inline Matrix<double> random_spd(Index d, Rng& rng) {
  Matrix<double> a(d, d);
  fill_standard_normal(a, rng);
  Matrix<double> s = a * a.transpose();
  s.diagonal().array() += 0.25 * static_cast<double>(d);
  return s;
}

}  // namespace sfr::testing
