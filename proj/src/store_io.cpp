#include "sfr/store_io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "sfr/errors.hpp"

namespace sfr {

namespace {

constexpr char kMagic[4] = {'S', 'F', 'R', 'M'};
constexpr std::uint32_t kTagPrototype = 1;
constexpr std::uint32_t kTagClassifier = 2;

std::uint32_t swap_if_big(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big)
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  return v;
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
    if (!out_) throw IoError("cannot write " + path.string());
  }
  void u32(std::uint32_t v) {
    v = swap_if_big(v);
    out_.write(reinterpret_cast<const char*>(&v), 4);
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void bytes(const char* p, std::streamsize n) { out_.write(p, n); }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  template <typename Derived>
  void reals(const Eigen::MatrixBase<Derived>& m) {
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) f32(m(i, j));
  }
  void finish() {
    out_.flush();
    if (!out_) throw IoError("write failed: " + path_.string());
  }

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw IoError("cannot open " + path.string());
  }
  std::uint32_t u32() {
    std::uint32_t v;
    if (!in_.read(reinterpret_cast<char*>(&v), 4)) throw ParseError(path_.string() + ": truncated archive");
    return swap_if_big(v);
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f32() {
    const float v = std::bit_cast<float>(u32());
    if (!std::isfinite(v)) throw ParseError(path_.string() + ": non-finite value in archive");
    return v;
  }
  Matrix<double> reals(Index rows, Index cols) {
    Matrix<double> m(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = f32();
    return m;
  }
  void magic() {
    char buf[4];
    if (!in_.read(buf, 4) || std::memcmp(buf, kMagic, 4) != 0) throw ParseError(path_.string() + ": not a model archive");
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

}  // namespace

void write_archive(const ModelArchive& archive, const std::filesystem::path& path) {
  const Index d = archive.store.dim();
  if (archive.classifier && archive.classifier->dim() != d && !archive.store.empty())
    throw DimensionMismatch("write_archive: classifier and store dims differ");
  const Index dim = archive.store.empty() && archive.classifier ? archive.classifier->dim() : d;

  Writer body(path);
  body.bytes(kMagic, 4);
  body.u32(kArchiveVersion);
  body.u32(static_cast<std::uint32_t>(dim));
  body.u32(static_cast<std::uint32_t>(archive.store.size() + (archive.classifier ? 1 : 0)));
  for (const auto& [label, p] : archive.store) {
    body.u32(kTagPrototype);
    body.i32(label);
    body.u32(p.reduced() ? 1u : 0u);
    body.u32(static_cast<std::uint32_t>(p.sample_count));
    body.reals(p.mean.transpose());
    if (p.reduced()) {
      const auto& r = *p.reduction;
      body.u32(static_cast<std::uint32_t>(r.basis.cols()));
      body.reals(r.basis);
      body.reals(r.mean.transpose());
      body.reals(r.cov);
    } else {
      body.reals(p.cov);
    }
  }
  if (archive.classifier) {
    const auto& c = *archive.classifier;
    body.u32(kTagClassifier);
    body.u32(static_cast<std::uint32_t>(c.num_classes()));
    body.u32(c.use_bias ? 1u : 0u);
    for (Label l : c.labels) body.i32(l);
    body.reals(c.weights);
    body.reals(c.bias.transpose());
  }
  body.finish();
}

ModelArchive read_archive(const std::filesystem::path& path) {
  Reader r(path);
  r.magic();
  const auto version = r.u32();
  if (version != kArchiveVersion) throw ParseError(path.string() + ": unsupported archive version " + std::to_string(version));
  const Index d = r.u32();
  const auto count = r.u32();
  ModelArchive out;
  out.store = PrototypeStore<double>(d);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto tag = r.u32();
    if (tag == kTagPrototype) {
      ClassPrototype<double> p;
      p.label = r.i32();
      const auto flags = r.u32();
      p.sample_count = r.u32();
      p.mean = r.reals(1, d).transpose();
      if (flags & 1u) {
        Reduction<double> red;
        const Index rank = r.u32();
        if (rank > d) throw ParseError(path.string() + ": reduced rank exceeds dim");
        red.basis = r.reals(d, rank);
        red.mean = r.reals(1, rank).transpose();
        red.cov = r.reals(rank, rank);
        p.cov = red.basis * red.cov * red.basis.transpose();
        p.reduction = std::move(red);
      } else {
        p.cov = r.reals(d, d);
      }
      out.store.insert(std::move(p));
    } else if (tag == kTagClassifier) {
      const Index c = r.u32();
      const bool bias = r.u32() & 1u;
      std::vector<Label> labels;
      for (Index k = 0; k < c; ++k) labels.push_back(r.i32());
      LinearClassifier<double> clf(d, std::move(labels), bias);
      clf.weights = r.reals(c, d);
      clf.bias = r.reals(1, c).transpose();
      out.classifier = std::move(clf);
    } else {
      throw ParseError(path.string() + ": unknown record tag " + std::to_string(tag));
    }
  }
  if (!r.at_end()) throw ParseError(path.string() + ": trailing bytes after last record");
  return out;
}

}  // namespace sfr
