#include "sfr/benchgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/QR>
#include <json.hpp>

#include "sfr/errors.hpp"
#include "sfr/random.hpp"

namespace sfr {

namespace fs = std::filesystem;
using nlohmann::json;

void BenchSpec::validate() const {
  if (dim < 1) throw ValidationError("bench: dim must be >= 1");
  if (n_classes < 1) throw ValidationError("bench: n_classes must be >= 1");
  if (train_per_class < 1) throw ValidationError("bench: train_per_class must be >= 1");
  if (test_per_class < 0) throw ValidationError("bench: test_per_class must be >= 0");
  if (!(separation >= 0.0) || !std::isfinite(separation)) throw ValidationError("bench: separation must be >= 0");
  if (rank && (*rank < 1 || *rank > dim)) throw ValidationError("bench: rank must lie in [1, dim]");
  if (base_classes < 1 || increment_size < 1 || n_increments < 0)
    throw ValidationError("bench: base_classes, increment_size >= 1 and n_increments >= 0 required");
  if (used_classes() > n_classes)
    throw ValidationError("bench: base + increment_size * n_increments exceeds n_classes");
  if (tail_dof < 0.0) throw ValidationError("bench: tail_dof must be >= 0");
  if (!(max_condition >= 1.0)) throw ValidationError("bench: max_condition must be >= 1");
}

BenchSpec bench_spec_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("bench spec: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("bench spec: top level must be an object");
  BenchSpec s;
  try {
    for (const auto& [key, v] : doc.items()) {
      if (key == "dim") s.dim = v.get<Index>();
      else if (key == "n_classes") s.n_classes = v.get<int>();
      else if (key == "train_per_class") s.train_per_class = v.get<int>();
      else if (key == "test_per_class") s.test_per_class = v.get<int>();
      else if (key == "separation") s.separation = v.get<double>();
      else if (key == "rank") s.rank = v.is_null() ? std::nullopt : std::optional<Index>(v.get<Index>());
      else if (key == "base_classes") s.base_classes = v.get<int>();
      else if (key == "increment_size") s.increment_size = v.get<int>();
      else if (key == "n_increments") s.n_increments = v.get<int>();
      else if (key == "seed") s.seed = v.get<std::uint64_t>();
      else if (key == "tail_dof") s.tail_dof = v.get<double>();
      else if (key == "max_condition") s.max_condition = v.get<double>();
      else throw ValidationError("bench spec: unknown field '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("bench spec: ") + e.what());
  }
  s.validate();
  return s;
}

BenchSpec load_bench_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open bench spec " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return bench_spec_from_json(ss.str());
}

namespace {

Matrix<double> random_orthogonal(Index n, Rng& rng) {
  Matrix<double> g(n, n);
  fill_standard_normal(g, rng);
  Eigen::HouseholderQR<Matrix<double>> qr(g);
  Matrix<double> q = qr.householderQ();
  // Fix column signs against R's diagonal so the draw is Haar-distributed.
  const Matrix<double> r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index i = 0; i < n; ++i)
    if (r(i, i) < 0) q.col(i) *= -1.0;
  return q;
}

std::vector<Vector<double>> place_means(const BenchSpec& spec) {
  const int n = spec.used_classes();
  std::vector<Vector<double>> means;
  if (spec.separation == 0.0) {
    means.assign(static_cast<std::size_t>(n), Vector<double>::Zero(spec.dim));
    return means;
  }
  // Means sit on a sphere whose radius gives a typical pairwise distance of
  // 1.25 * separation between random directions; rejection enforces the minimum.
  Rng rng(derive_seed(spec.seed, "bench-means"));
  const double min_dist = spec.separation;
  const double radius = 1.25 * min_dist / std::sqrt(2.0);
  for (int restart = 0; restart < 40; ++restart) {
    means.clear();
    bool ok = true;
    for (int k = 0; k < n && ok; ++k) {
      ok = false;
      for (int attempt = 0; attempt < 1000; ++attempt) {
        Vector<double> m(spec.dim);
        fill_standard_normal(m, rng);
        if (m.norm() == 0.0) continue;
        m *= radius / m.norm();
        const bool far = std::all_of(means.begin(), means.end(),
                                     [&](const Vector<double>& o) { return (o - m).norm() >= min_dist; });
        if (far) {
          means.push_back(std::move(m));
          ok = true;
          break;
        }
      }
    }
    if (ok) return means;
  }
  throw InfeasibleSpec("bench: cannot place " + std::to_string(n) + " means at separation " +
                       std::to_string(spec.separation) + " in dim " + std::to_string(spec.dim));
}

/// Columns of the returned factor A give cov = A A^T. With a forced rank the
/// columns are supported on a random subset of coordinates, so the class
/// stays exactly inside its affine subspace after f32 rounding.
Matrix<double> class_factor(const BenchSpec& spec, Rng& rng) {
  const Index d = spec.dim;
  const Index r = spec.rank.value_or(d);
  std::uniform_real_distribution<double> unif(1.0, spec.max_condition);
  Vector<double> lambda(r);
  for (Index i = 0; i < r; ++i) lambda(i) = unif(rng);
  lambda /= lambda.mean();

  Matrix<double> basis;
  if (r == d) {
    basis = random_orthogonal(d, rng);
  } else {
    std::vector<Index> coords(static_cast<std::size_t>(d));
    std::iota(coords.begin(), coords.end(), Index(0));
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(static_cast<std::size_t>(r));
    std::sort(coords.begin(), coords.end());
    const Matrix<double> rot = random_orthogonal(r, rng);
    basis = Matrix<double>::Zero(d, r);
    for (Index i = 0; i < r; ++i) basis.row(coords[static_cast<std::size_t>(i)]) = rot.row(i);
  }
  return basis * lambda.cwiseSqrt().asDiagonal();
}

RowMatrix<float> draw(const Vector<double>& mean, const Matrix<double>& factor, int n, double dof, Rng& rng) {
  RowMatrix<double> g(n, factor.cols());
  fill_standard_normal(g, rng);
  if (dof > 0.0) {
    std::chi_squared_distribution<double> chi(dof);
    for (Index i = 0; i < n; ++i) g.row(i) *= std::sqrt(dof / chi(rng));
  }
  RowMatrix<double> x = g * factor.transpose();
  x.rowwise() += mean.transpose();
  return x.cast<float>();
}

}  // namespace

DatasetManifest generate(const BenchSpec& spec, const fs::path& out_dir) {
  spec.validate();
  const auto means = place_means(spec);

  DatasetManifest m;
  m.dim = spec.dim;
  m.root = out_dir;
  fs::create_directories(out_dir / "train");
  fs::create_directories(out_dir / "test");

  auto session_of = [&](int label) { return label < spec.base_classes ? 0 : 1 + (label - spec.base_classes) / spec.increment_size; };
  m.sessions.resize(static_cast<std::size_t>(1 + spec.n_increments));
  for (int s = 0; s <= spec.n_increments; ++s) m.sessions[static_cast<std::size_t>(s)].session_id = s;

  for (int label = 0; label < spec.used_classes(); ++label) {
    Rng rng(derive_seed(spec.seed, "bench-class", {static_cast<std::uint64_t>(label)}));
    const Matrix<double> factor = class_factor(spec, rng);
    const auto& mu = means[static_cast<std::size_t>(label)];
    const RowMatrix<float> train = draw(mu, factor, spec.train_per_class, spec.tail_dof, rng);
    const RowMatrix<float> test = draw(mu, factor, spec.test_per_class, spec.tail_dof, rng);

    ClassEntry e;
    e.label = label;
    e.train_file = "train/class_" + std::to_string(label) + ".f32";
    e.test_file = "test/class_" + std::to_string(label) + ".f32";
    e.train_count = static_cast<std::size_t>(spec.train_per_class);
    e.test_count = static_cast<std::size_t>(spec.test_per_class);
    write_feature_file(train, out_dir / e.train_file);
    write_feature_file(test, out_dir / e.test_file);
    m.sessions[static_cast<std::size_t>(session_of(label))].classes.push_back(std::move(e));
  }
  write_manifest(m, out_dir);
  validate_manifest(m);
  return m;
}

double nearest_mean_oracle(const FeatureSource& source, const std::vector<Label>& labels) {
  if (labels.empty()) throw EmptyInput("nearest_mean_oracle: no classes");
  std::vector<Vector<double>> means;
  for (Label l : labels) means.push_back(source.train(l)->cast<double>().colwise().mean().transpose());
  int correct = 0, total = 0;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const auto test = source.test(labels[k]);
    for (Index i = 0; i < test->rows(); ++i) {
      const Vector<double> x = test->row(i).cast<double>().transpose();
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < means.size(); ++j) {
        const double dist = (x - means[j]).squaredNorm();
        if (dist < best_d || (dist == best_d && labels[j] < labels[best])) {
          best = j;
          best_d = dist;
        }
      }
      correct += best == k;
      ++total;
    }
  }
  if (total == 0) throw EmptyTestSet("nearest_mean_oracle: no test rows");
  return 100.0 * correct / total;
}

double nearest_mean_oracle(const DatasetManifest& manifest) {
  return nearest_mean_oracle(ManifestSource(manifest), manifest.all_labels());
}

}  // namespace sfr
