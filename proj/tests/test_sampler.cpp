#include <cmath>

#include <doctest.h>

#include "sfr/sampler.hpp"
#include "test_util.hpp"

using namespace sfr;
using sfr::testing::gaussian_rows;

namespace {

ClassPrototype<double> gaussian_proto(Label label, Vector<double> mean, Matrix<double> cov) {
  ClassPrototype<double> p;
  p.label = label;
  p.mean = std::move(mean);
  p.cov = std::move(cov);
  p.sample_count = 100;
  return p;
}

ClassPrototype<double> iso(Label label, Index d, double center, double var = 1.0) {
  return gaussian_proto(label, Vector<double>::Constant(d, center), var * Matrix<double>::Identity(d, d));
}

/// Two-class head on x0 separating at x0 = 0: class 0 left, class 1 right.
LinearClassifier<double> sign_classifier(Index d) {
  LinearClassifier<double> clf(d, {0, 1});
  clf.weights(0, 0) = -1.0;
  clf.weights(1, 0) = 1.0;
  return clf;
}

}  // namespace

TEST_CASE("zero covariance samples the mean exactly") {
  const auto p = gaussian_proto(0, Vector<double>::LinSpaced(4, -1, 2), Matrix<double>::Zero(4, 4));
  Rng rng(3);
  const auto b = sample_gaussian(p, 25, rng);
  CHECK(b.size() == 25);
  for (Index i = 0; i < 25; ++i) CHECK(b.vectors.row(i) == p.mean.transpose());
}

TEST_CASE("same seed gives bit-identical batches") {
  const auto p = iso(0, 6, 1.0, 2.0);
  Rng a(99), b(99), c(100);
  const auto x = sample_gaussian(p, 50, a).vectors;
  CHECK(x == sample_gaussian(p, 50, b).vectors);
  CHECK(x != sample_gaussian(p, 50, c).vectors);
  CHECK_THROWS_AS(sample_gaussian(p, 0, a), EmptyInput);
}

TEST_CASE("sample moments match a correlated target") {
  Rng rng(4);
  const Index d = 5;
  const auto cov = sfr::testing::random_spd(d, rng);
  Vector<double> mu(d);
  mu << 1, -2, 0, 3, 0.5;
  const auto p = gaussian_proto(0, mu, cov);
  const auto x = sample_gaussian(p, 100000, rng).vectors;
  const Vector<double> m = x.colwise().mean().transpose();
  const RowMatrix<double> c = x.rowwise() - m.transpose();
  const Matrix<double> s = c.transpose() * c / static_cast<double>(x.rows() - 1);
  const Vector<double> sd = cov.diagonal().cwiseSqrt();
  CHECK(((m - mu).array() / sd.array()).abs().maxCoeff() < 0.02);
  CHECK((s - cov).norm() / cov.norm() < 0.03);
}

TEST_CASE("negative eigenvalues are clamped, not propagated") {
  Matrix<double> cov(2, 2);
  cov << 1, 0, 0, -1e-9;
  const auto p = gaussian_proto(0, Vector<double>::Zero(2), cov);
  Rng rng(1);
  const auto x = sample_gaussian(p, 200, rng).vectors;
  CHECK(x.allFinite());
  CHECK(x.col(1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("reduced samples stay in the class affine span") {
  Rng rng(21);
  const Index d = 10, r = 2, n = 60;
  Matrix<double> q(d, d);
  fill_standard_normal(q, rng);
  const Matrix<double> basis = Eigen::HouseholderQR<Matrix<double>>(q).householderQ() * Matrix<double>::Identity(d, r);
  RowMatrix<double> coef(n, r);
  fill_standard_normal(coef, rng);
  RowMatrix<double> x = coef * basis.transpose();
  x.rowwise() += Vector<double>::Constant(d, 5.0).transpose();
  const auto p = fit_prototype(0, x);
  REQUIRE(p.reduced());

  const auto s = sample_gaussian(p, 500, rng).vectors;
  const Matrix<double> proj = basis * basis.transpose();
  for (Index i = 0; i < s.rows(); ++i) {
    const Vector<double> off = s.row(i).transpose() - p.mean;
    CHECK((off - proj * off).norm() <= 1e-5 * off.norm());
  }
}

TEST_CASE("classifier filter") {
  const Index d = 2;
  const auto clf = sign_classifier(d);
  SUBCASE("identity when every row is predicted as the label") {
    SyntheticBatch<double> b{1, RowMatrix<double>::Constant(7, d, 3.0), Provenance::Replay};
    CHECK(filter_by_classifier(b, clf).vectors == b.vectors);
  }
  SUBCASE("empty when no row is") {
    SyntheticBatch<double> b{0, RowMatrix<double>::Constant(7, d, 3.0), Provenance::Replay};
    CHECK(filter_by_classifier(b, clf).empty());
  }
  SUBCASE("keeps exactly the rows on the correct side of the boundary") {
    RowMatrix<double> x(5, d);
    x << 1.0, 0, -2.0, 5, 0.5, -1, -0.1, 0, 4.0, 3;
    SyntheticBatch<double> b{1, x, Provenance::Replay};
    const auto out = filter_by_classifier(b, clf);
    std::vector<Index> expect;
    for (Index i = 0; i < 5; ++i)
      if (x(i, 0) > 0.0) expect.push_back(i);  // direct sign of the boundary
    REQUIRE(out.size() == static_cast<Index>(expect.size()));
    CHECK(out.size() == 3);
    for (std::size_t k = 0; k < expect.size(); ++k) CHECK(out.vectors.row(static_cast<Index>(k)) == x.row(expect[k]));
  }
  SUBCASE("label outside the head") {
    SyntheticBatch<double> b{7, RowMatrix<double>::Zero(1, d), Provenance::Replay};
    CHECK_THROWS_AS(filter_by_classifier(b, clf), UnknownLabel);
  }
}

TEST_CASE("replay yields exactly replay_per_class rows that pass the filter") {
  const Index d = 4;
  PrototypeStore<double> store;
  store.insert(iso(0, d, -10.0));
  store.insert(iso(1, d, 10.0));
  const auto clf = sign_classifier(d);
  SamplerConfig cfg;
  cfg.seed = 5;
  ReplayStats stats;
  const auto out = synthetic_replay(store, clf, cfg, &stats);
  REQUIRE(out.size() == 2);
  for (const auto& b : out) {
    CHECK(b.size() == cfg.replay_per_class);
    CHECK(b.provenance == Provenance::Replay);
    for (Label l : predict(clf, b.vectors)) CHECK(l == b.label);
  }
  CHECK(stats.total_unfiltered() == 0);
  CHECK(stats.rounds.at(0) == 1);

  const auto again = synthetic_replay(store, clf, cfg);
  CHECK(again[0].vectors == out[0].vectors);
  CHECK(again[1].vectors == out[1].vectors);
}

TEST_CASE("replay tops up across rounds when the filter is strict") {
  const Index d = 1;
  PrototypeStore<double> store;
  store.insert(iso(1, d, -1.5));  // about 7% of draws land on the right side
  const auto clf = sign_classifier(d);
  SamplerConfig cfg;
  cfg.seed = 8;
  ReplayStats stats;
  const auto out = synthetic_replay(store, clf, cfg, &stats);
  CHECK(out[0].size() == cfg.replay_per_class);
  CHECK(stats.rounds.at(1) > 1);
  CHECK(stats.total_unfiltered() == 0);
  CHECK((out[0].vectors.array() > 0.0).all());
}

TEST_CASE("adversarial classifier falls back to unfiltered fill") {
  const Index d = 3;
  PrototypeStore<double> store;
  store.insert(iso(1, d, 0.0));
  LinearClassifier<double> clf(d, {0, 1});
  clf.bias(0) = 100.0;  // always predicts 0
  SamplerConfig cfg;
  cfg.max_filter_rounds = 3;
  ReplayStats stats;
  const auto out = synthetic_replay(store, clf, cfg, &stats);
  CHECK(out[0].size() == cfg.replay_per_class);
  CHECK(stats.unfiltered_fill.at(1) == cfg.replay_per_class);
  CHECK(stats.rounds.at(1) == 3);
}

TEST_CASE("replay preconditions") {
  const auto clf = sign_classifier(2);
  SamplerConfig cfg;
  CHECK_THROWS_AS(synthetic_replay(PrototypeStore<double>(2), clf, cfg), EmptyInput);
  PrototypeStore<double> store;
  store.insert(iso(5, 2, 0.0));
  CHECK_THROWS_AS(synthetic_replay(store, clf, cfg), UnknownLabel);
  cfg.candidate_pool = 10;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.beta_decay = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("Mahalanobis filter") {
  SUBCASE("no other classes keeps everything") {
    SyntheticBatch<double> b{0, gaussian_rows(20, 3, 1), Provenance::Augment};
    CHECK(filter_by_mahalanobis(b, PrototypeStore<double>(3), 30.0).vectors == b.vectors);
  }
  SUBCASE("beta = 0 keeps everything") {
    PrototypeStore<double> others;
    others.insert(iso(1, 3, 0.0));
    SyntheticBatch<double> b{0, gaussian_rows(20, 3, 1), Provenance::Augment};
    CHECK(filter_by_mahalanobis(b, others, 0.0).vectors == b.vectors);
  }
  SUBCASE("1-d closed form") {
    PrototypeStore<double> others;
    others.insert(iso(1, 1, 10.0));
    RowMatrix<double> x(2, 1);
    x << 8.0, 5.0;
    PrototypeOptions opts;
    opts.shrinkage = 0.0;
    const auto d = min_mahalanobis(x, others, 0, opts);
    CHECK(d(0) == doctest::Approx(2.0));
    CHECK(d(1) == doctest::Approx(5.0));
    const auto out = filter_by_mahalanobis(SyntheticBatch<double>{0, x, Provenance::Augment}, others, 3.0, opts);
    REQUIRE(out.size() == 1);
    CHECK(out.vectors(0, 0) == 5.0);
  }
  SUBCASE("survivors satisfy the threshold elementwise") {
    PrototypeStore<double> others;
    others.insert(iso(1, 2, 1.0));
    others.insert(iso(2, 2, -1.0, 0.5));
    SyntheticBatch<double> b{0, 3.0 * gaussian_rows(500, 2, 6), Provenance::Augment};
    const auto out = filter_by_mahalanobis(b, others, 2.5);
    CHECK(out.size() > 0);
    CHECK(out.size() < b.size());
    const auto d = min_mahalanobis(out.vectors, others, 0);
    CHECK((d.array() >= 2.5).all());
  }
}

TEST_CASE("augmentation always returns real rows plus target_n synthetic rows") {
  const Index d = 6;
  PrototypeStore<double> others;
  for (Label l = 1; l <= 4; ++l) others.insert(iso(l, d, static_cast<double>(l)));
  const RowMatrix<double> real = gaussian_rows(5, d, 12);
  SamplerConfig cfg;
  cfg.seed = 3;
  const auto res = synthetic_augment(0, real, others, cfg, 100);
  CHECK(res.real_count == 5);
  CHECK(res.pool.size() == 105);
  CHECK(res.pool.vectors.topRows(5) == real);
  CHECK(res.pool.provenance == Provenance::Augment);
  CHECK(res.survivors >= 100);
  CHECK(res.final_beta < cfg.beta);  // 30 is far too strict here

  const auto again = synthetic_augment(0, real, others, cfg, 100);
  CHECK(again.pool.vectors == res.pool.vectors);
}

TEST_CASE("augmentation accepts everything once beta falls below the floor") {
  const Index d = 2;
  PrototypeStore<double> others;
  others.insert(iso(1, d, 0.0, 1e-8));  // a point mass on the same spot
  const RowMatrix<double> real = Eigen::MatrixXd::Zero(3, d) + 1e-9 * gaussian_rows(3, d, 1);
  SamplerConfig cfg;
  cfg.beta = 1e-2;
  cfg.beta_floor = 1e-3;
  const auto res = synthetic_augment(0, real, others, cfg, 250);
  CHECK(res.pool.size() == 253);
  CHECK(res.accepted_all);
  CHECK(res.survivors == cfg.candidate_pool);
}

TEST_CASE("with no rivals the calibrated prototype matches the naive one") {
  const Index d = 4;
  const RowMatrix<double> real = gaussian_rows(30, d, 2);
  SamplerConfig cfg;
  cfg.candidate_pool = 10000;
  cfg.replay_per_class = 100;
  cfg.beta = 0.0;
  const auto res = synthetic_augment(0, real, PrototypeStore<double>(d), cfg, 100);
  CHECK(res.survivors == 10000);
  const double scale = std::sqrt(res.naive.cov.trace() / static_cast<double>(d));
  CHECK((res.calibrated.mean - res.naive.mean).norm() <= 0.05 * scale);
}

TEST_CASE("augmentation preconditions") {
  SamplerConfig cfg;
  CHECK_THROWS_AS(synthetic_augment(0, RowMatrix<double>(0, 3), PrototypeStore<double>(3), cfg, 10), EmptyInput);
  CHECK_THROWS_AS(synthetic_augment(0, gaussian_rows(2, 3, 1), PrototypeStore<double>(3), cfg, 0), ValidationError);
}
