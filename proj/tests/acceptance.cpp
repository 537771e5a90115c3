// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <Eigen/LU>
#include <Eigen/QR>
#include <json.hpp>

#include "sfr/benchgen.hpp"
#include "sfr/protocol.hpp"
#include "sfr/report_io.hpp"
#include "sfr/sampler.hpp"
#include "test_util.hpp"

using namespace sfr;
using nlohmann::json;
using sfr::testing::slurp;
using sfr::testing::spit;
using sfr::testing::TempDir;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

std::string quote(const std::string& s) { return "'" + s + "'"; }

int cli(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string(SFR_CLI_PATH) + " " + args + " >" + quote(log.string()) + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

/// 20 classes, d = 64, 8 base + 6 x 2 increments.
void write_bench(const std::filesystem::path& dir, double separation, std::optional<int> rank = std::nullopt,
                 Index dim = 64) {
  json spec = {{"dim", dim},         {"n_classes", 20},     {"train_per_class", 100}, {"test_per_class", 50},
               {"separation", separation}, {"base_classes", 8}, {"increment_size", 2},  {"n_increments", 6},
               {"seed", 1}};
  if (rank) spec["rank"] = *rank;
  spit(dir.parent_path() / (dir.filename().string() + ".spec.json"), spec.dump());
  generate(bench_spec_from_json(spec.dump()), dir);
}

void write_config(const std::filesystem::path& path, const std::filesystem::path& dataset, int trials,
                  std::uint64_t seed) {
  spit(path, json{{"dataset", dataset.string()}, {"seed", seed}, {"trials", trials}}.dump(2));
}

json read_json(const std::filesystem::path& p) { return json::parse(slurp(p)); }

/// Object keys and array lengths, recursively; values and the contents of
/// free-form maps (warnings, config) are ignored.
json shape(const json& j, const std::string& key = "") {
  if (key == "warnings" || key == "config") return "map";
  if (j.is_object()) {
    json out = json::object();
    for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = shape(it.value(), it.key());
    return out;
  }
  if (j.is_array()) {
    json out = json::array();
    for (const auto& e : j) out.push_back(shape(e));
    return out;
  }
  return j.is_number() ? json("number") : json(j.type_name());
}

// 1 -----------------------------------------------------------------------
Outcome sampler_moments() {
  const auto t0 = Clock::now();
  ClassPrototype<double> p;
  p.mean = Vector<double>::Zero(8);
  p.cov = Matrix<double>::Identity(8, 8);
  p.sample_count = 1;
  Rng rng(derive_seed(1, "acceptance-moments"));
  const auto x = sample_gaussian(p, 50000, rng).vectors;
  const double secs = seconds_since(t0);

  // Independent two-pass moments.
  std::vector<double> mean(8, 0.0);
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < 8; ++j) mean[static_cast<std::size_t>(j)] += x(i, j);
  double inf = 0.0;
  for (double& m : mean) {
    m /= static_cast<double>(x.rows());
    inf = std::max(inf, std::abs(m));
  }
  double err2 = 0.0;
  for (Index a = 0; a < 8; ++a)
    for (Index b = 0; b < 8; ++b) {
      double s = 0.0;
      for (Index i = 0; i < x.rows(); ++i)
        s += (x(i, a) - mean[static_cast<std::size_t>(a)]) * (x(i, b) - mean[static_cast<std::size_t>(b)]);
      s /= static_cast<double>(x.rows() - 1);
      const double target = a == b ? 1.0 : 0.0;
      err2 += (s - target) * (s - target);
    }
  const double rel = std::sqrt(err2) / std::sqrt(8.0);
  return {inf < 0.05 && rel < 0.05 && secs < 5.0,
          "|mean|inf=" + fmt(inf) + " (<0.05), cov rel err=" + fmt(rel) + " (<0.05), " + fmt(secs, 3) + "s (<5s)"};
}

// 2 -----------------------------------------------------------------------
Outcome mahalanobis_oracle() {
  Rng rng(derive_seed(2, "acceptance-mahalanobis"));
  std::uniform_int_distribution<int> dims(1, 32);
  PrototypeOptions opts;
  opts.shrinkage = 0.0;
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Index d = dims(rng);
    ClassPrototype<double> p;
    p.cov = sfr::testing::random_spd(d, rng);
    p.mean.resize(d);
    fill_standard_normal(p.mean, rng);
    p.sample_count = d + 1;
    Vector<double> z(d);
    fill_standard_normal(z, rng);
    const double got = MahalanobisMetric<double>(p, opts).squared(z);
    const Vector<double> diff = z - p.mean;
    const double want = diff.dot(p.cov.fullPivLu().solve(diff));
    worst = std::max(worst, std::abs(got - want) / want);
  }
  return {worst <= 1e-8, "100 SPD covariances, d<=32, max rel err=" + fmt(worst) + " (<=1e-8)"};
}

// 3 -----------------------------------------------------------------------
Outcome gradient_check() {
  Rng rng(derive_seed(3, "acceptance-gradient"));
  std::uniform_int_distribution<Index> dd(1, 16), cc(2, 8), nn(1, 32);
  const double h = 1e-4;
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const Index d = dd(rng), c = cc(rng), n = nn(rng);
    std::vector<Label> labels;
    for (Index k = 0; k < c; ++k) labels.push_back(static_cast<Label>(k));
    LinearClassifier<double> clf(d, labels);
    fill_standard_normal(clf.weights, rng);
    fill_standard_normal(clf.bias, rng);
    RowMatrix<double> x(n, d);
    fill_standard_normal(x, rng);
    std::uniform_int_distribution<Label> pick(0, static_cast<Label>(c - 1));
    std::vector<Label> y;
    for (Index i = 0; i < n; ++i) y.push_back(pick(rng));

    const auto g = loss_and_grad(clf, x, y);
    auto probe = [&](double analytic, double& param) {
      const double keep = param;
      param = keep + h;
      const double up = loss_and_grad(clf, x, y).loss;
      param = keep - h;
      const double down = loss_and_grad(clf, x, y).loss;
      param = keep;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-8));
    };
    for (Index r = 0; r < c; ++r) {
      for (Index k = 0; k < d; ++k) probe(g.grad_weights(r, k), clf.weights(r, k));
      probe(g.grad_bias(r), clf.bias(r));
    }
  }
  return {worst < 1e-4, "50 instances, max rel err=" + fmt(worst) + " (<1e-4)"};
}

// 4 -----------------------------------------------------------------------
Outcome ifm_sad() {
  const double ifm = compute_ifm(60.0, 40.0);
  std::vector<MetricsRecord> row;
  for (double g : {75.5, 72.2, 69.1, 65.9, 63.4, 61.0, 59.5}) row.push_back({0, g, g, 0.0, {}, {}});
  const double sad = compute_sad(row);
  return {ifm == 20.0 && sad == 16.0, "IFM(60,40)=" + fmt(ifm, 17) + " (==20), SAD(75.5..59.5)=" + fmt(sad, 17) + " (==16)"};
}

// 5 -----------------------------------------------------------------------
Outcome dfcil_end_to_end(const TempDir& dir, json& report_out) {
  write_config(dir / "c5.json", dir / "bench8", 3, 7);
  const auto t0 = Clock::now();
  const int code = cli("run --config " + quote((dir / "c5.json").string()) + " --out " + quote((dir / "r5").string()),
                       dir / "r5.log");
  const double secs = seconds_since(t0);
  if (code != 0) return {false, "run exited with " + std::to_string(code)};
  const auto report = load_report(dir / "r5/report.json");
  report_out = read_json(dir / "r5/report.json");

  const ManifestSource src(load_manifest(dir / "bench8"));
  TrainConfig oracle_cfg;
  oracle_cfg.seed = 7;
  const double oracle = joint_oracle_accuracy(src, src.manifest().all_labels(), oracle_cfg);
  const double final_g = report.sessions.back().G.mean;
  const double ifm = report.mean_IFM.mean;
  const double gap = std::abs(oracle - final_g);
  return {gap <= 3.0 && ifm < 10.0 && secs < 60.0,
          "final G=" + fmt(final_g) + " vs joint oracle " + fmt(oracle) + " (gap " + fmt(gap, 3) +
              " <=3), mean IFM=" + fmt(ifm, 3) + " (<10), " + fmt(secs, 3) + "s (<60s)"};
}

// 6 -----------------------------------------------------------------------
Outcome replay_sweep(const TempDir& dir) {
  write_config(dir / "c6.json", dir / "bench8", 3, 7);
  const int code = cli("sweep --config " + quote((dir / "c6.json").string()) + " --sizes 10,20,50,100 --out " +
                           quote((dir / "r6").string()),
                       dir / "r6.log");
  if (code != 0) return {false, "sweep exited with " + std::to_string(code)};
  const auto doc = read_json(dir / "r6/sweep.json");
  std::map<int, double> g;
  for (const auto& p : doc.at("points")) g[p.at("size").get<int>()] = p.at("report").at("aggregate").at("mean_G").at("mean").get<double>();
  std::string series;
  for (const auto& [s, v] : g) series += (series.empty() ? "" : ", ") + std::to_string(s) + ":" + fmt(v);
  return {g.at(100) >= g.at(10), "mean G by size {" + series + "}; G@100 >= G@10"};
}

// 7 -----------------------------------------------------------------------
Outcome fscil_augmentation(const TempDir& dir) {
  write_config(dir / "c7.json", dir / "bench4", 5, 11);
  const std::string base = "fscil --config " + quote((dir / "c7.json").string()) + " --shots 5";
  if (int code = cli(base + " --augment --out " + quote((dir / "r7a").string()), dir / "r7a.log"))
    return {false, "fscil --augment exited with " + std::to_string(code)};
  if (int code = cli(base + " --out " + quote((dir / "r7n").string()), dir / "r7n.log"))
    return {false, "fscil exited with " + std::to_string(code)};
  const auto a = load_report(dir / "r7a/report.json");
  const auto n = load_report(dir / "r7n/report.json");
  const double dg = a.mean_G.mean - n.mean_G.mean;
  return {a.mean_IFM.mean <= n.mean_IFM.mean && dg >= -1.0,
          "IFM " + fmt(a.mean_IFM.mean, 3) + " (aug) <= " + fmt(n.mean_IFM.mean, 3) + " (none); G " +
              fmt(a.mean_G.mean, 3) + " vs " + fmt(n.mean_G.mean, 3) + " (diff " + fmt(dg, 2) + " >= -1)"};
}

// 8 -----------------------------------------------------------------------
Outcome degenerate_rank(const TempDir& dir, const json& full_rank_report) {
  const auto manifest = load_manifest(dir / "bench_rank");
  const ManifestSource src(manifest);
  const auto plan = plan_from_manifest(manifest, 7, 3, true);

  PrototypeStore<double> final_store;
  RunOptions opts;
  opts.on_trial_end = [&](std::size_t t, const PrototypeStore<double>& store, const LinearClassifier<double>&) {
    if (t == 0) final_store = store;
  };
  run_dfcil(src, plan, SamplerConfig{}, TrainConfig{}, opts);

  std::size_t reduced = 0;
  double worst = 0.0;
  Rng rng(derive_seed(8, "acceptance-rank"));
  for (const auto& [label, proto] : final_store) {
    reduced += proto.reduced() && proto.rank() == 3;
    // Class affine span from the raw training rows, by an independent QR.
    const RowMatrix<double> x = src.train(label)->cast<double>();
    const Vector<double> mu = x.colwise().mean().transpose();
    const Matrix<double> centered = (x.rowwise() - mu.transpose()).transpose();
    Eigen::ColPivHouseholderQR<Matrix<double>> qr(centered);
    qr.setThreshold(1e-7);
    const Index r = qr.rank();
    const Matrix<double> q = Matrix<double>(qr.householderQ()).leftCols(r);
    const auto samples = sample_gaussian(proto, 200, rng).vectors;
    for (Index i = 0; i < samples.rows(); ++i) {
      const Vector<double> off = samples.row(i).transpose() - mu;
      const Vector<double> res = off - q * (q.transpose() * off);
      worst = std::max(worst, res.norm() / off.norm());
    }
  }

  write_config(dir / "c8.json", dir / "bench_rank", 3, 7);
  const int code = cli("run --config " + quote((dir / "c8.json").string()) + " --out " + quote((dir / "r8").string()),
                       dir / "r8.log");
  const bool same_shape = code == 0 && shape(read_json(dir / "r8/report.json")) == shape(full_rank_report);
  return {reduced == 20 && worst <= 1e-5 && same_shape,
          std::to_string(reduced) + "/20 classes reduced to rank 3, max span residual=" + fmt(worst) +
              " (<=1e-5), report structure " + (same_shape ? "identical" : "DIFFERS")};
}

// 9 -----------------------------------------------------------------------
Outcome determinism(const TempDir& dir) {
  write_config(dir / "c9.json", dir / "bench8", 2, 99);
  const std::string args = "run --config " + quote((dir / "c9.json").string()) + " --out " + quote((dir / "r9").string());
  if (int code = cli(args, dir / "r9a.log")) return {false, "first run exited with " + std::to_string(code)};
  const std::string first = slurp(dir / "r9/report.json");
  if (int code = cli(args, dir / "r9b.log")) return {false, "second run exited with " + std::to_string(code)};
  const std::string second = slurp(dir / "r9/report.json");
  return {!first.empty() && first == second,
          "report.json " + std::to_string(first.size()) + " bytes, " + (first == second ? "identical" : "DIFFERENT")};
}

// 10 ----------------------------------------------------------------------
/// Tracks every training block handed out and the session it belongs to.
class AuditedSource final : public FeatureSource {
 public:
  AuditedSource(const FeatureSource& inner, const SessionPlan& plan, std::size_t trial) : inner_(inner) {
    for (Label l : plan.base_classes) owner_[l] = 0;
    const auto inc = trial_increments(plan, trial);
    for (std::size_t s = 0; s < inc.size(); ++s)
      for (Label l : inc[s]) owner_[l] = static_cast<int>(s + 1);
  }
  Index dim() const override { return inner_.dim(); }
  std::shared_ptr<const RowMatrix<float>> train(Label label) const override {
    ++reads;
    if (owner_.at(label) != session_) ++out_of_session;
    auto mine = std::make_shared<const RowMatrix<float>>(*inner_.train(label));
    handed_.push_back({session_, mine});
    return mine;
  }
  std::shared_ptr<const RowMatrix<float>> test(Label label) const override { return inner_.test(label); }
  void enter(int s) {
    for (const auto& [session, w] : handed_)
      if (session < s && !w.expired()) ++still_alive;
    session_ = s;
  }

  mutable int reads = 0;
  mutable int out_of_session = 0;
  int still_alive = 0;

 private:
  const FeatureSource& inner_;
  std::map<Label, int> owner_;
  int session_ = -1;
  mutable std::vector<std::pair<int, std::weak_ptr<const RowMatrix<float>>>> handed_;
};

Outcome data_free_contract(const TempDir& dir) {
  const auto manifest = load_manifest(dir / "bench8");
  const ManifestSource src(manifest);
  int reads = 0, bad = 0, alive = 0;
  for (bool few_shot : {false, true}) {
    auto plan = plan_from_manifest(manifest, 3, 2, !few_shot);
    if (few_shot) plan.shots = 5;
    for (std::size_t t = 0; t < plan.trials.size(); ++t) {
      SessionPlan one = plan;
      one.trials = {plan.trials[t]};
      AuditedSource audited(src, one, 0);
      RunOptions opts;
      opts.augment = few_shot;
      opts.on_session_start = [&](std::size_t, int s) { audited.enter(s); };
      if (few_shot)
        run_fscil(audited, one, SamplerConfig{}, TrainConfig{}, opts);
      else
        run_dfcil(audited, one, SamplerConfig{}, TrainConfig{}, opts);
      audited.enter(1 << 20);
      reads += audited.reads;
      bad += audited.out_of_session;
      alive += audited.still_alive;
    }
  }
  // Negative control: a retained block must be caught.
  const auto plan = plan_from_manifest(manifest, 3, 1, false);
  AuditedSource control(src, plan, 0);
  control.enter(0);
  auto held = control.train(0);
  control.enter(1);
  const bool control_caught = control.still_alive == 1;

  return {reads == 4 * 20 && bad == 0 && alive == 0 && control_caught,
          std::to_string(reads) + " training reads over 4 runs, " + std::to_string(bad) + " out of session, " +
              std::to_string(alive) + " blocks alive after their session; leak control " +
              (control_caught ? "detected" : "MISSED")};
}

}  // namespace

int main() {
  TempDir dir;
  write_bench(dir / "bench8", 8.0);
  write_bench(dir / "bench4", 4.0);
  write_bench(dir / "bench_rank", 8.0, 3, 16);

  json full_rank_report;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"sampler moments", [] { return sampler_moments(); }},
      {"Mahalanobis dense-solve oracle", [] { return mahalanobis_oracle(); }},
      {"classifier gradient check", [] { return gradient_check(); }},
      {"IFM/SAD arithmetic", [] { return ifm_sad(); }},
      {"DFCIL end to end vs joint oracle", [&] { return dfcil_end_to_end(dir, full_rank_report); }},
      {"replay buffer sweep", [&] { return replay_sweep(dir); }},
      {"FSCIL augmentation vs none", [&] { return fscil_augmentation(dir); }},
      {"degenerate-rank path", [&] { return degenerate_rank(dir, full_rank_report); }},
      {"determinism of run", [&] { return determinism(dir); }},
      {"data-free contract", [&] { return data_free_contract(dir); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] %2zu. %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
