#include "sfr/protocol.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "sfr/errors.hpp"
#include "sfr/random.hpp"

namespace sfr {

namespace {

Stat stat_of(const std::vector<double>& v) {
  Stat s;
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

double percent(int correct, int total) { return total == 0 ? 0.0 : 100.0 * correct / total; }

void fill_rates(MetricsRecord& rec) {
  int c_all = 0, t_all = 0, c_new = 0, t_new = 0;
  const std::set<Label> novel(rec.novel.begin(), rec.novel.end());
  for (const auto& [label, cnt] : rec.counts) {
    c_all += cnt.correct;
    t_all += cnt.total;
    if (novel.count(label)) {
      c_new += cnt.correct;
      t_new += cnt.total;
    }
  }
  rec.G = percent(c_all, t_all);
  if (novel.empty() || t_new == 0) {
    rec.L = rec.G;
    rec.IFM = 0.0;
  } else {
    rec.L = percent(c_new, t_new);
    rec.IFM = compute_ifm(rec.L, rec.G);
  }
}

RowMatrix<double> rows_as_double(const RowMatrix<float>& rows) { return rows.cast<double>(); }

/// Rows the classifier itself assigns to `label`; all rows if none qualify.
RowMatrix<double> correctly_classified(const LinearClassifier<double>& clf, Label label, const RowMatrix<double>& rows,
                                       bool& fallback) {
  const auto pred = predict(clf, rows);
  std::vector<Index> keep;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == label) keep.push_back(static_cast<Index>(i));
  fallback = keep.empty();
  if (fallback) return rows;
  return select_rows(rows, keep);
}

struct TrialContext {
  const FeatureSource& source;
  const SessionPlan& plan;
  const SamplerConfig& sampler;
  const TrainConfig& train;
  const RunOptions& options;
  bool few_shot;
};

/// Training rows of one incremental class; K shots when few-shot, drawn with
/// the trial's shot stream and kept in file order.
RowMatrix<double> incremental_rows(const TrialContext& ctx, std::uint64_t trial_seed, Label label) {
  auto rows = ctx.source.train(label);
  if (!ctx.few_shot) return rows_as_double(*rows);
  const int k = *ctx.plan.shots;
  if (rows->rows() < k)
    throw InsufficientShots("class " + std::to_string(label) + " has " + std::to_string(rows->rows()) +
                            " training rows, fewer than " + std::to_string(k) + " shots");
  std::vector<Index> idx(static_cast<std::size_t>(rows->rows()));
  std::iota(idx.begin(), idx.end(), Index(0));
  Rng rng(derive_seed(trial_seed, "shots", {static_cast<std::uint64_t>(label)}));
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  return select_rows(rows_as_double(*rows), idx);
}

TrialReport run_trial(const TrialContext& ctx, std::size_t trial) {
  const std::uint64_t ts = ctx.plan.trials.at(trial);
  TrialReport rep;
  rep.seed = ts;
  rep.increments = trial_increments(ctx.plan, trial);
  const Index dim = ctx.source.dim();

  auto notify = [&](int session) {
    if (ctx.options.on_session_start) ctx.options.on_session_start(trial, session);
  };
  auto train_cfg = [&](int session) {
    TrainConfig c = ctx.train;
    c.seed = derive_seed(ts, "train", {static_cast<std::uint64_t>(session)});
    return c;
  };

  FeatureSet test(dim);
  std::vector<Label> seen;
  PrototypeStore<double> store(dim);
  LinearClassifier<double> clf;

  auto save_prototypes = [&](const std::vector<std::pair<Label, RowMatrix<double>>>& real) {
    for (const auto& [label, rows] : real) {
      bool fallback = false;
      const RowMatrix<double> kept = correctly_classified(clf, label, rows, fallback);
      if (fallback) ++rep.warnings["prototype_prefilter_empty"];
      auto proto = fit_prototype(label, kept, ctx.options.prototype);
      if (proto.reduced()) ++rep.warnings["prototype_reduced"];
      store.insert(std::move(proto));
    }
  };
  auto add_test = [&](const std::vector<Label>& labels) {
    for (Label l : labels) test.append(l, *ctx.source.test(l));
  };
  auto record = [&](MetricsRecord rec, int session) {
    rec.session = session;
    rep.sessions.push_back(std::move(rec));
  };

  // Session 0: plain supervised training on the base classes.
  notify(0);
  {
    std::vector<std::pair<Label, RowMatrix<double>>> real;
    Index total = 0;
    for (Label l : ctx.plan.base_classes) {
      real.emplace_back(l, rows_as_double(*ctx.source.train(l)));
      total += real.back().second.rows();
    }
    RowMatrix<double> x(total, dim);
    std::vector<Label> y;
    Index k = 0;
    for (const auto& [l, rows] : real) {
      x.middleRows(k, rows.rows()) = rows;
      y.insert(y.end(), static_cast<std::size_t>(rows.rows()), l);
      k += rows.rows();
    }
    clf = LinearClassifier<double>(dim, ctx.plan.base_classes, ctx.train.use_bias);
    clf = train(clf, x, y, {}, train_cfg(0));
    seen = ctx.plan.base_classes;
    add_test(seen);
    record(evaluate(clf, test, seen, {}), 0);
    save_prototypes(real);
  }

  for (std::size_t s = 1; s <= rep.increments.size(); ++s) {
    const int session = static_cast<int>(s);
    notify(session);
    const auto& novel = rep.increments[s - 1];

    SamplerConfig scfg = ctx.sampler;
    scfg.seed = derive_seed(ts, "sampler", {s});
    ReplayStats rstats;
    auto synthetic = synthetic_replay(store, clf, scfg, &rstats);
    if (int n = rstats.total_unfiltered()) rep.warnings["replay_unfiltered_fill"] += n;

    std::vector<std::pair<Label, RowMatrix<double>>> real;
    for (Label l : novel) real.emplace_back(l, incremental_rows(ctx, ts, l));

    if (ctx.options.augment) {
      // Other classes: every saved prototype plus the naive prototypes of
      // the classes introduced alongside this one. Augmented rows join the
      // rolling synthetic pool; the real shots stay the new-data stream.
      PrototypeStore<double> others = store;
      for (const auto& [l, rows] : real) others.insert(fit_prototype(l, rows, ctx.options.prototype));
      const Index target = ctx.options.augment_target.value_or(ctx.sampler.replay_per_class);
      for (const auto& [l, rows] : real) {
        auto res = synthetic_augment(l, rows, others, scfg, target, ctx.options.prototype);
        if (res.accepted_all) ++rep.warnings["augment_accept_all"];
        synthetic.push_back({l, res.pool.vectors.bottomRows(target), Provenance::Augment});
      }
    }

    Index total = 0;
    for (const auto& [l, rows] : real) total += rows.rows();
    RowMatrix<double> x(total, dim);
    std::vector<Label> y;
    Index k = 0;
    for (const auto& [l, rows] : real) {
      x.middleRows(k, rows.rows()) = rows;
      y.insert(y.end(), static_cast<std::size_t>(rows.rows()), l);
      k += rows.rows();
    }

    clf = expand_head(clf, novel);
    clf = train(clf, x, y, synthetic, train_cfg(session));

    seen.insert(seen.end(), novel.begin(), novel.end());
    add_test(novel);
    auto rec = evaluate(clf, test, seen, novel);
    if (rec.counts.size() != seen.size()) ++rep.warnings["classes_without_test_rows"];
    record(std::move(rec), session);
    save_prototypes(real);
  }

  if (ctx.options.on_trial_end) ctx.options.on_trial_end(trial, store, clf);
  return rep;
}

RunReport run_protocol(const FeatureSource& source, const SessionPlan& plan, const SamplerConfig& sampler,
                       const TrainConfig& train_cfg, const RunOptions& options, bool few_shot) {
  plan.validate();
  sampler.validate();
  train_cfg.validate();
  if (few_shot && (!plan.shots || *plan.shots < 1)) throw ValidationError("fscil: shots must be >= 1");

  const TrialContext ctx{source, plan, sampler, train_cfg, options, few_shot};
  const std::size_t n = plan.trials.size();
  std::vector<TrialReport> trials(n);

  const int jobs = std::max(1, std::min<int>(options.jobs, static_cast<int>(n)));
  if (jobs == 1) {
    for (std::size_t t = 0; t < n; ++t) trials[t] = run_trial(ctx, t);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j)
      pool.emplace_back([&] {
        for (std::size_t t; (t = next++) < n;) {
          try {
            trials[t] = run_trial(ctx, t);
          } catch (...) {
            std::lock_guard lock(mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }

  RunReport report;
  report.mode = few_shot ? "fscil" : "dfcil";
  report.augment = options.augment;
  report.shots = few_shot ? plan.shots : std::nullopt;
  report.replay_per_class = sampler.replay_per_class;
  report.trials = std::move(trials);
  report.recompute_aggregates();
  return report;
}

}  // namespace

void SessionPlan::validate() const {
  if (base_classes.empty()) throw ValidationError("plan: no base classes");
  if (trials.empty()) throw ValidationError("plan: no trials");
  std::set<Label> all(base_classes.begin(), base_classes.end());
  std::size_t count = base_classes.size();
  for (const auto& inc : increments) {
    if (inc.empty()) throw ValidationError("plan: empty increment");
    all.insert(inc.begin(), inc.end());
    count += inc.size();
  }
  if (all.size() != count) throw ValidationError("plan: class lists are not pairwise disjoint");
  if (shots && *shots < 1) throw ValidationError("plan: shots must be >= 1");
}

SessionPlan plan_from_manifest(const DatasetManifest& manifest, std::uint64_t seed, int trials,
                               bool permute_class_order) {
  if (trials < 1) throw ValidationError("plan: trials must be >= 1");
  SessionPlan plan;
  plan.base_classes = manifest.session_labels(0);
  for (std::size_t s = 1; s < manifest.sessions.size(); ++s) plan.increments.push_back(manifest.session_labels(s));
  for (int t = 0; t < trials; ++t) plan.trials.push_back(derive_seed(seed, "trial", {static_cast<std::uint64_t>(t)}));
  plan.permute_class_order = permute_class_order;
  return plan;
}

std::vector<std::vector<Label>> trial_increments(const SessionPlan& plan, std::size_t trial) {
  if (!plan.permute_class_order) return plan.increments;
  std::vector<Label> flat;
  for (const auto& inc : plan.increments) flat.insert(flat.end(), inc.begin(), inc.end());
  Rng rng(derive_seed(plan.trials.at(trial), "class-order"));
  std::shuffle(flat.begin(), flat.end(), rng);
  std::vector<std::vector<Label>> out;
  std::size_t k = 0;
  for (const auto& inc : plan.increments) {
    out.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(k),
                     flat.begin() + static_cast<std::ptrdiff_t>(k + inc.size()));
    k += inc.size();
  }
  return out;
}

double compute_ifm(double local, double global) {
  const double sum = local + global;
  if (sum <= 0.0) return 0.0;
  return 100.0 * std::abs(local - global) / sum;
}

double compute_sad(const std::vector<MetricsRecord>& sessions) {
  if (sessions.size() < 2)
    throw TooFewSessions("SAD needs at least 2 sessions, got " + std::to_string(sessions.size()));
  return sessions.front().G - sessions.back().G;
}

MetricsRecord evaluate(const LinearClassifier<double>& clf, const FeatureSet& test, const std::vector<Label>& seen,
                       const std::vector<Label>& novel, int* excluded) {
  std::set<Label> scope(seen.begin(), seen.end());
  scope.insert(novel.begin(), novel.end());
  MetricsRecord rec;
  rec.novel = novel;

  std::vector<Index> rows;
  for (std::size_t i = 0; i < test.size(); ++i)
    if (scope.count(test.labels[i])) rows.push_back(static_cast<Index>(i));
  if (excluded) *excluded = static_cast<int>(test.size() - rows.size());
  if (rows.empty()) throw EmptyTestSet("evaluate: no test rows for the seen classes");

  RowMatrix<double> x(static_cast<Index>(rows.size()), test.dim);
  for (std::size_t i = 0; i < rows.size(); ++i) x.row(static_cast<Index>(i)) = test.values.row(rows[i]).cast<double>();
  const auto pred = predict(clf, x);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Label truth = test.labels[static_cast<std::size_t>(rows[i])];
    auto& c = rec.counts[truth];
    ++c.total;
    if (pred[i] == truth) ++c.correct;
  }
  fill_rates(rec);
  return rec;
}

void RunReport::recompute_aggregates() {
  warnings.clear();
  std::size_t max_sessions = 0;
  for (auto& t : trials) {
    for (auto& rec : t.sessions) fill_rates(rec);
    const std::size_t n = t.sessions.size();
    max_sessions = std::max(max_sessions, n);
    const std::size_t first = n > 1 ? 1 : 0;
    double g = 0.0, ifm = 0.0;
    for (std::size_t s = first; s < n; ++s) {
      g += t.sessions[s].G;
      ifm += t.sessions[s].IFM;
    }
    const auto cnt = static_cast<double>(n - first);
    t.mean_G = n ? g / cnt : 0.0;
    t.mean_IFM = n ? ifm / cnt : 0.0;
    t.sad = n >= 2 ? std::optional<double>(compute_sad(t.sessions)) : std::nullopt;
    for (const auto& [k, v] : t.warnings) warnings[k] += v;
  }

  sessions.clear();
  for (std::size_t s = 0; s < max_sessions; ++s) {
    std::vector<double> g, l, ifm;
    for (const auto& t : trials)
      if (s < t.sessions.size()) {
        g.push_back(t.sessions[s].G);
        l.push_back(t.sessions[s].L);
        ifm.push_back(t.sessions[s].IFM);
      }
    sessions.push_back({static_cast<int>(s), stat_of(g), stat_of(l), stat_of(ifm)});
  }
  std::vector<double> mg, mi, sads;
  for (const auto& t : trials) {
    mg.push_back(t.mean_G);
    mi.push_back(t.mean_IFM);
    if (t.sad) sads.push_back(*t.sad);
  }
  mean_G = stat_of(mg);
  mean_IFM = stat_of(mi);
  sad = !trials.empty() && sads.size() == trials.size() ? std::optional<Stat>(stat_of(sads)) : std::nullopt;
}

RunReport run_dfcil(const FeatureSource& source, const SessionPlan& plan, const SamplerConfig& sampler,
                    const TrainConfig& train, const RunOptions& options) {
  SessionPlan full = plan;
  full.shots.reset();
  return run_protocol(source, full, sampler, train, options, false);
}

RunReport run_fscil(const FeatureSource& source, const SessionPlan& plan, const SamplerConfig& sampler,
                    const TrainConfig& train, const RunOptions& options) {
  if (!plan.shots) throw ValidationError("fscil: plan has no shot count");
  return run_protocol(source, plan, sampler, train, options, true);
}

std::vector<SweepPoint> replay_size_sweep(const FeatureSource& source, const SessionPlan& plan,
                                          const std::vector<int>& sizes, const SamplerConfig& sampler,
                                          const TrainConfig& train, const RunOptions& options) {
  if (sizes.empty()) throw ValidationError("sweep: no sizes");
  std::vector<SweepPoint> out;
  for (int size : sizes) {
    SamplerConfig cfg = sampler;
    cfg.replay_per_class = size;
    cfg.candidate_pool = std::max(cfg.candidate_pool, size);
    RunOptions opts = options;
    if (!opts.augment_target) opts.augment_target = sampler.replay_per_class;
    out.push_back({size, plan.shots ? run_fscil(source, plan, cfg, train, opts)
                                    : run_dfcil(source, plan, cfg, train, opts)});
  }
  return out;
}

double joint_oracle_accuracy(const FeatureSource& source, const std::vector<Label>& labels, const TrainConfig& train_cfg) {
  const Index dim = source.dim();
  FeatureSet tr(dim), te(dim);
  for (Label l : labels) {
    tr.append(l, *source.train(l));
    te.append(l, *source.test(l));
  }
  TrainConfig cfg = train_cfg;
  cfg.seed = derive_seed(train_cfg.seed, "joint-oracle");
  LinearClassifier<double> clf(dim, labels, cfg.use_bias);
  const RowMatrix<double> x = tr.values.cast<double>();
  clf = train(clf, x, tr.labels, {}, cfg);
  return evaluate(clf, te, labels, {}).G;
}

}  // namespace sfr
