// Command-line front end for the synthetic feature replay engine.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sfr/benchgen.hpp"
#include "sfr/errors.hpp"
#include "sfr/feature_store.hpp"
#include "sfr/normality.hpp"
#include "sfr/protocol.hpp"
#include "sfr/report_io.hpp"
#include "sfr/run_config.hpp"
#include "sfr/store_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct RunFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<int> trials;
};

void add_run_flags(CLI::App* app, RunFlags& f) {
  app->add_option("--config", f.config, "Run config JSON")->required()->check(CLI::ExistingFile);
  app->add_option("--out", f.out, "Output directory (overrides output_dir)");
  app->add_option("--seed", f.seed, "Master seed (overrides seed)");
  app->add_option("--jobs", f.jobs, "Trials run in parallel")->check(CLI::PositiveNumber);
  app->add_option("--trials", f.trials, "Number of trials (overrides trials)")->check(CLI::PositiveNumber);
}

sfr::RunConfig resolve_config(const RunFlags& f) {
  auto cfg = sfr::load_run_config(f.config);
  if (!f.out.empty()) cfg.output_dir = f.out;
  if (f.seed) cfg.seed = *f.seed;
  if (f.jobs) cfg.jobs = *f.jobs;
  if (f.trials) cfg.trials = *f.trials;
  return cfg;
}

void write_models(const sfr::RunConfig& cfg, sfr::RunOptions& opts) {
  const fs::path dir = cfg.output_dir;
  opts.on_trial_end = [dir](std::size_t trial, const sfr::PrototypeStore<double>& store,
                            const sfr::LinearClassifier<double>& clf) {
    sfr::write_archive({store, clf}, dir / ("model_trial" + std::to_string(trial) + ".bin"));
  };
}

int run_experiment(const RunFlags& flags, std::optional<int> shots, bool augment) {
  auto cfg = resolve_config(flags);
  if (shots) cfg.shots = shots;
  if (augment) cfg.augment = true;
  const bool few_shot = shots.has_value();
  if (cfg.augment && !few_shot && !cfg.shots) {
    // Augmentation is defined for few-shot runs; full-shot runs ignore it.
    cfg.augment = false;
  }

  const auto manifest = sfr::load_manifest(cfg.dataset);
  const sfr::ManifestSource source(manifest);
  const auto plan = sfr::make_plan(cfg, manifest, few_shot);
  auto opts = sfr::make_options(cfg);
  fs::create_directories(cfg.output_dir);
  write_models(cfg, opts);

  const auto report = few_shot ? sfr::run_fscil(source, plan, cfg.sampler, cfg.train, opts)
                               : sfr::run_dfcil(source, plan, cfg.sampler, cfg.train, opts);
  sfr::write_text(cfg.output_dir / "report.json", sfr::report_to_json(report, sfr::run_config_to_json(cfg)).dump(2) + "\n");
  sfr::write_text(cfg.output_dir / "report.csv", sfr::report_csv(report));
  std::cout << sfr::format_table(report, few_shot ? (cfg.augment ? "SFR-A" : "SFR") : "SFR");
  for (const auto& [k, v] : report.warnings) std::cerr << "warning: " << k << " = " << v << '\n';
  return 0;
}

int run_sweep(const RunFlags& flags, const std::vector<int>& sizes, std::optional<int> shots, bool augment) {
  auto cfg = resolve_config(flags);
  if (!sizes.empty()) cfg.sweep_sizes = sizes;
  if (shots) cfg.shots = shots;
  if (augment) cfg.augment = true;
  const bool few_shot = cfg.shots.has_value();
  if (!few_shot) cfg.augment = false;

  const auto manifest = sfr::load_manifest(cfg.dataset);
  const sfr::ManifestSource source(manifest);
  const auto plan = sfr::make_plan(cfg, manifest, few_shot);
  const auto opts = sfr::make_options(cfg);
  fs::create_directories(cfg.output_dir);

  const auto points = sfr::replay_size_sweep(source, plan, cfg.sweep_sizes, cfg.sampler, cfg.train, opts);
  json doc;
  doc["schema_version"] = sfr::kReportSchemaVersion;
  doc["config"] = sfr::run_config_to_json(cfg);
  doc["points"] = json::array();
  for (const auto& p : points) doc["points"].push_back({{"size", p.size}, {"report", sfr::report_to_json(p.report)}});
  sfr::write_text(cfg.output_dir / "sweep.json", doc.dump(2) + "\n");
  sfr::write_text(cfg.output_dir / "sweep.csv", sfr::sweep_csv(points));
  for (const auto& p : points) std::cout << sfr::format_table(p.report, std::to_string(p.size));
  return 0;
}

std::vector<int> parse_sizes(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size() || v < 1) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw sfr::ValidationError("--sizes: bad entry '" + item + "'");
    }
  }
  if (out.empty()) throw sfr::ValidationError("--sizes: empty list");
  return out;
}

int ingest(const std::string& train_csv, const std::string& test_csv, int base, int increment, const fs::path& out) {
  const auto train = sfr::read_csv_features(train_csv);
  const auto test = sfr::read_csv_features(test_csv);
  if (train.dim != test.dim && !test.empty())
    throw sfr::ValidationError("ingest: train has dim " + std::to_string(train.dim) + ", test has dim " +
                               std::to_string(test.dim));
  const auto labels = train.label_set();
  if (base < 1 || static_cast<std::size_t>(base) > labels.size())
    throw sfr::ValidationError("ingest: --base must lie in [1, number of classes]");
  if (increment < 1) throw sfr::ValidationError("ingest: --increment must be >= 1");
  for (sfr::Label l : test.label_set())
    if (!std::binary_search(labels.begin(), labels.end(), l))
      throw sfr::ValidationError("ingest: test class " + std::to_string(l) + " has no training rows");

  sfr::DatasetManifest m;
  m.dim = train.dim;
  m.root = out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t session = i < static_cast<std::size_t>(base) ? 0 : 1 + (i - base) / increment;
    if (m.sessions.size() <= session) m.sessions.push_back({static_cast<int>(session), {}});
    const sfr::Label l = labels[i];
    sfr::ClassEntry e;
    e.label = l;
    e.train_file = "train/class_" + std::to_string(l) + ".f32";
    e.test_file = "test/class_" + std::to_string(l) + ".f32";
    const auto tr = train.rows_of(l);
    const auto te = test.empty() ? sfr::RowMatrix<float>(0, train.dim) : test.rows_of(l);
    e.train_count = static_cast<std::size_t>(tr.rows());
    e.test_count = static_cast<std::size_t>(te.rows());
    sfr::write_feature_file(tr, out / e.train_file);
    sfr::write_feature_file(te, out / e.test_file);
    m.sessions[session].classes.push_back(std::move(e));
  }
  sfr::write_manifest(m, out);
  sfr::validate_manifest(m);
  for (const auto& w : m.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << "wrote " << labels.size() << " classes in " << m.sessions.size() << " sessions to " << out.string()
            << '\n';
  return 0;
}

int normality(const fs::path& data, sfr::Label label, int k, const std::string& out) {
  const auto manifest = sfr::load_manifest(data);
  const auto labels = manifest.all_labels();
  if (std::find(labels.begin(), labels.end(), label) == labels.end())
    throw sfr::ValidationError("--label: class " + std::to_string(label) + " is not in the dataset");
  const sfr::ManifestSource source(manifest);
  const auto rows = source.train(label);
  const auto report = sfr::principal_component_report(rows->cast<double>(), k);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';

  std::ostringstream csv;
  csv.precision(17);
  csv << "component,variance,index,projection,theoretical_quantile,sample_quantile\n";
  for (const auto& pc : report.components)
    for (std::size_t i = 0; i < pc.projections.size(); ++i)
      csv << pc.index << ',' << pc.variance << ',' << i << ',' << pc.projections[i] << ',' << pc.qq_points[i].first
          << ',' << pc.qq_points[i].second << '\n';
  if (out.empty() || out == "-")
    std::cout << csv.str();
  else
    sfr::write_text(out, csv.str());
  return 0;
}

int proto_export(const fs::path& data, std::optional<int> session, const fs::path& out,
                 const sfr::PrototypeOptions& opts) {
  const auto manifest = sfr::load_manifest(data);
  const sfr::ManifestSource source(manifest);
  std::vector<sfr::Label> labels;
  if (session) {
    if (*session < 0 || static_cast<std::size_t>(*session) >= manifest.sessions.size())
      throw sfr::ValidationError("--session out of range");
    labels = manifest.session_labels(static_cast<std::size_t>(*session));
  } else {
    labels = manifest.all_labels();
  }
  sfr::ModelArchive archive{sfr::PrototypeStore<double>(manifest.dim), std::nullopt};
  for (sfr::Label l : labels) archive.store.insert(sfr::fit_prototype(l, source.train(l)->cast<double>(), opts));
  sfr::write_archive(archive, out);
  std::cout << "wrote " << labels.size() << " prototypes to " << out.string() << '\n';
  return 0;
}

int proto_import(const fs::path& in, const std::string& out) {
  const auto archive = sfr::read_archive(in);
  json doc;
  doc["dim"] = archive.store.dim();
  doc["prototypes"] = json::array();
  for (const auto& [label, p] : archive.store)
    doc["prototypes"].push_back({{"label", label},
                                 {"sample_count", p.sample_count},
                                 {"reduced", p.reduced()},
                                 {"rank", p.rank()},
                                 {"mean", std::vector<double>(p.mean.data(), p.mean.data() + p.mean.size())}});
  if (archive.classifier) {
    doc["classifier"] = {{"labels", archive.classifier->labels}, {"use_bias", archive.classifier->use_bias}};
  }
  if (out.empty() || out == "-")
    std::cout << doc.dump(2) << '\n';
  else
    sfr::write_text(out, doc.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic feature replay for class-incremental learning over frozen embeddings"};
  app.require_subcommand(1);

  auto* ingest_cmd = app.add_subcommand("ingest", "Convert labeled CSV features into a binary dataset");
  std::string train_csv, test_csv, ingest_out;
  int base = 0, increment = 1;
  ingest_cmd->add_option("--train", train_csv, "Training CSV (label,f0,...)")->required()->check(CLI::ExistingFile);
  ingest_cmd->add_option("--test", test_csv, "Test CSV (label,f0,...)")->required()->check(CLI::ExistingFile);
  ingest_cmd->add_option("--base", base, "Number of base classes (smallest labels)")->required();
  ingest_cmd->add_option("--increment", increment, "Classes per incremental session");
  ingest_cmd->add_option("--out", ingest_out, "Output dataset directory")->required();

  auto* gen_cmd = app.add_subcommand("gen-bench", "Generate a synthetic Gaussian-mixture benchmark");
  std::string spec_path, gen_out;
  gen_cmd->add_option("--spec", spec_path, "Benchmark spec JSON")->required()->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen_out, "Output dataset directory")->required();

  RunFlags run_flags, fscil_flags, sweep_flags;
  auto* run_cmd = app.add_subcommand("run", "Data-free class-incremental run");
  add_run_flags(run_cmd, run_flags);

  auto* fscil_cmd = app.add_subcommand("fscil", "Few-shot class-incremental run");
  add_run_flags(fscil_cmd, fscil_flags);
  int shots = 0;
  bool augment = false;
  fscil_cmd->add_option("--shots", shots, "Training rows per incremental class")->required()->check(CLI::PositiveNumber);
  fscil_cmd->add_flag("--augment", augment, "Enable synthetic feature augmentation of new classes");

  auto* sweep_cmd = app.add_subcommand("sweep", "Replay buffer size sweep");
  add_run_flags(sweep_cmd, sweep_flags);
  std::string sizes_text;
  std::optional<int> sweep_shots;
  bool sweep_augment = false;
  sweep_cmd->add_option("--sizes", sizes_text, "Comma-separated replay sizes, e.g. 10,20,50,100");
  sweep_cmd->add_option("--shots", sweep_shots, "Few-shot sweep with this many shots")->check(CLI::PositiveNumber);
  sweep_cmd->add_flag("--augment", sweep_augment, "Augment new classes (few-shot only)");

  auto* report_cmd = app.add_subcommand("report", "Print a report.json as a per-task table");
  std::string report_in, report_name = "SFR";
  report_cmd->add_option("--in", report_in, "report.json")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("--name", report_name, "Row label");

  auto* norm_cmd = app.add_subcommand("normality", "Principal-component projections and Q-Q data of one class");
  std::string norm_data, norm_out;
  sfr::Label norm_label = 0;
  int norm_k = 6;
  norm_cmd->add_option("--data", norm_data, "Dataset directory or manifest")->required();
  norm_cmd->add_option("--label", norm_label, "Class label")->required();
  norm_cmd->add_option("--k", norm_k, "Number of components")->check(CLI::PositiveNumber);
  norm_cmd->add_option("--out", norm_out, "CSV output (default stdout)");

  auto* proto_cmd = app.add_subcommand("proto", "Export or import prototype stores");
  proto_cmd->require_subcommand(1);
  auto* export_cmd = proto_cmd->add_subcommand("export", "Fit prototypes from a dataset's training files");
  std::string export_data, export_out, export_path = "auto";
  std::optional<int> export_session;
  double export_shrinkage = 1e-6;
  export_cmd->add_option("--data", export_data, "Dataset directory or manifest")->required();
  export_cmd->add_option("--out", export_out, "Archive path")->required();
  export_cmd->add_option("--session", export_session, "Only classes of this session");
  export_cmd->add_option("--shrinkage", export_shrinkage, "Relative shrinkage floor");
  export_cmd->add_option("--covariance-path", export_path, "auto, shrink or reduce")
      ->check(CLI::IsMember({"auto", "shrink", "reduce"}));
  auto* import_cmd = proto_cmd->add_subcommand("import", "Read an archive and print a JSON summary");
  std::string import_in, import_out;
  import_cmd->add_option("--in", import_in, "Archive path")->required()->check(CLI::ExistingFile);
  import_cmd->add_option("--out", import_out, "JSON output (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*ingest_cmd) return ingest(train_csv, test_csv, base, increment, ingest_out);
    if (*gen_cmd) {
      const auto m = sfr::generate(sfr::load_bench_spec(spec_path), gen_out);
      std::cout << "wrote " << m.all_labels().size() << " classes in " << m.sessions.size() << " sessions to "
                << gen_out << '\n';
      return 0;
    }
    if (*run_cmd) return run_experiment(run_flags, std::nullopt, false);
    if (*fscil_cmd) return run_experiment(fscil_flags, shots, augment);
    if (*sweep_cmd)
      return run_sweep(sweep_flags, sizes_text.empty() ? std::vector<int>{} : parse_sizes(sizes_text), sweep_shots,
                       sweep_augment);
    if (*report_cmd) {
      std::cout << sfr::format_table(sfr::load_report(report_in), report_name);
      return 0;
    }
    if (*norm_cmd) return normality(norm_data, norm_label, norm_k, norm_out);
    if (*export_cmd) {
      sfr::PrototypeOptions opts;
      opts.shrinkage = export_shrinkage;
      opts.path = export_path == "shrink"   ? sfr::CovariancePath::ShrinkOnly
                  : export_path == "reduce" ? sfr::CovariancePath::ForceReduce
                                            : sfr::CovariancePath::Auto;
      return proto_export(export_data, export_session, export_out, opts);
    }
    if (*import_cmd) return proto_import(import_in, import_out);
  } catch (const sfr::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
