#include "sfr/report_io.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "sfr/errors.hpp"

namespace sfr {

using nlohmann::json;

namespace {

json stat_json(const Stat& s) { return {{"mean", s.mean}, {"std", s.std}}; }

std::string fixed(double v, int digits = 1) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

json report_to_json(const RunReport& r, const json& config) {
  json doc;
  doc["schema_version"] = kReportSchemaVersion;
  doc["mode"] = r.mode;
  doc["augment"] = r.augment;
  doc["shots"] = r.shots ? json(*r.shots) : json(nullptr);
  doc["replay_per_class"] = r.replay_per_class;
  if (!config.is_null()) doc["config"] = config;

  json trials = json::array();
  for (std::size_t t = 0; t < r.trials.size(); ++t) {
    const auto& tr = r.trials[t];
    json sessions = json::array();
    for (const auto& rec : tr.sessions) {
      json classes = json::array();
      for (const auto& [label, c] : rec.counts)
        classes.push_back({{"label", label}, {"correct", c.correct}, {"total", c.total}});
      sessions.push_back({{"session", rec.session},
                          {"G", rec.G},
                          {"L", rec.L},
                          {"IFM", rec.IFM},
                          {"novel", rec.novel},
                          {"classes", std::move(classes)}});
    }
    json warnings = json::object();
    for (const auto& [k, v] : tr.warnings) warnings[k] = v;
    trials.push_back({{"trial", t},
                      {"seed", tr.seed},
                      {"increments", tr.increments},
                      {"sessions", std::move(sessions)},
                      {"mean_G", tr.mean_G},
                      {"mean_IFM", tr.mean_IFM},
                      {"SAD", tr.sad ? json(*tr.sad) : json(nullptr)},
                      {"warnings", std::move(warnings)}});
  }
  doc["trials"] = std::move(trials);

  json sessions = json::array();
  for (const auto& s : r.sessions)
    sessions.push_back({{"session", s.session}, {"G", stat_json(s.G)}, {"L", stat_json(s.L)}, {"IFM", stat_json(s.IFM)}});
  json warnings = json::object();
  for (const auto& [k, v] : r.warnings) warnings[k] = v;
  doc["aggregate"] = {{"sessions", std::move(sessions)},
                      {"mean_G", stat_json(r.mean_G)},
                      {"mean_IFM", stat_json(r.mean_IFM)},
                      {"SAD", r.sad ? stat_json(*r.sad) : json(nullptr)},
                      {"warnings", std::move(warnings)}};
  return doc;
}

RunReport report_from_json(const json& doc) {
  RunReport r;
  try {
    if (doc.at("schema_version").get<int>() != kReportSchemaVersion)
      throw ValidationError("report: unsupported schema_version");
    r.mode = doc.at("mode").get<std::string>();
    r.augment = doc.value("augment", false);
    if (doc.contains("shots") && !doc.at("shots").is_null()) r.shots = doc.at("shots").get<int>();
    r.replay_per_class = doc.value("replay_per_class", 0);
    for (const auto& t : doc.at("trials")) {
      TrialReport tr;
      tr.seed = t.at("seed").get<std::uint64_t>();
      tr.increments = t.at("increments").get<std::vector<std::vector<Label>>>();
      for (const auto& s : t.at("sessions")) {
        MetricsRecord rec;
        rec.session = s.at("session").get<int>();
        rec.novel = s.at("novel").get<std::vector<Label>>();
        for (const auto& c : s.at("classes"))
          rec.counts[c.at("label").get<Label>()] = {c.at("correct").get<int>(), c.at("total").get<int>()};
        tr.sessions.push_back(std::move(rec));
      }
      for (const auto& [k, v] : t.at("warnings").items()) tr.warnings[k] = v.get<int>();
      r.trials.push_back(std::move(tr));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
  r.recompute_aggregates();
  return r;
}

RunReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open report " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("report " + path.string() + ": " + e.what());
  }
  return report_from_json(doc);
}

std::string report_csv(const RunReport& r) {
  std::ostringstream out;
  out << std::setprecision(17) << "trial,session,G,L,IFM\n";
  for (std::size_t t = 0; t < r.trials.size(); ++t)
    for (const auto& rec : r.trials[t].sessions)
      out << t << ',' << rec.session << ',' << rec.G << ',' << rec.L << ',' << rec.IFM << '\n';
  return out.str();
}

std::string sweep_csv(const std::vector<SweepPoint>& points) {
  std::ostringstream out;
  out << std::setprecision(17) << "size,mean_G,mean_G_std,mean_IFM,mean_IFM_std,SAD,final_G\n";
  for (const auto& p : points) {
    const auto& r = p.report;
    out << p.size << ',' << r.mean_G.mean << ',' << r.mean_G.std << ',' << r.mean_IFM.mean << ',' << r.mean_IFM.std
        << ',';
    if (r.sad) out << r.sad->mean;
    out << ',' << (r.sessions.empty() ? 0.0 : r.sessions.back().G.mean) << '\n';
  }
  return out.str();
}

std::string format_table(const RunReport& r, const std::string& row_name) {
  const std::size_t n = r.sessions.size();
  if (n == 0) return "(empty report)\n";
  const std::string mean_title = n > 1 ? "Mean (Task 1→" + std::to_string(n - 1) + ")" : "Mean (Task 0)";

  std::vector<std::string> head1{"Method", "Task 0"}, head2{"", "G"}, row{row_name}, spread{"±"};
  row.push_back(fixed(r.sessions[0].G.mean));
  spread.push_back(fixed(r.sessions[0].G.std));
  for (std::size_t s = 1; s < n; ++s) {
    head1.push_back("Task " + std::to_string(s));
    head1.push_back("");
    head2.push_back("G");
    head2.push_back("IFM");
    row.push_back(fixed(r.sessions[s].G.mean));
    row.push_back(fixed(r.sessions[s].IFM.mean));
    spread.push_back(fixed(r.sessions[s].G.std));
    spread.push_back(fixed(r.sessions[s].IFM.std));
  }
  head1.push_back(mean_title);
  head1.push_back("");
  head2.push_back("G");
  head2.push_back("IFM");
  row.push_back(fixed(r.mean_G.mean));
  row.push_back(fixed(r.mean_IFM.mean));
  spread.push_back(fixed(r.mean_G.std));
  spread.push_back(fixed(r.mean_IFM.std));

  // Widths count code points, not bytes.
  auto width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char c : s) w += (c & 0xC0) != 0x80;
    return w;
  };
  std::vector<std::size_t> w(head1.size(), 0);
  w[0] = width(head1[0]);
  w[1] = width(head1[1]);
  for (const auto* line : {&head2, &row, &spread})
    for (std::size_t i = 0; i < line->size(); ++i) w[i] = std::max(w[i], width((*line)[i]));
  // A title spans its G/IFM pair plus the separator between them.
  constexpr std::size_t kSep = 3;
  for (std::size_t i = 2; i + 1 < head1.size(); i += 2) {
    const std::size_t need = width(head1[i]);
    if (w[i] + kSep + w[i + 1] < need) w[i + 1] = need - w[i] - kSep;
  }

  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& line, bool spanning) {
    std::string text;
    for (std::size_t i = 0; i < line.size(); ++i) {
      std::size_t span = w[i];
      if (spanning && i >= 2) {
        span = w[i] + kSep + w[i + 1];
        text += line[i] + std::string(span - width(line[i]), ' ');
        ++i;
      } else {
        text += line[i] + std::string(span - std::min(span, width(line[i])), ' ');
      }
      if (i + 1 < line.size()) text += " | ";
    }
    while (!text.empty() && text.back() == ' ') text.pop_back();
    out << text << '\n';
  };
  emit(head1, true);
  emit(head2, false);
  emit(row, false);
  if (r.trials.size() > 1) emit(spread, false);
  return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace sfr
