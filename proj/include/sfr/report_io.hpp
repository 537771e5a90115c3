#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfr/protocol.hpp"

namespace sfr {

inline constexpr int kReportSchemaVersion = 1;

/// Full report document; `config` is embedded verbatim when not null.
nlohmann::json report_to_json(const RunReport& report, const nlohmann::json& config = nullptr);

/// Parses a report document and recomputes every aggregate from the stored
/// per-class counts.
RunReport report_from_json(const nlohmann::json& doc);
RunReport load_report(const std::filesystem::path& path);

/// Columns: trial,session,G,L,IFM.
std::string report_csv(const RunReport& report);

/// Columns: size,mean_G,mean_G_std,mean_IFM,mean_IFM_std,SAD,final_G.
std::string sweep_csv(const std::vector<SweepPoint>& points);

/// Table with one G column for Task 0, G/IFM pairs for later tasks and a
/// "Mean (Task 1→N)" pair; values are across-trial means, a second row
/// gives standard deviations.
std::string format_table(const RunReport& report, const std::string& row_name = "SFR");

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace sfr
