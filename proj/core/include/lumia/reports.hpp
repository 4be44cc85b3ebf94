#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lumia/pipeline.hpp"

namespace lumia::pipeline {

inline constexpr int kReportSchemaVersion = 1;

std::string layer_auc_csv(const AuditReport& report);   // stream,layer,repeat,auc
std::string baselines_csv(const AuditReport& report);   // method,repeat,auc
std::string bias_csv(const AuditReport& report);        // class,hv,ssim
std::string overlap_csv(const AuditReport& report);     // sample_id,overlap_percent
std::string summary_json(const AuditReport& report);

/// Writes summary.json, layer_auc.csv, baselines.csv, bias.csv and
/// overlap.csv. Returns the paths written.
std::vector<std::filesystem::path> emit_reports(const AuditReport& report, const std::filesystem::path& dir);

/// Human-readable tables rendered from a summary.json document.
std::string render_summary(const std::string& summary_json_text);

}  // namespace lumia::pipeline
