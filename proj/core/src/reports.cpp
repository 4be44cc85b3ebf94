#include "lumia/reports.hpp"

#include <cstdio>
#include <sstream>

#include "binary_io.hpp"
#include "json.hpp"
#include "lumia/error.hpp"

namespace lumia::pipeline {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10f", v);
  return buf;
}

json layer_json(const metrics::LayerResult& l) {
  return {{"layer", l.layer},   {"mean_auc", l.mean_auc}, {"std_auc", l.std_auc},
          {"success", l.success}, {"repeat_auc", l.repeat_auc}};
}

}  // namespace

std::string layer_auc_csv(const AuditReport& report) {
  std::string out = "stream,layer,repeat,auc\n";
  for (const auto& s : report.sweep.streams) {
    for (const auto& l : s.layers) {
      for (std::size_t r = 0; r < l.repeat_auc.size(); ++r) {
        out += s.stream + "," + std::to_string(l.layer) + "," + std::to_string(r) + "," + num(l.repeat_auc[r]) + "\n";
      }
    }
  }
  return out;
}

std::string baselines_csv(const AuditReport& report) {
  std::string out = "method,repeat,auc\n";
  for (const auto& b : report.baselines) {
    for (std::size_t r = 0; r < b.repeat_auc.size(); ++r) {
      out += std::string(baselines::method_name(b.method)) + "," + std::to_string(r) + "," + num(b.repeat_auc[r]) + "\n";
    }
  }
  return out;
}

std::string bias_csv(const AuditReport& report) {
  std::string out = "class,hv,ssim\n";
  if (report.image_bias) {
    const auto& ib = *report.image_bias;
    out += "member," + num(ib.members.hv) + "," + num(ib.members.ssim) + "\n";
    out += "nonmember," + num(ib.nonmembers.hv) + "," + num(ib.nonmembers.ssim) + "\n";
    out += "abs_difference," + num(ib.abs_difference.hv) + "," + num(ib.abs_difference.ssim) + "\n";
  }
  return out;
}

std::string overlap_csv(const AuditReport& report) {
  std::string out = "sample_id,overlap_percent\n";
  if (report.text_bias) {
    for (const auto& [id, pct] : report.text_bias->per_sample) out += id + "," + num(pct) + "\n";
  }
  return out;
}

std::string summary_json(const AuditReport& report) {
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["dataset"] = report.dataset_name;
  j["files"] = {{"layer_auc.csv", kReportSchemaVersion},
                {"baselines.csv", kReportSchemaVersion},
                {"bias.csv", kReportSchemaVersion},
                {"overlap.csv", kReportSchemaVersion}};
  j["success_threshold"] = metrics::kSuccessAuc;
  j["repeats"] = report.sweep.repeats;

  json streams = json::array();
  for (const auto& s : report.sweep.streams) {
    json layers = json::array();
    for (const auto& l : s.layers) layers.push_back(layer_json(l));
    streams.push_back({{"stream", s.stream},
                       {"best_layer", s.best_layer},
                       {"best_mean_auc", s.layers[s.best_layer].mean_auc},
                       {"layers", std::move(layers)}});
  }
  j["streams"] = std::move(streams);
  j["best"] = {{"stream", report.best_stream}, {"layer", report.best_layer}, {"mean_auc", report.best_auc}};

  if (report.baselines.empty()) {
    j["baselines"] = nullptr;
  } else {
    json rows = json::array();
    for (const auto& b : report.baselines) {
      rows.push_back({{"method", baselines::method_name(b.method)},
                      {"mean_auc", b.mean_auc},
                      {"std_auc", b.std_auc},
                      {"repeat_auc", b.repeat_auc}});
    }
    j["baselines"] = std::move(rows);
    json imp = json::array();
    for (const auto& i : report.improvements) {
      imp.push_back({{"method", i.method},
                     {"baseline_auc", i.baseline_auc},
                     {"probe_auc", i.probe_auc},
                     {"improvement_percent", i.percent}});
    }
    j["improvements"] = std::move(imp);
  }
  j["baseline_settings"] = {{"mink_k_percent", report.mink_k}, {"zlib_level", baselines::kZlibLevel}};

  json bias_j;
  if (report.text_bias) {
    const auto& tb = *report.text_bias;
    bias_j["text"] = {{"ngram_n", tb.n},
                      {"max_overlap_p", tb.max_overlap},
                      {"mean_overlap_percent", tb.mean_overlap},
                      {"retention_rate", tb.retention_rate},
                      {"scored_nonmembers", tb.per_sample.size()}};
    if (tb.blind) {
      bias_j["text"]["blind_auc"] = tb.blind->mean_auc;
      bias_j["text"]["blind_repeat_auc"] = tb.blind->repeat_auc;
    } else if (!tb.blind_skipped.empty()) {
      bias_j["text"]["blind_skipped"] = tb.blind_skipped;
    }
  }
  if (report.image_bias) {
    const auto& ib = *report.image_bias;
    bias_j["image"] = {{"members", {{"hv", ib.members.hv}, {"ssim", ib.members.ssim}}},
                       {"nonmembers", {{"hv", ib.nonmembers.hv}, {"ssim", ib.nonmembers.ssim}}},
                       {"abs_difference", {{"hv", ib.abs_difference.hv}, {"ssim", ib.abs_difference.ssim}}}};
  }
  j["bias"] = bias_j.is_null() ? json::object() : bias_j;

  if (report.training) {
    j["toy_lm"] = {{"epoch_loss", report.training->epoch_loss},
                   {"reference_epoch_loss", report.training->reference_epoch_loss}};
  }
  j["validation_ids"] = report.validation_ids;
  j["dropped_unmatched"] = report.dropped_unmatched;
  j["seeds"] = report.seeds;
  j["config"] = report.config_echo;
  return j.dump(2) + "\n";
}

std::vector<fs::path> emit_reports(const AuditReport& report, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());
  const std::vector<std::pair<std::string, std::string>> files{
      {"summary.json", summary_json(report)}, {"layer_auc.csv", layer_auc_csv(report)},
      {"baselines.csv", baselines_csv(report)}, {"bias.csv", bias_csv(report)},
      {"overlap.csv", overlap_csv(report)}};
  std::vector<fs::path> written;
  for (const auto& [name, body] : files) {
    detail::write_text_file(dir / name, body);
    written.push_back(dir / name);
  }
  return written;
}

std::string render_summary(const std::string& summary_json_text) {
  json j;
  try {
    j = json::parse(summary_json_text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed summary.json: ") + e.what());
  }
  std::ostringstream os;
  char line[160];
  os << "dataset: " << j.value("dataset", "?") << "   repeats: " << j.value("repeats", 0) << "\n\n";
  for (const auto& s : j.at("streams")) {
    os << "stream " << s.at("stream").get<std::string>() << "  (best layer " << s.at("best_layer").get<std::size_t>()
       << ")\n";
    os << "  layer   mean AUC    std      success\n";
    for (const auto& l : s.at("layers")) {
      std::snprintf(line, sizeof line, "  %5zu   %.4f    %.4f   %s%s\n", l.at("layer").get<std::size_t>(),
                    l.at("mean_auc").get<double>(), l.at("std_auc").get<double>(),
                    l.at("success").get<bool>() ? "yes" : "no",
                    l.at("layer") == s.at("best_layer") ? "   <- l*" : "");
      os << line;
    }
    os << "\n";
  }
  if (j.contains("baselines") && !j["baselines"].is_null()) {
    os << "baseline   mean AUC    std      probe improvement\n";
    for (std::size_t i = 0; i < j["baselines"].size(); ++i) {
      const auto& b = j["baselines"][i];
      const auto& imp = j["improvements"][i];
      std::snprintf(line, sizeof line, "%-8s   %.4f    %.4f   %+.2f%%\n", b.at("method").get<std::string>().c_str(),
                    b.at("mean_auc").get<double>(), b.at("std_auc").get<double>(),
                    imp.at("improvement_percent").get<double>());
      os << line;
    }
  } else {
    os << "baselines: absent (no log-prob file)\n";
  }
  if (j.contains("bias") && j["bias"].contains("text")) {
    const auto& t = j["bias"]["text"];
    std::snprintf(line, sizeof line, "\ntext bias: N=%zu mean overlap %.2f%%, retention at P=%.2f: %.3f",
                  t.at("ngram_n").get<std::size_t>(), t.at("mean_overlap_percent").get<double>(),
                  t.at("max_overlap_p").get<double>(), t.at("retention_rate").get<double>());
    os << line;
    if (t.contains("blind_auc")) {
      std::snprintf(line, sizeof line, ", blind AUC %.4f", t.at("blind_auc").get<double>());
      os << line;
    } else if (t.contains("blind_skipped")) {
      os << ", blind classifier skipped (" << t.at("blind_skipped").get<std::string>() << ")";
    }
    os << "\n";
  }
  if (j.contains("bias") && j["bias"].contains("image")) {
    const auto& im = j["bias"]["image"];
    os << "\nimage bias      HV (%)     SSIM\n";
    for (const char* cls : {"members", "nonmembers", "abs_difference"}) {
      std::snprintf(line, sizeof line, "%-14s  %8.2f   %.4f\n", cls, im.at(cls).at("hv").get<double>(),
                    im.at(cls).at("ssim").get<double>());
      os << line;
    }
  }
  return os.str();
}

}  // namespace lumia::pipeline
