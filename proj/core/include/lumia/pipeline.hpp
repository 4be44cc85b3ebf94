#pragma once

// End-to-end audit: corpus -> toy LM (or imported dumps) -> per-layer probes
// -> output-based baselines on the same splits -> bias measures -> reports.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lumia/activation_store.hpp"
#include "lumia/baselines.hpp"
#include "lumia/bias.hpp"
#include "lumia/config.hpp"
#include "lumia/metrics.hpp"

namespace lumia::pipeline {

inline constexpr std::string_view kActivationsFile = "activations.luma";
inline constexpr std::string_view kLogProbsFile = "logprobs.lulp";
inline constexpr std::string_view kReferenceLogProbsFile = "ref_logprobs.lulp";
inline constexpr std::string_view kSamplesFile = "samples.tsv";
inline constexpr std::string_view kModelFile = "toy_lm.bin";
inline constexpr std::string_view kReferenceModelFile = "ref_lm.bin";

/// One line of a samples file: label TAB text [TAB image path].
struct Sample {
  std::uint8_t label = 0;
  std::string text;
  std::string image_path;
};

std::vector<Sample> read_samples(const std::filesystem::path& path);
void write_samples(std::span<const Sample> samples, const std::filesystem::path& path);

/// Everything the audit stage consumes, aligned by index.
struct AuditInput {
  std::string dataset_name;
  std::vector<store::ActivationRecord> activations;
  std::vector<store::TokenLogProbRecord> log_probs;        // empty when absent
  std::vector<store::TokenLogProbRecord> reference_probs;  // empty when absent
  std::size_t dropped_unmatched = 0;
};

/// Joins activations with log-probs (and reference log-probs) on sample_id,
/// keeping activation order and dropping unmatched ids.
AuditInput align_inputs(std::string dataset_name, std::vector<store::ActivationRecord> activations,
                        std::vector<store::TokenLogProbRecord> log_probs,
                        std::vector<store::TokenLogProbRecord> reference_probs);

struct BaselineRow {
  baselines::Method method = baselines::Method::kLoss;
  std::vector<double> repeat_auc;
  double mean_auc = 0.0;
  double std_auc = 0.0;
};

struct Improvement {
  std::string method;
  double baseline_auc = 0.0;
  double probe_auc = 0.0;
  double percent = 0.0;  // (probe - baseline) / baseline * 100
};

struct TextBias {
  std::size_t n = 0;
  double max_overlap = 0.0;
  double mean_overlap = 0.0;
  double retention_rate = 0.0;
  std::vector<std::pair<std::string, double>> per_sample;  // non-member id, overlap percent
  std::optional<bias::BlindResult> blind;
  std::string blind_skipped;  // why the blind classifier could not run, if it could not
};

struct ToyTrainingInfo {
  std::vector<double> epoch_loss;
  std::vector<double> reference_epoch_loss;
};

struct AuditReport {
  std::string dataset_name;
  metrics::LayerSweepReport sweep;
  std::vector<BaselineRow> baselines;  // empty when log-probs are absent
  std::vector<Improvement> improvements;
  std::string best_stream;
  std::size_t best_layer = 0;
  double best_auc = 0.0;
  std::optional<TextBias> text_bias;
  std::optional<bias::ImageBiasSummary> image_bias;
  std::optional<ToyTrainingInfo> training;
  /// Validation sample ids per repeat; probes and baselines both use these.
  std::vector<std::vector<std::string>> validation_ids;
  std::size_t dropped_unmatched = 0;
  std::map<std::string, std::uint64_t> seeds;
  std::string config_echo;
  double mink_k = 20.0;
};

// Stages. Each writes its products into `dir`.

/// samples.tsv from the synthetic corpus.
void stage_generate(const PipelineConfig& config, const std::filesystem::path& dir);
/// toy_lm.bin (and ref_lm.bin) from samples.tsv; returns loss curves.
ToyTrainingInfo stage_train(const PipelineConfig& config, const std::filesystem::path& dir);
/// activations.luma (+manifest), logprobs.lulp, ref_logprobs.lulp.
void stage_extract(const PipelineConfig& config, const std::filesystem::path& dir);
/// Loads the dumps named by the config (import) or found in `dir` (toy).
AuditInput load_audit_input(const PipelineConfig& config, const std::filesystem::path& dir);
/// Probe sweep, baselines and text bias; no file output.
AuditReport audit(const AuditInput& input, const PipelineConfig& config);

/// Runs the whole pipeline into config.out_dir. On failure every file the
/// run produced is removed and the error is rethrown with stage context.
AuditReport run_audit(const PipelineConfig& config);

/// (probe - baseline) / baseline * 100.
double improvement_percent(double probe_auc, double baseline_auc);

std::map<std::string, std::uint64_t> stage_seeds(std::uint64_t base_seed);

}  // namespace lumia::pipeline
