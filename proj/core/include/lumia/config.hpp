#pragma once

// Flat "key = value" pipeline configuration. '#' starts a comment. Unknown
// keys are rejected so typos surface early.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "lumia/corpus.hpp"
#include "lumia/probe.hpp"
#include "lumia/toy_lm.hpp"

namespace lumia::pipeline {

enum class Source { kToyGenerate, kImport };

struct PipelineConfig {
  std::string dataset_name = "toy";
  Source source = Source::kToyGenerate;
  std::filesystem::path import_activations;
  std::filesystem::path import_logprobs;    // optional
  std::filesystem::path import_reference;   // optional

  toy::ToyLMConfig toy;
  toy::CorpusSpec corpus;
  toy::LMTrainOptions lm_train;
  bool reference_model = true;
  std::size_t reference_d_model = 0;  // 0 = half of toy.d_model

  probe::ProbeConfig probe;
  std::size_t repeats = 3;
  double train_fraction = 0.8;
  double val_fraction = 0.2;
  std::uint64_t base_seed = 0;
  double mink_k = 20.0;
  std::filesystem::path out_dir = "lumia-out";

  std::size_t ngram_n = 7;
  double overlap_p = 0.2;
  bool blind_baseline = true;
  std::size_t pair_budget = 500;

  void validate() const;
};

/// Applies one key/value pair. Throws ValidationError for unknown keys or
/// unparsable values.
void apply_setting(PipelineConfig& config, std::string_view key, std::string_view value);

PipelineConfig parse_config(std::string_view text);
PipelineConfig load_config(const std::filesystem::path& path);

/// Canonical key = value listing of every setting, sorted by key.
std::string config_to_text(const PipelineConfig& config);

}  // namespace lumia::pipeline
