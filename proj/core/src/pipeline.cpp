#include "lumia/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "lumia/corpus.hpp"
#include "lumia/error.hpp"
#include "lumia/reports.hpp"
#include "lumia/seed.hpp"
#include "lumia/toy_lm.hpp"

namespace lumia::pipeline {
namespace {

namespace fs = std::filesystem;

template <typename F>
auto in_stage(std::string_view stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.kind(), "stage '" + std::string(stage) + "': " + e.what());
  } catch (const fs::filesystem_error& e) {
    throw IoError("stage '" + std::string(stage) + "': " + e.what());
  } catch (const std::exception& e) {
    throw RuntimeError("stage '" + std::string(stage) + "': " + e.what());
  }
}

toy::CorpusSpec seeded_corpus(const PipelineConfig& config) {
  toy::CorpusSpec spec = config.corpus;
  spec.vocab_size = config.toy.vocab_size;
  spec.seed = derive_seed(config.base_seed, "corpus");
  return spec;
}

toy::ToyLMConfig seeded_model(const PipelineConfig& config) {
  toy::ToyLMConfig m = config.toy;
  m.seed = derive_seed(config.base_seed, "toy_lm");
  return m;
}

toy::ToyLMConfig seeded_reference(const PipelineConfig& config) {
  toy::ToyLMConfig m = config.toy;
  m.d_model = config.reference_d_model ? config.reference_d_model : config.toy.d_model / 2;
  m.seed = derive_seed(config.base_seed, "reference_lm");
  return m;
}

toy::Corpus corpus_from_samples(std::span<const Sample> samples, std::size_t vocab_size) {
  toy::Corpus c;
  for (const auto& s : samples) {
    (s.label ? c.members : c.nonmembers).push_back(toy::tokenize_words_to_ids(s.text, vocab_size));
  }
  return c;
}

std::vector<toy::TokenSeq> cropped(std::vector<toy::TokenSeq> seqs, std::size_t context) {
  for (auto& s : seqs) s = toy::crop(s, context);
  return seqs;
}

std::string text_of(const store::TokenLogProbRecord& r) { return std::string(r.raw_bytes.begin(), r.raw_bytes.end()); }

}  // namespace

std::vector<Sample> read_samples(const fs::path& path) {
  std::istringstream in(detail::read_text_file(path));
  std::vector<Sample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || (line.substr(0, tab) != "0" && line.substr(0, tab) != "1")) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected 'label<TAB>text'");
    }
    Sample s;
    s.label = line[0] == '1' ? 1 : 0;
    const auto tab2 = line.find('\t', tab + 1);
    s.text = line.substr(tab + 1, tab2 == std::string::npos ? std::string::npos : tab2 - tab - 1);
    if (tab2 != std::string::npos) s.image_path = line.substr(tab2 + 1);
    out.push_back(std::move(s));
  }
  return out;
}

void write_samples(std::span<const Sample> samples, const fs::path& path) {
  std::string out;
  for (const auto& s : samples) {
    if (s.text.find_first_of("\t\n") != std::string::npos) throw ValidationError("sample text holds a tab or newline");
    out += s.label ? "1\t" : "0\t";
    out += s.text;
    if (!s.image_path.empty()) out += "\t" + s.image_path;
    out += "\n";
  }
  detail::write_text_file(path, out);
}

double improvement_percent(double probe_auc, double baseline_auc) {
  if (!(baseline_auc > 0.0)) throw ValidationError("improvement needs a positive baseline AUC");
  return (probe_auc - baseline_auc) / baseline_auc * 100.0;
}

std::map<std::string, std::uint64_t> stage_seeds(std::uint64_t base_seed) {
  std::map<std::string, std::uint64_t> seeds;
  for (const char* stage : {"corpus", "toy_lm", "toy_lm.train", "reference_lm", "reference_lm.train", "splits",
                            "sweep", "blind"}) {
    seeds[stage] = derive_seed(base_seed, stage);
  }
  return seeds;
}

void stage_generate(const PipelineConfig& config, const fs::path& dir) {
  const auto corpus = toy::generate_corpus(seeded_corpus(config));
  std::vector<Sample> samples;
  for (const auto& m : corpus.members) samples.push_back({1, toy::detokenize(m), {}});
  for (const auto& n : corpus.nonmembers) samples.push_back({0, toy::detokenize(n), {}});
  fs::create_directories(dir);
  write_samples(samples, dir / kSamplesFile);
}

ToyTrainingInfo stage_train(const PipelineConfig& config, const fs::path& dir) {
  const auto samples = read_samples(dir / kSamplesFile);
  const auto corpus = corpus_from_samples(samples, config.toy.vocab_size);
  if (corpus.members.empty()) throw ValidationError("samples file holds no members to train on");

  ToyTrainingInfo info;
  const auto model_cfg = seeded_model(config);
  auto options = config.lm_train;
  options.seed = derive_seed(config.base_seed, "toy_lm.train");
  const auto train_seqs = cropped(toy::training_sequences(corpus, config.corpus.repetition_factor), model_cfg.max_context);
  const auto trained = toy::train_lm(model_cfg, train_seqs, options);
  toy::write_params(trained.params, model_cfg, dir / kModelFile);
  info.epoch_loss = trained.epoch_loss;

  if (config.reference_model) {
    const auto ref_cfg = seeded_reference(config);
    toy::Corpus ref_corpus;
    ref_corpus.members = toy::generate_reference_sequences(seeded_corpus(config), corpus.members.size(), corpus);
    auto ref_options = config.lm_train;
    ref_options.seed = derive_seed(config.base_seed, "reference_lm.train");
    const auto ref_seqs = cropped(toy::training_sequences(ref_corpus, config.corpus.repetition_factor), ref_cfg.max_context);
    const auto ref = toy::train_lm(ref_cfg, ref_seqs, ref_options);
    toy::write_params(ref.params, ref_cfg, dir / kReferenceModelFile);
    info.reference_epoch_loss = ref.epoch_loss;
  }
  return info;
}

void stage_extract(const PipelineConfig& config, const fs::path& dir) {
  const auto samples = read_samples(dir / kSamplesFile);
  const auto [params, model_cfg] = toy::read_params(dir / kModelFile);
  const auto corpus = corpus_from_samples(samples, model_cfg.vocab_size);
  const auto ds = toy::build_dataset(params, model_cfg, corpus.members, corpus.nonmembers);

  store::DatasetManifest manifest;
  manifest.dataset_name = config.dataset_name;
  manifest.streams = store::layout_of(ds.activations.front());
  manifest.member_count = static_cast<std::uint32_t>(corpus.members.size());
  manifest.nonmember_count = static_cast<std::uint32_t>(corpus.nonmembers.size());
  manifest.seed = config.base_seed;
  store::write_dataset(ds.activations, manifest, dir / kActivationsFile);
  store::write_logprobs(ds.log_probs, dir / kLogProbsFile);

  if (fs::exists(dir / kReferenceModelFile)) {
    const auto [ref_params, ref_cfg] = toy::read_params(dir / kReferenceModelFile);
    const auto ref = toy::build_dataset(ref_params, ref_cfg, corpus.members, corpus.nonmembers);
    store::write_logprobs(ref.log_probs, dir / kReferenceLogProbsFile);
  }
}

AuditInput align_inputs(std::string dataset_name, std::vector<store::ActivationRecord> activations,
                        std::vector<store::TokenLogProbRecord> log_probs,
                        std::vector<store::TokenLogProbRecord> reference_probs) {
  AuditInput in;
  in.dataset_name = std::move(dataset_name);
  if (log_probs.empty()) {
    in.activations = std::move(activations);
    return in;
  }
  const auto join = store::join_on_sample_id(activations, log_probs);
  std::optional<store::JoinResult> ref_join;
  std::vector<std::size_t> ref_of(activations.size(), SIZE_MAX);
  if (!reference_probs.empty()) {
    ref_join = store::join_on_sample_id(activations, reference_probs);
    for (const auto& [a, r] : ref_join->pairs) ref_of[a] = r;
  }
  for (const auto& [a, l] : join.pairs) {
    if (activations[a].label != log_probs[l].label) {
      throw ValidationError("label disagreement for sample '" + activations[a].sample_id + "'");
    }
    if (ref_join && ref_of[a] == SIZE_MAX) continue;
    in.activations.push_back(std::move(activations[a]));
    in.log_probs.push_back(std::move(log_probs[l]));
    if (ref_join) in.reference_probs.push_back(std::move(reference_probs[ref_of[a]]));
  }
  in.dropped_unmatched = activations.size() - in.activations.size();
  return in;
}

AuditInput load_audit_input(const PipelineConfig& config, const fs::path& dir) {
  fs::path acts = dir / kActivationsFile;
  fs::path lps = dir / kLogProbsFile;
  fs::path refs = dir / kReferenceLogProbsFile;
  if (config.source == Source::kImport) {
    acts = config.import_activations;
    lps = config.import_logprobs;
    refs = config.import_reference;
  }
  auto ds = store::read_dataset(acts);
  std::vector<store::TokenLogProbRecord> lp;
  std::vector<store::TokenLogProbRecord> ref;
  if (!lps.empty() && fs::exists(lps)) lp = store::read_logprobs(lps);
  else if (config.source == Source::kImport && !lps.empty()) throw IoError("log-prob file not found: " + lps.string());
  if (!lp.empty() && !refs.empty() && fs::exists(refs)) ref = store::read_logprobs(refs);
  const std::string name = config.source == Source::kImport ? ds.manifest.dataset_name : config.dataset_name;
  return align_inputs(name, std::move(ds.records), std::move(lp), std::move(ref));
}

AuditReport audit(const AuditInput& input, const PipelineConfig& config) {
  AuditReport report;
  report.dataset_name = input.dataset_name;
  report.seeds = stage_seeds(config.base_seed);
  report.config_echo = config_to_text(config);
  report.mink_k = config.mink_k;
  report.dropped_unmatched = input.dropped_unmatched;
  if (input.activations.empty()) throw ValidationError("no activation records to audit");

  std::vector<std::uint8_t> labels;
  labels.reserve(input.activations.size());
  for (const auto& r : input.activations) labels.push_back(r.label);
  const auto plan = in_stage("split", [&] {
    return metrics::make_split_plan(labels, config.repeats, config.train_fraction, report.seeds.at("splits"));
  });
  for (const auto& split : plan.repeats) {
    std::vector<std::string> ids;
    for (auto i : split.val) ids.push_back(input.activations[i].sample_id);
    report.validation_ids.push_back(std::move(ids));
  }

  report.sweep = in_stage("probe", [&] {
    return metrics::layer_sweep(input.activations, config.probe, plan, report.seeds.at("sweep"));
  });
  report.best_auc = -1.0;
  for (const auto& s : report.sweep.streams) {
    const double auc = s.layers[s.best_layer].mean_auc;
    if (auc > report.best_auc) {
      report.best_auc = auc;
      report.best_stream = s.stream;
      report.best_layer = s.best_layer;
    }
  }

  if (!input.log_probs.empty()) {
    in_stage("baselines", [&] {
      std::vector<baselines::Method> methods{baselines::Method::kLoss, baselines::Method::kZlib,
                                             baselines::Method::kMinK};
      if (!input.reference_probs.empty()) methods.push_back(baselines::Method::kReference);
      for (auto m : methods) {
        const auto set = baselines::score_records(m, input.log_probs, config.mink_k, input.reference_probs);
        BaselineRow row;
        row.method = m;
        for (const auto& split : plan.repeats) row.repeat_auc.push_back(baselines::baseline_auc(set, split.val));
        const auto agg = metrics::aggregate_repeats(row.repeat_auc);
        row.mean_auc = agg.mean;
        row.std_auc = agg.std;
        report.improvements.push_back({std::string(baselines::method_name(m)), row.mean_auc, report.best_auc,
                                       improvement_percent(report.best_auc, row.mean_auc)});
        report.baselines.push_back(std::move(row));
      }
    });

    report.text_bias = in_stage("bias", [&] {
      TextBias tb;
      tb.n = config.ngram_n;
      tb.max_overlap = config.overlap_p;
      std::vector<bias::Tokens> member_tokens;
      std::vector<bias::Tokens> nonmember_tokens;
      std::vector<std::string> nonmember_ids;
      std::vector<std::string> member_texts;
      std::vector<std::string> nonmember_texts;
      for (const auto& r : input.log_probs) {
        auto text = text_of(r);
        auto tokens = bias::tokenize_words(text);
        if (r.label) {
          member_tokens.push_back(std::move(tokens));
          member_texts.push_back(std::move(text));
        } else {
          if (tokens.size() >= config.ngram_n) {
            nonmember_tokens.push_back(std::move(tokens));
            nonmember_ids.push_back(r.sample_id);
          }
          nonmember_texts.push_back(std::move(text));
        }
      }
      const bias::NGramIndex index(config.ngram_n, member_tokens);
      const auto overlap = bias::filter_by_overlap(nonmember_tokens, index, config.overlap_p);
      tb.mean_overlap = overlap.mean_overlap;
      tb.retention_rate = overlap.retention_rate;
      for (std::size_t i = 0; i < nonmember_ids.size(); ++i) tb.per_sample.emplace_back(nonmember_ids[i], overlap.overlap[i]);
      if (config.blind_baseline) {
        bias::BlindOptions opt;
        opt.repeats = config.repeats;
        opt.train_fraction = config.train_fraction;
        opt.seed = report.seeds.at("blind");
        // Too few distinct texts to split is a property of the data, not a
        // reason to abandon the audit.
        try {
          tb.blind = bias::blind_baseline_auc(member_texts, nonmember_texts, opt);
        } catch (const ValidationError& e) {
          tb.blind_skipped = e.what();
        }
      }
      return tb;
    });
  }
  return report;
}

AuditReport run_audit(const PipelineConfig& config) {
  in_stage("config", [&] { config.validate(); });
  const fs::path out = config.out_dir;
  const fs::path staging = out / ".lumia-staging";
  try {
    fs::create_directories(out);
    fs::remove_all(staging);
    fs::create_directories(staging);

    std::optional<ToyTrainingInfo> training;
    if (config.source == Source::kToyGenerate) {
      in_stage("gen-corpus", [&] { stage_generate(config, staging); });
      training = in_stage("train-toy", [&] { return stage_train(config, staging); });
      in_stage("extract", [&] { stage_extract(config, staging); });
    }
    const auto input = in_stage("load", [&] { return load_audit_input(config, staging); });
    AuditReport report = audit(input, config);
    report.training = std::move(training);
    in_stage("report", [&] { emit_reports(report, staging); });

    for (const auto& entry : fs::directory_iterator(staging)) {
      fs::rename(entry.path(), out / entry.path().filename());
    }
    fs::remove_all(staging);
    return report;
  } catch (...) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    throw;
  }
}

}  // namespace lumia::pipeline
