// lumia: membership-inference audit toolkit.
//
//   lumia gen-corpus --config cfg --out DIR
//   lumia train-toy  --config cfg --out DIR
//   lumia extract    --config cfg --out DIR
//   lumia audit      --config cfg --out DIR [--import ACTS[,LOGPROBS[,REF]]]
//   lumia bias       --out DIR [--samples FILE] [--member-images DIR --nonmember-images DIR]
//   lumia report     --out DIR
//
// Exit status: 0 success, 2 validation error, 1 runtime error.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lumia/bias.hpp"
#include "lumia/config.hpp"
#include "lumia/error.hpp"
#include "lumia/pipeline.hpp"
#include "lumia/reports.hpp"
#include "lumia/seed.hpp"

namespace fs = std::filesystem;
using namespace lumia;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitValidation = 2;

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string import_spec;
  std::optional<double> k;
  std::optional<std::size_t> repeats;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--config", opt.config_path, "Pipeline config file (key = value)");
  cmd->add_option("--seed", opt.seed, "Base seed");
  cmd->add_option("--out", opt.out_dir, "Output / working directory");
  cmd->add_option("--import", opt.import_spec, "ACTS[,LOGPROBS[,REF_LOGPROBS]] dumps to audit");
  cmd->add_option("--k", opt.k, "Min-k% percent");
  cmd->add_option("--repeats", opt.repeats, "Number of split repeats");
  cmd->add_option("--set", opt.sets, "Extra key=value config override (repeatable)");
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(s.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

pipeline::PipelineConfig build_config(const CommonOptions& opt) {
  auto config = opt.config_path.empty() ? pipeline::PipelineConfig{} : pipeline::load_config(opt.config_path);
  for (const auto& kv : opt.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
    pipeline::apply_setting(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (opt.seed) config.base_seed = *opt.seed;
  if (!opt.out_dir.empty()) config.out_dir = opt.out_dir;
  if (opt.k) config.mink_k = *opt.k;
  if (opt.repeats) config.repeats = *opt.repeats;
  if (!opt.import_spec.empty()) {
    const auto parts = split_commas(opt.import_spec);
    if (parts.size() > 3 || parts[0].empty()) throw ValidationError("--import expects ACTS[,LOGPROBS[,REF_LOGPROBS]]");
    config.source = pipeline::Source::kImport;
    config.import_activations = parts[0];
    config.import_logprobs = parts.size() > 1 ? fs::path(parts[1]) : fs::path();
    config.import_reference = parts.size() > 2 ? fs::path(parts[2]) : fs::path();
  }
  config.validate();
  return config;
}

std::vector<bias::GrayImage> load_pgm_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<bias::GrayImage> out;
  for (const auto& f : files) out.push_back(bias::read_pgm(f));
  return out;
}

int run_bias(const pipeline::PipelineConfig& config, const std::string& samples_path, const std::string& member_dir,
             const std::string& nonmember_dir) {
  const fs::path out = config.out_dir;
  fs::create_directories(out);
  pipeline::AuditReport report;
  report.dataset_name = config.dataset_name;
  report.seeds = pipeline::stage_seeds(config.base_seed);
  report.config_echo = pipeline::config_to_text(config);

  const fs::path samples = samples_path.empty() ? out / pipeline::kSamplesFile : fs::path(samples_path);
  std::vector<bias::GrayImage> member_images;
  std::vector<bias::GrayImage> nonmember_images;
  if (fs::exists(samples)) {
    const auto rows = pipeline::read_samples(samples);
    std::vector<bias::Tokens> member_tokens;
    std::vector<std::pair<std::string, bias::Tokens>> nonmember_tokens;
    std::vector<std::string> member_texts;
    std::vector<std::string> nonmember_texts;
    std::size_t nm = 0;
    for (const auto& s : rows) {
      if (s.label) {
        member_tokens.push_back(bias::tokenize_words(s.text));
        member_texts.push_back(s.text);
      } else {
        auto t = bias::tokenize_words(s.text);
        if (t.size() >= config.ngram_n) nonmember_tokens.emplace_back("n" + std::to_string(nm), std::move(t));
        nonmember_texts.push_back(s.text);
        ++nm;
      }
      if (!s.image_path.empty()) {
        fs::path p = s.image_path;
        if (p.is_relative()) p = samples.parent_path() / p;
        (s.label ? member_images : nonmember_images).push_back(bias::read_pgm(p));
      }
    }
    const bias::NGramIndex index(config.ngram_n, member_tokens);
    std::vector<bias::Tokens> toks;
    for (const auto& [id, t] : nonmember_tokens) toks.push_back(t);
    const auto ov = bias::filter_by_overlap(toks, index, config.overlap_p);
    pipeline::TextBias tb;
    tb.n = config.ngram_n;
    tb.max_overlap = config.overlap_p;
    tb.mean_overlap = ov.mean_overlap;
    tb.retention_rate = ov.retention_rate;
    for (std::size_t i = 0; i < toks.size(); ++i) tb.per_sample.emplace_back(nonmember_tokens[i].first, ov.overlap[i]);
    if (config.blind_baseline) {
      bias::BlindOptions bo;
      bo.repeats = config.repeats;
      bo.train_fraction = config.train_fraction;
      bo.seed = report.seeds.at("blind");
      try {
        tb.blind = bias::blind_baseline_auc(member_texts, nonmember_texts, bo);
      } catch (const ValidationError& e) {
        tb.blind_skipped = e.what();
      }
    }
    report.text_bias = std::move(tb);
  }
  if (!member_dir.empty() || !nonmember_dir.empty()) {
    if (member_dir.empty() || nonmember_dir.empty()) {
      throw ValidationError("--member-images and --nonmember-images go together");
    }
    member_images = load_pgm_dir(member_dir);
    nonmember_images = load_pgm_dir(nonmember_dir);
  }
  if (!member_images.empty() || !nonmember_images.empty()) {
    report.image_bias = bias::image_bias(member_images, nonmember_images, config.pair_budget,
                                         derive_seed(config.base_seed, "image_pairs"));
  }
  if (!report.text_bias && !report.image_bias) throw ValidationError("bias: no samples file and no image pools given");


  {
    const auto write = [&](const char* name, const std::string& body) {
      std::ofstream f(out / name, std::ios::binary | std::ios::trunc);
      f << body;
      if (!f) throw IoError("cannot write " + (out / name).string());
    };
    write("bias.csv", pipeline::bias_csv(report));
    write("overlap.csv", pipeline::overlap_csv(report));
  }
  std::cout << pipeline::render_summary(pipeline::summary_json(report));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lumia: layer-wise membership inference audits"};
  app.require_subcommand(1);

  CommonOptions opt;
  std::string samples_path;
  std::string member_dir;
  std::string nonmember_dir;

  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic member/non-member corpus");
  auto* train = app.add_subcommand("train-toy", "Train the toy LM (and reference LM) on the corpus members");
  auto* extract = app.add_subcommand("extract", "Dump averaged activations and token log-probs");
  auto* audit = app.add_subcommand("audit", "Per-layer probe sweep, baselines and bias; writes reports");
  auto* bias_cmd = app.add_subcommand("bias", "Text and image bias statistics");
  auto* report = app.add_subcommand("report", "Print the tables of an existing summary.json");
  for (auto* cmd : {gen, train, extract, audit, bias_cmd, report}) add_common(cmd, opt);
  bias_cmd->add_option("--samples", samples_path, "Samples file (label TAB text [TAB image.pgm])");
  bias_cmd->add_option("--member-images", member_dir, "Directory of member .pgm images");
  bias_cmd->add_option("--nonmember-images", nonmember_dir, "Directory of non-member .pgm images");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    const auto config = build_config(opt);
    const fs::path out = config.out_dir;
    if (gen->parsed()) {
      pipeline::stage_generate(config, out);
      std::cout << "wrote " << (out / pipeline::kSamplesFile).string() << "\n";
    } else if (train->parsed()) {
      const auto info = pipeline::stage_train(config, out);
      std::cout << "trained toy LM: " << info.epoch_loss.size() << " epochs, final loss "
                << (info.epoch_loss.empty() ? 0.0 : info.epoch_loss.back()) << " nats/token\n";
    } else if (extract->parsed()) {
      pipeline::stage_extract(config, out);
      std::cout << "wrote " << (out / pipeline::kActivationsFile).string() << "\n";
    } else if (audit->parsed()) {
      const auto rep = pipeline::run_audit(config);
      std::cout << pipeline::render_summary(pipeline::summary_json(rep));
    } else if (bias_cmd->parsed()) {
      return run_bias(config, samples_path, member_dir, nonmember_dir);
    } else if (report->parsed()) {
      std::ifstream in(out / "summary.json");
      if (!in) throw IoError("no summary.json in " + out.string());
      std::stringstream ss;
      ss << in.rdbuf();
      std::cout << pipeline::render_summary(ss.str());
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "lumia: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::kValidation:
      case ErrorKind::kFormat:
      case ErrorKind::kCorruption:
        return kExitValidation;
      default:
        return kExitRuntime;
    }
  } catch (const std::exception& e) {
    std::cerr << "lumia: " << e.what() << "\n";
    return kExitRuntime;
  }
}
