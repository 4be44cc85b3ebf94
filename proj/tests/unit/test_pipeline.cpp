#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "lumia/baselines.hpp"
#include "lumia/config.hpp"
#include "lumia/error.hpp"
#include "lumia/metrics.hpp"
#include "lumia/pipeline.hpp"
#include "lumia/reports.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace lumia;
using namespace lumia::pipeline;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("lumia_pipe_" + name);
  fs::remove_all(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string l;
  while (std::getline(in, l)) out.push_back(l);
  return out;
}

PipelineConfig small_toy(const fs::path& out, std::uint64_t seed = 3) {
  PipelineConfig c = parse_config(R"(
    # small and quick
    corpus.members = 40
    corpus.nonmembers = 40
    corpus.min_length = 10
    corpus.max_length = 16
    corpus.repetition = 4
    toy.vocab_size = 64
    toy.layers = 2
    toy.d_model = 16
    toy.heads = 2
    toy.context = 16
    toy.ff_width = 32
    train.epochs = 3
    train.lr = 0.003
    train.batch = 16
    probe.hidden = 8
    probe.epochs = 20
    repeats = 2
    bias.ngram = 3
  )");
  c.out_dir = out;
  c.base_seed = seed;
  return c;
}

// planted dump written to dir; returns paths
std::pair<fs::path, fs::path> planted_dump(const fs::path& dir, int layer) {
  fs::create_directories(dir);
  const auto recs = oracle::planted_records(60, 4, 8, layer, 1.5, 77);
  store::write_dataset(recs, oracle::manifest_for(recs, "planted", 77), dir / "acts.luma");
  std::vector<store::TokenLogProbRecord> lps;
  for (const auto& r : recs) {
    const float base = r.label ? -1.0f : -1.1f;
    lps.push_back({r.sample_id, r.label, {base, base - 0.5f, -0.2f}, {'a', 'b', 'c'}});
  }
  store::write_logprobs(lps, dir / "lp.lulp");
  return {dir / "acts.luma", dir / "lp.lulp"};
}

}  // namespace

TEST(Config, ParseApplyValidate) {
  auto c = parse_config("repeats = 5\nsplit.train = 0.7\nsplit.val = 0.3\nprobe.hidden = 32,16\nmink.k = 10\n");
  EXPECT_EQ(c.repeats, 5u);
  EXPECT_EQ(c.probe.hidden, (std::vector<std::size_t>{32, 16}));
  EXPECT_DOUBLE_EQ(c.mink_k, 10.0);
  EXPECT_NO_THROW(c.validate());
  apply_setting(c, "probe.hidden", "none");
  EXPECT_TRUE(c.probe.hidden.empty());
  EXPECT_THROW(parse_config("nonsense.key = 1\n"), ValidationError);
  EXPECT_THROW(parse_config("repeats = abc\n"), ValidationError);
  EXPECT_THROW(parse_config("split.train = 0.7\n").validate(), ValidationError);
  EXPECT_THROW(parse_config("repeats = 0\n").validate(), ValidationError);
  EXPECT_THROW(parse_config("source = import\n").validate(), ValidationError);
}

TEST(Config, TextRoundTrip) {
  auto c = small_toy("x");
  const auto text = config_to_text(c);
  EXPECT_EQ(config_to_text(parse_config(text)), text);
}

TEST(Samples, RoundTripAndErrors) {
  const auto dir = fresh_dir("samples");
  fs::create_directories(dir);
  std::vector<Sample> s = {{1, "hello world", ""}, {0, "other text", "img/a.pgm"}};
  write_samples(s, dir / "s.tsv");
  const auto back = read_samples(dir / "s.tsv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].image_path, "img/a.pgm");
  EXPECT_EQ(back[0].text, "hello world");
  std::ofstream(dir / "bad.tsv") << "7\tfoo\n";
  EXPECT_THROW(read_samples(dir / "bad.tsv"), ValidationError);
}

TEST(Improvement, Formula) {
  EXPECT_DOUBLE_EQ(improvement_percent(0.6, 0.5), 20.0);
  EXPECT_DOUBLE_EQ(improvement_percent(0.5, 0.5), 0.0);
  EXPECT_THROW(improvement_percent(0.5, 0.0), ValidationError);
}

TEST(RunAudit, ToySmokeShapesAndPairing) {
  const auto out = fresh_dir("toy");
  const auto cfg = small_toy(out);
  const auto rep = run_audit(cfg);
  for (auto f : {"summary.json", "layer_auc.csv", "baselines.csv", "bias.csv", "overlap.csv", "activations.luma",
                 "activations.luma.manifest.json", "logprobs.lulp", "ref_logprobs.lulp", "samples.tsv", "toy_lm.bin",
                 "ref_lm.bin"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  EXPECT_FALSE(fs::exists(out / ".lumia-staging"));

  ASSERT_EQ(rep.sweep.streams.size(), 1u);
  EXPECT_EQ(rep.sweep.streams[0].layers.size(), 2u);
  EXPECT_EQ(lines(slurp(out / "layer_auc.csv")).size(), 1u + 1 * 2 * 2);
  ASSERT_EQ(rep.baselines.size(), 4u);
  EXPECT_EQ(lines(slurp(out / "baselines.csv")).size(), 1u + 4 * 2);
  ASSERT_TRUE(rep.training.has_value());
  EXPECT_EQ(rep.training->epoch_loss.size(), 3u);

  // baselines recomputed from the dumps on the recorded validation ids
  const auto lps = store::read_logprobs(out / "logprobs.lulp");
  const auto refs = store::read_logprobs(out / "ref_logprobs.lulp");
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < lps.size(); ++i) index[lps[i].sample_id] = i;
  ASSERT_EQ(rep.validation_ids.size(), 2u);
  for (std::size_t r = 0; r < 2; ++r) {
    std::vector<std::size_t> idx;
    for (const auto& id : rep.validation_ids[r]) idx.push_back(index.at(id));
    for (const auto& row : rep.baselines) {
      const auto set = baselines::score_records(row.method, lps, cfg.mink_k, refs);
      EXPECT_NEAR(baselines::baseline_auc(set, idx), row.repeat_auc[r], 1e-12) << baselines::method_name(row.method);
    }
  }

  // improvements recompute from the stored numbers
  const auto j = nlohmann::json::parse(slurp(out / "summary.json"));
  EXPECT_EQ(j.at("schema_version"), 1);
  for (const auto& imp : j.at("improvements")) {
    const double probe = imp.at("probe_auc");
    const double base = imp.at("baseline_auc");
    EXPECT_NEAR(imp.at("improvement_percent").get<double>(), (probe - base) / base * 100.0, 1e-9);
  }
  EXPECT_EQ(j.at("best").at("layer"), rep.best_layer);

  // replotting the CSV gives its maximum at l*
  std::map<std::size_t, double> sums;
  for (const auto& l : lines(slurp(out / "layer_auc.csv"))) {
    if (l.rfind("stream", 0) == 0) continue;
    std::istringstream in(l);
    std::string stream, layer, repeat, auc;
    std::getline(in, stream, ',');
    std::getline(in, layer, ',');
    std::getline(in, repeat, ',');
    std::getline(in, auc, ',');
    sums[std::stoul(layer)] += std::stod(auc);
  }
  std::size_t arg = 0;
  for (const auto& [l, s] : sums)
    if (s > sums[arg] + 1e-12) arg = l;
  EXPECT_EQ(arg, rep.best_layer);
  ASSERT_TRUE(rep.text_bias.has_value());
  EXPECT_TRUE(rep.text_bias->blind.has_value());
}

TEST(RunAudit, SameSeedIsByteIdentical) {
  const auto a = fresh_dir("det_a");
  const auto b = fresh_dir("det_b");
  run_audit(small_toy(a, 9));
  run_audit(small_toy(b, 9));
  for (auto f : {"activations.luma", "logprobs.lulp", "ref_logprobs.lulp", "layer_auc.csv", "baselines.csv",
                 "bias.csv", "overlap.csv", "samples.tsv", "toy_lm.bin"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
}

TEST(RunAudit, SingleRepeatHasZeroStd) {
  const auto out = fresh_dir("one");
  auto cfg = small_toy(out);
  cfg.repeats = 1;
  const auto rep = run_audit(cfg);
  for (const auto& l : rep.sweep.streams[0].layers) EXPECT_EQ(l.std_auc, 0.0);
  for (const auto& b : rep.baselines) EXPECT_EQ(b.std_auc, 0.0);
}

TEST(RunAudit, ImportedPlantedLayer) {
  const auto dir = fresh_dir("import");
  const auto [acts, lps] = planted_dump(dir / "in", 3);
  PipelineConfig cfg;
  cfg.source = Source::kImport;
  cfg.import_activations = acts;
  cfg.import_logprobs = lps;
  cfg.out_dir = dir / "out";
  const auto rep = run_audit(cfg);
  EXPECT_EQ(rep.best_layer, 3u);
  EXPECT_EQ(rep.dataset_name, "planted");
  EXPECT_EQ(rep.baselines.size(), 3u);  // no reference log-probs
  EXPECT_EQ(lines(slurp(dir / "out" / "layer_auc.csv")).size(), 1u + 4 * 3);

  cfg.import_logprobs.clear();
  cfg.out_dir = dir / "out2";
  const auto probe_only = run_audit(cfg);
  EXPECT_TRUE(probe_only.baselines.empty());
  EXPECT_EQ(probe_only.best_layer, 3u);
}

TEST(RunAudit, FailureCarriesStageAndCleansUp) {
  const auto dir = fresh_dir("fail");
  const auto [acts, lps] = planted_dump(dir / "in", 1);
  auto bytes = slurp(acts);
  bytes.resize(bytes.size() - 7);
  std::ofstream(acts, std::ios::binary | std::ios::trunc) << bytes;
  PipelineConfig cfg;
  cfg.source = Source::kImport;
  cfg.import_activations = acts;
  cfg.out_dir = dir / "out";
  try {
    run_audit(cfg);
    FAIL();
  } catch (const CorruptionError&) {
    FAIL() << "stage context should wrap the error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kCorruption);
    EXPECT_NE(std::string(e.what()).find("stage 'load'"), std::string::npos) << e.what();
  }
  ASSERT_TRUE(fs::exists(dir / "out"));
  EXPECT_TRUE(fs::is_empty(dir / "out"));
}

TEST(AlignInputs, LabelDisagreementAndUnmatched) {
  auto recs = oracle::planted_records(3, 1, 2, -1, 0, 1);
  std::vector<store::TokenLogProbRecord> lps;
  for (std::size_t i = 1; i < recs.size(); ++i) lps.push_back({recs[i].sample_id, recs[i].label, {-1.0f}, {}});
  const auto in = align_inputs("x", recs, lps, {});
  EXPECT_EQ(in.activations.size(), 5u);
  EXPECT_EQ(in.dropped_unmatched, 1u);
  for (std::size_t i = 0; i < in.activations.size(); ++i) EXPECT_EQ(in.activations[i].sample_id, in.log_probs[i].sample_id);
  lps[0].label ^= 1;
  EXPECT_THROW(align_inputs("x", recs, lps, {}), ValidationError);
}

#ifdef LUMIA_CLI_PATH
namespace {
int run_cli(const std::string& args) {
  const std::string cmd = std::string(LUMIA_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}
}  // namespace

TEST(Cli, ExitCodes) {
  const auto dir = fresh_dir("cli");
  const auto [acts, lps] = planted_dump(dir / "in", 2);
  EXPECT_EQ(run_cli("audit --out " + (dir / "ok").string() + " --repeats 1 --import " + acts.string() + "," + lps.string()), 0);
  EXPECT_TRUE(fs::exists(dir / "ok" / "summary.json"));
  EXPECT_EQ(run_cli("report --out " + (dir / "ok").string()), 0);
  EXPECT_EQ(run_cli("audit --out " + (dir / "bad") .string() + " --repeats 0 --import " + acts.string()), 2);
  EXPECT_EQ(run_cli("audit --set no.such.key=1"), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("audit --out " + (dir / "io").string() + " --import " + (dir / "missing.luma").string()), 1);
  std::ofstream(dir / "in" / "acts.luma", std::ios::binary | std::ios::trunc) << "LUMX";
  EXPECT_EQ(run_cli("audit --out " + (dir / "fmt").string() + " --import " + acts.string()), 2);
}

TEST(Cli, StagedCommandsAndBias) {
  const auto dir = fresh_dir("cli_stages");
  fs::create_directories(dir);
  {
    std::ofstream cfg(dir / "cfg.txt");
    cfg << config_to_text(small_toy(dir / "w"));
  }
  const std::string common = "--config " + (dir / "cfg.txt").string() + " --out " + (dir / "w").string();
  EXPECT_EQ(run_cli("gen-corpus " + common), 0);
  EXPECT_TRUE(fs::exists(dir / "w" / "samples.tsv"));
  EXPECT_EQ(run_cli("train-toy " + common), 0);
  EXPECT_TRUE(fs::exists(dir / "w" / "toy_lm.bin"));
  EXPECT_EQ(run_cli("extract " + common), 0);
  EXPECT_TRUE(fs::exists(dir / "w" / "activations.luma"));
  EXPECT_EQ(run_cli("bias " + common), 0);
  EXPECT_TRUE(fs::exists(dir / "w" / "overlap.csv"));

  fs::create_directories(dir / "imgs_m");
  fs::create_directories(dir / "imgs_n");
  for (int i = 0; i < 3; ++i) {
    bias::write_pgm(bias::make_image(8, 8, static_cast<std::uint8_t>(i * 40)), dir / "imgs_m" / (std::to_string(i) + ".pgm"));
    bias::write_pgm(bias::make_image(8, 8, static_cast<std::uint8_t>(i * 50)), dir / "imgs_n" / (std::to_string(i) + ".pgm"));
  }
  EXPECT_EQ(run_cli("bias --out " + (dir / "b").string() + " --member-images " + (dir / "imgs_m").string() +
                    " --nonmember-images " + (dir / "imgs_n").string()),
            0);
  const auto csv = lines(slurp(dir / "b" / "bias.csv"));
  ASSERT_GE(csv.size(), 3u);
  EXPECT_EQ(csv[0], "class,hv,ssim");
}
#endif
