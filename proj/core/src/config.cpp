#include "lumia/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include "binary_io.hpp"
#include "lumia/error.hpp"

namespace lumia::pipeline {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ValidationError("config '" + std::string(key) + "': expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ValidationError("config '" + std::string(key) + "': expected an unsigned integer, got '" + std::string(v) + "'");
  }
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  // std::from_chars for double needs GCC 11+; strtod is fine for config text.
  const std::string s(v);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(out)) {
    throw ValidationError("config '" + std::string(key) + "': expected a number, got '" + s + "'");
  }
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw ValidationError("config '" + std::string(key) + "': expected true/false, got '" + std::string(v) + "'");
}

std::vector<std::size_t> to_size_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  if (v.empty() || v == "none") return out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const auto item = trim(v.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    out.push_back(to_size(key, item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  if (v.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

using Setter = std::function<void(PipelineConfig&, std::string_view, std::string_view)>;
using Getter = std::function<std::string(const PipelineConfig&)>;

struct Field {
  Setter set;
  Getter get;
};

const std::map<std::string, Field, std::less<>>& fields() {
  static const std::map<std::string, Field, std::less<>> table = [] {
    std::map<std::string, Field, std::less<>> t;
    const auto size_field = [&](const char* name, auto member) {
      t[name] = {[member](PipelineConfig& c, std::string_view k, std::string_view v) { member(c) = to_size(k, v); },
                 [member](const PipelineConfig& c) { return std::to_string(member(c)); }};
    };
    const auto double_field = [&](const char* name, auto member) {
      t[name] = {[member](PipelineConfig& c, std::string_view k, std::string_view v) { member(c) = to_double(k, v); },
                 [member](const PipelineConfig& c) { return fmt_double(member(c)); }};
    };
    const auto bool_field = [&](const char* name, auto member) {
      t[name] = {[member](PipelineConfig& c, std::string_view k, std::string_view v) { member(c) = to_bool(k, v); },
                 [member](const PipelineConfig& c) {
                   return std::string(member(c) ? "true" : "false");
                 }};
    };
    const auto path_field = [&](const char* name, auto member) {
      t[name] = {[member](PipelineConfig& c, std::string_view, std::string_view v) { member(c) = std::string(v); },
                 [member](const PipelineConfig& c) { return member(c).string(); }};
    };

    t["dataset"] = {[](PipelineConfig& c, std::string_view, std::string_view v) { c.dataset_name = std::string(v); },
                    [](const PipelineConfig& c) { return c.dataset_name; }};
    t["source"] = {[](PipelineConfig& c, std::string_view k, std::string_view v) {
                     if (v == "toy") c.source = Source::kToyGenerate;
                     else if (v == "import") c.source = Source::kImport;
                     else throw ValidationError("config '" + std::string(k) + "': expected toy or import");
                   },
                   [](const PipelineConfig& c) { return std::string(c.source == Source::kImport ? "import" : "toy"); }};
    path_field("import.activations", [](auto& c) -> auto& { return c.import_activations; });
    path_field("import.logprobs", [](auto& c) -> auto& { return c.import_logprobs; });
    path_field("import.reference", [](auto& c) -> auto& { return c.import_reference; });
    path_field("out", [](auto& c) -> auto& { return c.out_dir; });

    t["seed"] = {[](PipelineConfig& c, std::string_view k, std::string_view v) { c.base_seed = to_u64(k, v); },
                 [](const PipelineConfig& c) { return std::to_string(c.base_seed); }};
    size_field("repeats", [](auto& c) -> auto& { return c.repeats; });
    double_field("split.train", [](auto& c) -> auto& { return c.train_fraction; });
    double_field("split.val", [](auto& c) -> auto& { return c.val_fraction; });
    double_field("mink.k", [](auto& c) -> auto& { return c.mink_k; });

    size_field("toy.vocab_size", [](auto& c) -> auto& { return c.toy.vocab_size; });
    size_field("toy.layers", [](auto& c) -> auto& { return c.toy.n_layers; });
    size_field("toy.d_model", [](auto& c) -> auto& { return c.toy.d_model; });
    size_field("toy.heads", [](auto& c) -> auto& { return c.toy.n_heads; });
    size_field("toy.context", [](auto& c) -> auto& { return c.toy.max_context; });
    size_field("toy.ff_width", [](auto& c) -> auto& { return c.toy.ff_width; });

    size_field("train.epochs", [](auto& c) -> auto& { return c.lm_train.epochs; });
    double_field("train.lr", [](auto& c) -> auto& { return c.lm_train.learning_rate; });
    size_field("train.batch", [](auto& c) -> auto& { return c.lm_train.batch_size; });
    double_field("train.target_loss", [](auto& c) -> auto& { return c.lm_train.target_loss; });

    size_field("corpus.members", [](auto& c) -> auto& { return c.corpus.member_count; });
    size_field("corpus.nonmembers", [](auto& c) -> auto& { return c.corpus.nonmember_count; });
    size_field("corpus.min_length", [](auto& c) -> auto& { return c.corpus.min_length; });
    size_field("corpus.max_length", [](auto& c) -> auto& { return c.corpus.max_length; });
    size_field("corpus.repetition", [](auto& c) -> auto& { return c.corpus.repetition_factor; });
    double_field("corpus.shift", [](auto& c) -> auto& { return c.corpus.distribution_shift; });
    size_field("corpus.branching", [](auto& c) -> auto& { return c.corpus.branching; });
    double_field("corpus.noise_max", [](auto& c) -> auto& { return c.corpus.noise_max; });

    bool_field("reference.enabled", [](auto& c) -> auto& { return c.reference_model; });
    size_field("reference.d_model", [](auto& c) -> auto& { return c.reference_d_model; });

    t["probe.hidden"] = {
        [](PipelineConfig& c, std::string_view k, std::string_view v) { c.probe.hidden = to_size_list(k, v); },
        [](const PipelineConfig& c) { return join_sizes(c.probe.hidden); }};
    double_field("probe.dropout", [](auto& c) -> auto& { return c.probe.dropout; });
    double_field("probe.lr", [](auto& c) -> auto& { return c.probe.learning_rate; });
    size_field("probe.epochs", [](auto& c) -> auto& { return c.probe.max_epochs; });
    size_field("probe.patience", [](auto& c) -> auto& { return c.probe.patience; });
    size_field("probe.batch", [](auto& c) -> auto& { return c.probe.batch_size; });

    size_field("bias.ngram", [](auto& c) -> auto& { return c.ngram_n; });
    double_field("bias.overlap", [](auto& c) -> auto& { return c.overlap_p; });
    bool_field("bias.blind", [](auto& c) -> auto& { return c.blind_baseline; });
    size_field("bias.pair_budget", [](auto& c) -> auto& { return c.pair_budget; });
    return t;
  }();
  return table;
}

}  // namespace

void PipelineConfig::validate() const {
  if (repeats < 1) throw ValidationError("repeats must be >= 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0) || !(val_fraction > 0.0 && val_fraction < 1.0) ||
      std::abs(train_fraction + val_fraction - 1.0) > 1e-9) {
    throw ValidationError("split fractions must be in (0, 1) and sum to 1");
  }
  if (!(mink_k > 0.0 && mink_k <= 100.0)) throw ValidationError("mink.k must be in (0, 100]");
  if (ngram_n < 1) throw ValidationError("bias.ngram must be >= 1");
  if (!(overlap_p >= 0.0 && overlap_p <= 1.0)) throw ValidationError("bias.overlap must be in [0, 1]");
  if (pair_budget < 1) throw ValidationError("bias.pair_budget must be >= 1");
  probe.validate();
  if (source == Source::kImport) {
    if (import_activations.empty()) throw ValidationError("import source needs import.activations");
  } else {
    toy.validate();
    corpus.validate();
    if (corpus.vocab_size != toy.vocab_size) throw ValidationError("corpus and toy LM vocab sizes differ");
    if (lm_train.batch_size < 1 || !(lm_train.learning_rate > 0.0)) throw ValidationError("bad toy LM training options");
    if (reference_model) {
      const std::size_t d = reference_d_model ? reference_d_model : toy.d_model / 2;
      if (d < toy.n_heads || d % toy.n_heads != 0) {
        throw ValidationError("reference d_model must be a positive multiple of toy.heads");
      }
    }
  }
}

void apply_setting(PipelineConfig& config, std::string_view key, std::string_view value) {
  const auto& table = fields();
  const auto it = table.find(key);
  if (it == table.end()) throw ValidationError("unknown config key '" + std::string(key) + "'");
  it->second.set(config, key, trim(value));
  if (key == "toy.vocab_size") config.corpus.vocab_size = config.toy.vocab_size;
}

PipelineConfig parse_config(std::string_view text) {
  PipelineConfig config;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (!line.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ValidationError("config line " + std::to_string(line_no) + ": expected key = value");
      }
      apply_setting(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  return config;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  return parse_config(detail::read_text_file(path));
}

std::string config_to_text(const PipelineConfig& config) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(config) + "\n";
  return out;
}

}  // namespace lumia::pipeline
