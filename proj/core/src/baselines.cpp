#include "lumia/baselines.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lumia/error.hpp"

namespace lumia::baselines {
namespace {

double mean_of(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += x;
  return s / static_cast<double>(v.size());
}

void require_logprobs(const store::TokenLogProbRecord& r) {
  if (r.log_probs.empty()) throw ValidationError("record '" + r.sample_id + "' has no log-probs");
}

}  // namespace

std::string_view method_name(Method m) {
  switch (m) {
    case Method::kLoss: return "loss";
    case Method::kZlib: return "zlib";
    case Method::kMinK: return "mink";
    case Method::kReference: return "ref";
  }
  return "unknown";
}

double loss_score(const store::TokenLogProbRecord& record) {
  require_logprobs(record);
  return mean_of(record.log_probs);
}

double mink_score(const store::TokenLogProbRecord& record, double k_percent) {
  require_logprobs(record);
  if (!(k_percent > 0.0 && k_percent <= 100.0)) throw ValidationError("min-k percent must be in (0, 100]");
  const std::size_t len = record.log_probs.size();
  auto count = static_cast<std::size_t>(std::ceil(k_percent * static_cast<double>(len) / 100.0 - 1e-12));
  count = std::clamp<std::size_t>(count, 1, len);
  if (count == len) return mean_of(record.log_probs);
  std::vector<float> sorted(record.log_probs);
  std::partial_sort(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(count), sorted.end());
  // Summed in ascending order, same as the full-length path would see them.
  std::sort(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(count));
  return mean_of(std::span(sorted).first(count));
}

std::size_t compressed_size(std::span<const std::uint8_t> bytes) {
  uLongf bound = compressBound(static_cast<uLong>(bytes.size()));
  std::vector<Bytef> out(bound);
  const int rc = compress2(out.data(), &bound, bytes.data(), static_cast<uLong>(bytes.size()), kZlibLevel);
  if (rc != Z_OK) throw RuntimeError("zlib compress2 failed with code " + std::to_string(rc));
  return bound;
}

double zlib_score(const store::TokenLogProbRecord& record) {
  require_logprobs(record);
  if (record.raw_bytes.empty()) throw ValidationError("record '" + record.sample_id + "' has empty text");
  return mean_of(record.log_probs) / static_cast<double>(compressed_size(record.raw_bytes));
}

double ref_score(const store::TokenLogProbRecord& target, const store::TokenLogProbRecord& reference) {
  if (target.sample_id != reference.sample_id) {
    throw ValidationError("reference record '" + reference.sample_id + "' does not match target '" +
                          target.sample_id + "'");
  }
  require_logprobs(target);
  require_logprobs(reference);
  return mean_of(target.log_probs) - mean_of(reference.log_probs);
}

BaselineScoreSet score_records(Method method, std::span<const store::TokenLogProbRecord> records,
                               double k_percent, std::span<const store::TokenLogProbRecord> references) {
  if (method == Method::kReference && references.size() != records.size()) {
    throw ValidationError("reference attack needs one reference record per target");
  }
  BaselineScoreSet set;
  set.method = method;
  set.scores.reserve(records.size());
  set.labels.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    double s = 0.0;
    switch (method) {
      case Method::kLoss: s = loss_score(records[i]); break;
      case Method::kZlib: s = zlib_score(records[i]); break;
      case Method::kMinK: s = mink_score(records[i], k_percent); break;
      case Method::kReference: s = ref_score(records[i], references[i]); break;
    }
    if (!std::isfinite(s)) throw RuntimeError("non-finite score for '" + records[i].sample_id + "'");
    set.scores.push_back(s);
    set.labels.push_back(records[i].label);
  }
  return set;
}

double baseline_auc(const BaselineScoreSet& set) { return metrics::auc_rank(set.scores, set.labels); }

double baseline_auc(const BaselineScoreSet& set, std::span<const std::size_t> indices) {
  std::vector<double> s;
  std::vector<std::uint8_t> l;
  s.reserve(indices.size());
  l.reserve(indices.size());
  for (auto i : indices) {
    if (i >= set.scores.size()) throw ValidationError("baseline index out of range");
    s.push_back(set.scores[i]);
    l.push_back(set.labels[i]);
  }
  return metrics::auc_rank(s, l);
}

}  // namespace lumia::baselines
