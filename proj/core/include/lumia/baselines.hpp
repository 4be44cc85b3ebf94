#pragma once

// Output-based membership scores over per-token log-probabilities.
// Every score is oriented so that higher means more member-like.

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "lumia/activation_store.hpp"
#include "lumia/metrics.hpp"

namespace lumia::baselines {

enum class Method { kLoss, kZlib, kMinK, kReference };

std::string_view method_name(Method m);

inline constexpr int kZlibLevel = 6;
inline constexpr double kDefaultMinKPercent = 20.0;

double loss_score(const store::TokenLogProbRecord& record);
/// Mean of the ceil(k * L / 100) smallest log-probs. k in (0, 100].
double mink_score(const store::TokenLogProbRecord& record, double k_percent);
/// DEFLATE-compressed size of raw_bytes at kZlibLevel.
std::size_t compressed_size(std::span<const std::uint8_t> bytes);
/// mean(log_probs) / compressed_size(raw_bytes).
double zlib_score(const store::TokenLogProbRecord& record);
/// mean(target) - mean(reference); ids must match.
double ref_score(const store::TokenLogProbRecord& target, const store::TokenLogProbRecord& reference);

struct BaselineScoreSet {
  Method method = Method::kLoss;
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
};

/// Scores every record. References are required for kReference and are
/// matched to targets by position (same sample_id in the same order).
BaselineScoreSet score_records(Method method, std::span<const store::TokenLogProbRecord> records,
                               double k_percent = kDefaultMinKPercent,
                               std::span<const store::TokenLogProbRecord> references = {});

/// AUC over all samples in the set.
double baseline_auc(const BaselineScoreSet& set);
/// AUC restricted to the given sample indices (a validation split).
double baseline_auc(const BaselineScoreSet& set, std::span<const std::size_t> indices);

}  // namespace lumia::baselines
