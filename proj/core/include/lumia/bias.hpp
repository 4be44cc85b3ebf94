#pragma once

// Dataset bias measures: n-gram overlap between pools, a model-blind text
// classifier, and image-pool similarity (average-hash variation, SSIM).

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "lumia/image.hpp"

namespace lumia::bias {

using Tokens = std::vector<std::string>;

/// Lowercased words; any non-alphanumeric byte separates words.
Tokens tokenize_words(std::string_view text);

/// Every length-N window over the member pool.
class NGramIndex {
 public:
  NGramIndex(std::size_t n, std::span<const Tokens> members);

  std::size_t n() const { return n_; }
  std::size_t size() const { return windows_.size(); }
  bool contains(std::span<const std::string> window) const;

 private:
  std::size_t n_;
  std::unordered_set<std::string> windows_;
};

/// 100 * (windows of the sample present in the index) / (windows of the sample).
double ngram_overlap(std::span<const std::string> sample, const NGramIndex& index);

struct OverlapReport {
  std::size_t n = 0;
  double max_overlap = 1.0;          // P, as a fraction
  std::vector<double> overlap;       // per non-member, percent
  double mean_overlap = 0.0;
  std::vector<std::size_t> retained; // indices with overlap / 100 <= P
  double retention_rate = 0.0;
};

/// Samples shorter than N are an error.
OverlapReport filter_by_overlap(std::span<const Tokens> nonmembers, const NGramIndex& index, double max_overlap);

struct BlindOptions {
  std::size_t max_ngram = 2;      // unigrams up to this length
  std::size_t hash_dims = 1024;
  std::size_t repeats = 3;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

struct BlindResult {
  std::vector<double> repeat_auc;
  double mean_auc = 0.0;
};

/// Bag-of-n-grams logistic classifier on text alone; member vs non-member
/// validation AUC averaged over balanced repeats.
BlindResult blind_baseline_auc(std::span<const std::string> member_texts,
                               std::span<const std::string> nonmember_texts, const BlindOptions& options = {});

/// 8x8 block-mean, bit = pixel > mean, first pixel in the most significant bit.
std::uint64_t average_hash(const GrayImage& image);
int hamming_distance(std::uint64_t a, std::uint64_t b);

/// All pairs when they fit in the budget, otherwise `budget` seeded draws.
std::vector<std::pair<std::size_t, std::size_t>> sample_pairs(std::size_t pool_size, std::size_t budget,
                                                             std::uint64_t seed);

/// Mean normalized Hamming distance (percent) over sampled pairs.
double hash_variation(std::span<const GrayImage> pool, std::size_t pair_budget, std::uint64_t seed);

inline constexpr std::size_t kSsimWindow = 8;
inline constexpr double kSsimC1 = (0.01 * 255) * (0.01 * 255);
inline constexpr double kSsimC2 = (0.03 * 255) * (0.03 * 255);

/// Mean local SSIM over 8x8 uniform windows at stride 1.
double ssim(const GrayImage& a, const GrayImage& b);

/// Mean SSIM over sampled pairs; each pair is downscaled to the smaller
/// common dims first.
double pool_ssim(std::span<const GrayImage> pool, std::size_t pair_budget, std::uint64_t seed);

struct ImagePoolStats {
  double hv = 0.0;
  double ssim = 0.0;
};

struct ImageBiasSummary {
  ImagePoolStats members;
  ImagePoolStats nonmembers;
  ImagePoolStats abs_difference;
};

ImageBiasSummary image_bias(std::span<const GrayImage> members, std::span<const GrayImage> nonmembers,
                            std::size_t pair_budget, std::uint64_t seed);

}  // namespace lumia::bias
