#include "lumia/bias.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <unordered_map>

#include "lumia/error.hpp"
#include "lumia/metrics.hpp"
#include "lumia/probe.hpp"
#include "lumia/seed.hpp"

namespace lumia::bias {
namespace {

constexpr char kJoin = '\x1f';

std::string join_window(std::span<const std::string> window) {
  std::string key;
  for (std::size_t i = 0; i < window.size(); ++i) {
    if (i) key += kJoin;
    key += window[i];
  }
  return key;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

Eigen::MatrixXd hashed_features(std::span<const std::string> texts, const BlindOptions& opt) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(texts.size()),
                                            static_cast<Eigen::Index>(opt.hash_dims));
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const Tokens tokens = tokenize_words(texts[i]);
    std::size_t windows = 0;
    for (std::size_t n = 1; n <= opt.max_ngram; ++n) {
      for (std::size_t s = 0; s + n <= tokens.size(); ++s) {
        const std::string key = std::to_string(n) + kJoin + join_window(std::span(tokens).subspan(s, n));
        x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(fnv1a(key) % opt.hash_dims)) += 1.0;
        ++windows;
      }
    }
    if (windows > 0) x.row(static_cast<Eigen::Index>(i)) /= static_cast<double>(windows);
  }
  return x;
}

void check_image(const GrayImage& img) {
  if (img.pixels.size() != img.width * img.height) throw ValidationError("image pixel count does not match dims");
}

// Identical texts always land on the same side of a split. With a plain
// per-class shuffle a text present in both pools can be a training member and
// a validation non-member at once, which drives the AUC below 0.5.
metrics::SplitPlan grouped_split(std::span<const std::string> texts, std::span<const std::uint8_t> labels,
                                 std::size_t repeats, double train_fraction, std::uint64_t seed) {
  std::unordered_map<std::string_view, std::size_t> group_of;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto [it, fresh] = group_of.try_emplace(texts[i], groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  metrics::SplitPlan plan;
  for (std::size_t r = 0; r < repeats; ++r) {
    Rng rng(derive_seed(seed, "blind.split", {r}));
    std::vector<std::size_t> order(groups.size());
    for (std::size_t g = 0; g < order.size(); ++g) order[g] = g;
    rng.shuffle(order.begin(), order.end());
    const auto cut = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(order.size()) + 1e-9));
    metrics::Split split;
    for (int side = 0; side < 2; ++side) {
      std::vector<std::size_t> pos, neg;
      const std::size_t lo = side == 0 ? 0 : cut;
      const std::size_t hi = side == 0 ? cut : order.size();
      for (std::size_t k = lo; k < hi; ++k)
        for (auto i : groups[order[k]]) (labels[i] ? pos : neg).push_back(i);
      // balance by downsampling the larger class
      auto& bigger = pos.size() > neg.size() ? pos : neg;
      rng.shuffle(bigger.begin(), bigger.end());
      bigger.resize(std::min(pos.size(), neg.size()));
      if (pos.size() < 2) {
        throw ValidationError("degenerate blind-baseline split in repeat " + std::to_string(r) +
                              ": fewer than 2 samples of a class");
      }
      auto& dst = side == 0 ? split.train : split.val;
      dst = pos;
      dst.insert(dst.end(), neg.begin(), neg.end());
      std::sort(dst.begin(), dst.end());
    }
    plan.repeats.push_back(std::move(split));
  }
  return plan;
}

}  // namespace

Tokens tokenize_words(std::string_view text) {
  Tokens out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

NGramIndex::NGramIndex(std::size_t n, std::span<const Tokens> members) : n_(n) {
  if (n < 1) throw ValidationError("n-gram length must be >= 1");
  for (const auto& m : members) {
    for (std::size_t s = 0; s + n <= m.size(); ++s) windows_.insert(join_window(std::span(m).subspan(s, n)));
  }
}

bool NGramIndex::contains(std::span<const std::string> window) const {
  return window.size() == n_ && windows_.contains(join_window(window));
}

double ngram_overlap(std::span<const std::string> sample, const NGramIndex& index) {
  const std::size_t n = index.n();
  if (sample.size() < n) {
    throw ValidationError("sample of " + std::to_string(sample.size()) + " tokens is shorter than N=" +
                          std::to_string(n));
  }
  const std::size_t windows = sample.size() - n + 1;
  std::size_t hits = 0;
  for (std::size_t s = 0; s < windows; ++s) hits += index.contains(sample.subspan(s, n)) ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(windows);
}

OverlapReport filter_by_overlap(std::span<const Tokens> nonmembers, const NGramIndex& index, double max_overlap) {
  if (!(max_overlap >= 0.0 && max_overlap <= 1.0)) throw ValidationError("overlap threshold P must be in [0, 1]");
  OverlapReport rep;
  rep.n = index.n();
  rep.max_overlap = max_overlap;
  double sum = 0.0;
  for (std::size_t i = 0; i < nonmembers.size(); ++i) {
    const double pct = ngram_overlap(nonmembers[i], index);
    rep.overlap.push_back(pct);
    sum += pct;
    if (pct / 100.0 <= max_overlap) rep.retained.push_back(i);
  }
  if (!nonmembers.empty()) {
    rep.mean_overlap = sum / static_cast<double>(nonmembers.size());
    rep.retention_rate = static_cast<double>(rep.retained.size()) / static_cast<double>(nonmembers.size());
  }
  return rep;
}

BlindResult blind_baseline_auc(std::span<const std::string> member_texts, std::span<const std::string> nonmember_texts,
                               const BlindOptions& options) {
  if (member_texts.empty() || nonmember_texts.empty()) throw ValidationError("blind baseline needs both pools");
  if (options.hash_dims < 1 || options.max_ngram < 1) throw ValidationError("blind baseline options out of range");

  std::vector<std::string> texts(member_texts.begin(), member_texts.end());
  texts.insert(texts.end(), nonmember_texts.begin(), nonmember_texts.end());
  std::vector<std::uint8_t> labels(member_texts.size(), 1);
  labels.resize(texts.size(), 0);

  const Eigen::MatrixXd features = hashed_features(texts, options);
  const auto plan = grouped_split(texts, labels, options.repeats, options.train_fraction, options.seed);
  probe::ProbeConfig cfg;
  cfg.hidden.clear();
  cfg.dropout = 0.0;
  cfg.learning_rate = 5e-3;
  cfg.patience = 5;

  BlindResult result;
  for (std::size_t r = 0; r < plan.repeats.size(); ++r) {
    const auto& split = plan.repeats[r];
    const auto take = [&](const std::vector<std::size_t>& idx) {
      probe::Batch b{Eigen::MatrixXd(static_cast<Eigen::Index>(idx.size()), features.cols()),
                     Eigen::VectorXd(static_cast<Eigen::Index>(idx.size()))};
      for (std::size_t i = 0; i < idx.size(); ++i) {
        b.x.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(idx[i]));
        b.y(static_cast<Eigen::Index>(i)) = labels[idx[i]];
      }
      return b;
    };
    probe::Batch train = take(split.train);
    probe::Batch val = take(split.val);
    const auto scaler = probe::Standardizer::fit(train.x);
    train.x = scaler.apply(train.x);
    val.x = scaler.apply(val.x);
    cfg.seed = derive_seed(options.seed, "blind.probe", {r});
    const auto trained = probe::train_probe_holdout(cfg, train);

    std::vector<double> scores(split.val.size());
    std::vector<std::uint8_t> val_labels(split.val.size());
    for (std::size_t i = 0; i < split.val.size(); ++i) {
      const Eigen::VectorXd row = val.x.row(static_cast<Eigen::Index>(i)).transpose();
      scores[i] = probe::probe_logit(trained.model, std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
      val_labels[i] = labels[split.val[i]];
    }
    result.repeat_auc.push_back(metrics::auc_rank(scores, val_labels));
  }
  result.mean_auc = metrics::aggregate_repeats(result.repeat_auc).mean;
  return result;
}

std::uint64_t average_hash(const GrayImage& image) {
  check_image(image);
  if (image.width < 8 || image.height < 8) throw ValidationError("average hash needs an image of at least 8x8");
  const auto cells = block_mean(image, 8, 8);
  double mean = 0.0;
  for (double c : cells) mean += c;
  mean /= 64.0;
  std::uint64_t hash = 0;
  for (double c : cells) hash = (hash << 1) | (c > mean ? 1u : 0u);
  return hash;
}

int hamming_distance(std::uint64_t a, std::uint64_t b) { return std::popcount(a ^ b); }

std::vector<std::pair<std::size_t, std::size_t>> sample_pairs(std::size_t pool_size, std::size_t budget,
                                                             std::uint64_t seed) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (pool_size < 2) return pairs;
  const std::uint64_t total = std::uint64_t{pool_size} * (pool_size - 1) / 2;
  if (total <= budget) {
    for (std::size_t i = 0; i < pool_size; ++i) {
      for (std::size_t j = i + 1; j < pool_size; ++j) pairs.emplace_back(i, j);
    }
    return pairs;
  }
  Rng rng(seed);
  pairs.reserve(budget);
  while (pairs.size() < budget) {
    const auto i = static_cast<std::size_t>(rng.below(pool_size));
    const auto j = static_cast<std::size_t>(rng.below(pool_size));
    if (i != j) pairs.emplace_back(std::min(i, j), std::max(i, j));
  }
  return pairs;
}

double hash_variation(std::span<const GrayImage> pool, std::size_t pair_budget, std::uint64_t seed) {
  if (pool.size() < 2) throw ValidationError("hash variation needs at least 2 images");
  if (pair_budget < 1) throw ValidationError("pair budget must be >= 1");
  std::vector<std::uint64_t> hashes;
  hashes.reserve(pool.size());
  for (const auto& img : pool) hashes.push_back(average_hash(img));
  const auto pairs = sample_pairs(pool.size(), pair_budget, seed);
  double sum = 0.0;
  for (const auto& [i, j] : pairs) sum += hamming_distance(hashes[i], hashes[j]) / 64.0 * 100.0;
  return sum / static_cast<double>(pairs.size());
}

double ssim(const GrayImage& a, const GrayImage& b) {
  check_image(a);
  check_image(b);
  if (a.width != b.width || a.height != b.height) {
    throw ValidationError("ssim needs equal dimensions (" + std::to_string(a.width) + "x" + std::to_string(a.height) +
                          " vs " + std::to_string(b.width) + "x" + std::to_string(b.height) + ")");
  }
  if (a.width < kSsimWindow || a.height < kSsimWindow) throw ValidationError("ssim needs images of at least 8x8");

  constexpr double n = static_cast<double>(kSsimWindow * kSsimWindow);
  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t y0 = 0; y0 + kSsimWindow <= a.height; ++y0) {
    for (std::size_t x0 = 0; x0 + kSsimWindow <= a.width; ++x0) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t y = y0; y < y0 + kSsimWindow; ++y) {
        for (std::size_t x = x0; x < x0 + kSsimWindow; ++x) {
          const double va = a.at(x, y);
          const double vb = b.at(x, y);
          sa += va;
          sb += vb;
          saa += va * va;
          sbb += vb * vb;
          sab += va * vb;
        }
      }
      const double ma = sa / n;
      const double mb = sb / n;
      const double var_a = saa / n - ma * ma;
      const double var_b = sbb / n - mb * mb;
      const double cov = sab / n - ma * mb;
      total += ((2 * ma * mb + kSsimC1) * (2 * cov + kSsimC2)) /
               ((ma * ma + mb * mb + kSsimC1) * (var_a + var_b + kSsimC2));
      ++windows;
    }
  }
  return total / static_cast<double>(windows);
}

double pool_ssim(std::span<const GrayImage> pool, std::size_t pair_budget, std::uint64_t seed) {
  if (pool.empty()) throw ValidationError("pool_ssim on an empty pool");
  if (pool.size() < 2) throw ValidationError("pool_ssim needs at least 2 images");
  if (pair_budget < 1) throw ValidationError("pair budget must be >= 1");
  const auto pairs = sample_pairs(pool.size(), pair_budget, seed);
  double sum = 0.0;
  for (const auto& [i, j] : pairs) {
    const std::size_t w = std::min(pool[i].width, pool[j].width);
    const std::size_t h = std::min(pool[i].height, pool[j].height);
    sum += ssim(resize_block_mean(pool[i], w, h), resize_block_mean(pool[j], w, h));
  }
  return sum / static_cast<double>(pairs.size());
}

ImageBiasSummary image_bias(std::span<const GrayImage> members, std::span<const GrayImage> nonmembers,
                            std::size_t pair_budget, std::uint64_t seed) {
  ImageBiasSummary s;
  s.members.hv = hash_variation(members, pair_budget, derive_seed(seed, "hv", {1}));
  s.members.ssim = pool_ssim(members, pair_budget, derive_seed(seed, "ssim", {1}));
  s.nonmembers.hv = hash_variation(nonmembers, pair_budget, derive_seed(seed, "hv", {0}));
  s.nonmembers.ssim = pool_ssim(nonmembers, pair_budget, derive_seed(seed, "ssim", {0}));
  s.abs_difference.hv = std::abs(s.members.hv - s.nonmembers.hv);
  s.abs_difference.ssim = std::abs(s.members.ssim - s.nonmembers.ssim);
  return s;
}

}  // namespace lumia::bias
