#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lumia/activation_store.hpp"
#include "lumia/probe.hpp"

namespace lumia::metrics {

/// Attacks above this mean AUC count as successful.
inline constexpr double kSuccessAuc = 0.6;

/// Mann-Whitney AUC: (#{pos > neg} + 0.5 #{pos == neg}) / (n_pos n_neg),
/// computed from mid-ranks in O(n log n). Labels are 0/1.
double auc_rank(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct RocResult {
  std::vector<double> thresholds;  // +inf sentinel, then distinct scores descending
  std::vector<double> tpr;
  std::vector<double> fpr;
  double auc = 0.0;  // trapezoidal area
};

RocResult roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // population
};

Aggregate aggregate_repeats(std::span<const double> values);

/// One balanced train/validation split, as indices into the dataset.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

struct SplitPlan {
  std::vector<Split> repeats;
};

/// Per repeat: the larger class is downsampled to the smaller one, then each
/// class is shuffled and cut at train_fraction. Both splits end up with equal
/// member and non-member counts. Index lists are sorted ascending.
SplitPlan make_split_plan(std::span<const std::uint8_t> labels, std::size_t repeats,
                          double train_fraction, std::uint64_t base_seed);

struct LayerResult {
  std::size_t layer = 0;
  std::vector<double> repeat_auc;
  double mean_auc = 0.0;
  double std_auc = 0.0;
  bool success = false;  // mean_auc > kSuccessAuc
};

struct StreamSweep {
  std::string stream;
  std::vector<LayerResult> layers;
  std::size_t best_layer = 0;  // ties resolve to the lowest index
};

struct LayerSweepReport {
  std::vector<StreamSweep> streams;
  std::size_t repeats = 0;
};

/// Fills best_layer, per-layer mean/std and success flags from repeat_auc.
void finalize_sweep(StreamSweep& sweep);

/// Trains a probe per (stream, layer, repeat) on the train split (inputs
/// z-scored with train statistics) and scores the validation split. Probe
/// seeds derive from (base_seed, stream, layer, repeat).
LayerSweepReport layer_sweep(std::span<const store::ActivationRecord> records,
                             const probe::ProbeConfig& config, const SplitPlan& plan,
                             std::uint64_t base_seed);

/// Validation AUC of one probe trained on one split.
double probe_split_auc(std::span<const store::ActivationRecord> records, std::string_view stream,
                       std::size_t layer, const Split& split, const probe::ProbeConfig& config);

}  // namespace lumia::metrics
