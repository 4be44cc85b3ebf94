#include "lumia/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lumia/error.hpp"
#include "lumia/seed.hpp"

namespace lumia::metrics {
namespace {

struct ClassCounts {
  std::size_t pos = 0;
  std::size_t neg = 0;
};

ClassCounts check_scored(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ValidationError("scores and labels differ in length");
  ClassCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 1) throw ValidationError("labels must be 0 or 1");
    if (std::isnan(scores[i])) throw ValidationError("NaN score");
    (labels[i] ? c.pos : c.neg)++;
  }
  if (c.pos == 0 || c.neg == 0) throw ValidationError("AUC needs both classes present");
  return c;
}

std::vector<std::size_t> argsort(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  return order;
}

}  // namespace

double auc_rank(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  const auto counts = check_scored(scores, labels);
  const auto order = argsort(scores);
  // Sum of positive mid-ranks, kept doubled so ties stay integral.
  std::uint64_t rank_sum_x2 = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::size_t pos_in_group = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      pos_in_group += labels[order[j]];
      ++j;
    }
    // Ranks i+1..j share the mid-rank (i+1+j)/2.
    rank_sum_x2 += pos_in_group * (i + 1 + j);
    i = j;
  }
  const double np = static_cast<double>(counts.pos);
  const double nn = static_cast<double>(counts.neg);
  const double u = static_cast<double>(rank_sum_x2) / 2.0 - np * (np + 1.0) / 2.0;
  return u / (np * nn);
}

RocResult roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  const auto counts = check_scored(scores, labels);
  auto order = argsort(scores);
  std::reverse(order.begin(), order.end());

  RocResult roc;
  roc.thresholds.push_back(std::numeric_limits<double>::infinity());
  roc.tpr.push_back(0.0);
  roc.fpr.push_back(0.0);

  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t i = 0;
  double area = 0.0;
  while (i < order.size()) {
    const double threshold = scores[order[i]];
    while (i < order.size() && scores[order[i]] == threshold) {
      (labels[order[i]] ? tp : fp)++;
      ++i;
    }
    const double tpr = static_cast<double>(tp) / static_cast<double>(counts.pos);
    const double fpr = static_cast<double>(fp) / static_cast<double>(counts.neg);
    area += (fpr - roc.fpr.back()) * (tpr + roc.tpr.back()) / 2.0;
    roc.thresholds.push_back(threshold);
    roc.tpr.push_back(tpr);
    roc.fpr.push_back(fpr);
  }
  roc.auc = area;
  return roc;
}

Aggregate aggregate_repeats(std::span<const double> values) {
  if (values.empty()) throw ValidationError("aggregate_repeats needs at least one value");
  Aggregate a;
  const double n = static_cast<double>(values.size());
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - a.mean) * (v - a.mean);
  a.std = std::sqrt(ss / n);
  return a;
}

SplitPlan make_split_plan(std::span<const std::uint8_t> labels, std::size_t repeats, double train_fraction,
                          std::uint64_t base_seed) {
  if (repeats < 1) throw ValidationError("repeats must be >= 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ValidationError("train fraction must be in (0, 1)");
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
  const std::size_t per_class = std::min(pos.size(), neg.size());
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(per_class) + 1e-9));
  if (n_train < 2 || per_class - n_train < 2) {
    throw ValidationError("degenerate split: need >= 2 samples per class in each split (have " +
                          std::to_string(per_class) + " per class)");
  }

  SplitPlan plan;
  for (std::size_t r = 0; r < repeats; ++r) {
    Rng rng(derive_seed(base_seed, "split", {r}));
    auto p = pos;
    auto q = neg;
    rng.shuffle(p.begin(), p.end());
    rng.shuffle(q.begin(), q.end());
    Split s;
    for (std::size_t k = 0; k < per_class; ++k) {
      auto& dst = k < n_train ? s.train : s.val;
      dst.push_back(p[k]);
      dst.push_back(q[k]);
    }
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.val.begin(), s.val.end());
    plan.repeats.push_back(std::move(s));
  }
  return plan;
}

void finalize_sweep(StreamSweep& sweep) {
  double best = -1.0;
  for (auto& layer : sweep.layers) {
    const auto agg = aggregate_repeats(layer.repeat_auc);
    layer.mean_auc = agg.mean;
    layer.std_auc = agg.std;
    layer.success = layer.mean_auc > kSuccessAuc;
    if (layer.mean_auc > best) {
      best = layer.mean_auc;
      sweep.best_layer = layer.layer;
    }
  }
}

double probe_split_auc(std::span<const store::ActivationRecord> records, std::string_view stream,
                       std::size_t layer, const Split& split, const probe::ProbeConfig& config) {
  const Eigen::MatrixXd all = probe::layer_matrix(records, stream, layer);
  const auto take = [&](const std::vector<std::size_t>& idx) {
    probe::Batch b{Eigen::MatrixXd(static_cast<Eigen::Index>(idx.size()), all.cols()),
                   Eigen::VectorXd(static_cast<Eigen::Index>(idx.size()))};
    for (std::size_t i = 0; i < idx.size(); ++i) {
      b.x.row(static_cast<Eigen::Index>(i)) = all.row(static_cast<Eigen::Index>(idx[i]));
      b.y(static_cast<Eigen::Index>(i)) = records[idx[i]].label;
    }
    return b;
  };
  probe::Batch train = take(split.train);
  probe::Batch val = take(split.val);
  const auto scaler = probe::Standardizer::fit(train.x);
  train.x = scaler.apply(train.x);
  val.x = scaler.apply(val.x);

  const auto result = probe::train_probe_holdout(config, train);
  std::vector<double> scores(split.val.size());
  std::vector<std::uint8_t> labels(split.val.size());
  for (std::size_t i = 0; i < split.val.size(); ++i) {
    const Eigen::VectorXd row = val.x.row(static_cast<Eigen::Index>(i)).transpose();
    scores[i] = probe::probe_logit(result.model, std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
    labels[i] = records[split.val[i]].label;
  }
  return auc_rank(scores, labels);
}

LayerSweepReport layer_sweep(std::span<const store::ActivationRecord> records, const probe::ProbeConfig& config,
                             const SplitPlan& plan, std::uint64_t base_seed) {
  if (records.empty()) throw ValidationError("layer_sweep on an empty dataset");
  if (plan.repeats.empty()) throw ValidationError("split plan holds no repeats");
  config.validate();
  const auto layout = store::layout_of(records.front());

  for (std::size_t r = 0; r < plan.repeats.size(); ++r) {
    for (const auto* part : {&plan.repeats[r].train, &plan.repeats[r].val}) {
      std::size_t pos = 0;
      for (auto i : *part) {
        if (i >= records.size()) throw ValidationError("split index out of range in repeat " + std::to_string(r));
        pos += records[i].label;
      }
      if (pos < 2 || part->size() - pos < 2) {
        // Checked up front, so the first probe it would break is layer 0.
        throw ValidationError("degenerate split in repeat " + std::to_string(r) + ", layer 0 of stream '" +
                              layout.front().name + "': fewer than 2 samples of a class");
      }
    }
  }

  LayerSweepReport report;
  report.repeats = plan.repeats.size();
  for (std::size_t s = 0; s < layout.size(); ++s) {
    StreamSweep sweep{layout[s].name, {}, 0};
    for (std::size_t l = 0; l < layout[s].layer_count(); ++l) {
      LayerResult cell{l, {}, 0.0, 0.0, false};
      for (std::size_t r = 0; r < plan.repeats.size(); ++r) {
        probe::ProbeConfig cfg = config;
        cfg.seed = derive_seed(base_seed, "probe", {s, l, r});
        try {
          cell.repeat_auc.push_back(probe_split_auc(records, layout[s].name, l, plan.repeats[r], cfg));
        } catch (const ValidationError& e) {
          throw ValidationError("stream " + layout[s].name + " layer " + std::to_string(l) + " repeat " +
                                std::to_string(r) + ": " + e.what());
        }
      }
      sweep.layers.push_back(std::move(cell));
    }
    finalize_sweep(sweep);
    report.streams.push_back(std::move(sweep));
  }
  return report;
}

}  // namespace lumia::metrics
