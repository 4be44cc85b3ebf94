#pragma once

// Reference implementations used as test oracles. They are slow on purpose
// and share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "lumia/activation_store.hpp"
#include "lumia/probe.hpp"

namespace oracle {

// AUC by enumerating every (member, non-member) pair.
inline double pair_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Central difference of f at x[i].
inline double central_difference(const std::function<double()>& f, double& x, double h) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1e-6, std::abs(a), std::abs(b)});
}

// Gaussian noise records; members get +shift on the first `signal_dims`
// components of `planted_layer` only. planted_layer < 0 means pure noise.
inline std::vector<lumia::store::ActivationRecord> planted_records(std::size_t per_class, std::size_t layers,
                                                                   std::size_t dim, int planted_layer,
                                                                   double shift, std::uint64_t seed,
                                                                   std::size_t signal_dims = 4) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<lumia::store::ActivationRecord> out;
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    lumia::store::ActivationRecord r;
    r.label = i < per_class ? 1 : 0;
    r.sample_id = (r.label ? "m" : "n") + std::to_string(i);
    r.token_count = 8;
    lumia::store::StreamActivations s;
    s.name = "text";
    for (std::size_t l = 0; l < layers; ++l) {
      std::vector<float> v(dim);
      for (std::size_t d = 0; d < dim; ++d) {
        double x = nd(gen);
        if (r.label == 1 && static_cast<int>(l) == planted_layer && d < signal_dims) x += shift;
        v[d] = static_cast<float>(x);
      }
      s.layers.push_back(std::move(v));
    }
    r.streams.push_back(std::move(s));
    out.push_back(std::move(r));
  }
  return out;
}

inline lumia::store::DatasetManifest manifest_for(const std::vector<lumia::store::ActivationRecord>& records,
                                                  std::string name = "fixture", std::uint64_t seed = 0) {
  lumia::store::DatasetManifest m;
  m.dataset_name = std::move(name);
  m.streams = lumia::store::layout_of(records.front());
  for (const auto& r : records) (r.label ? m.member_count : m.nonmember_count)++;
  m.seed = seed;
  return m;
}

// Central differences are meaningless across a ReLU kink. True when any
// hidden pre-activation for any row lies within `margin` of zero.
inline bool near_relu_kink(const lumia::probe::ProbeModel& model, const Eigen::MatrixXd& x, double margin) {
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l + 1 < model.layers.size(); ++l) {
    const Eigen::MatrixXd z = (a * model.layers[l].weight.transpose()).rowwise() + model.layers[l].bias.transpose();
    if ((z.array().abs() < margin).any()) return true;
    a = z.cwiseMax(0.0);
  }
  return false;
}

}  // namespace oracle
