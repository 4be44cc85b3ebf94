#pragma once

// Per-layer membership probes: small MLPs over token-averaged activations
// with a single logit output, trained with Adam on mean binary cross-entropy.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "lumia/activation_store.hpp"

namespace lumia::probe {

struct ProbeConfig {
  std::vector<std::size_t> hidden{64};  // empty = logistic probe
  double dropout = 0.2;
  double learning_rate = 1e-3;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  /// Throws ValidationError on out-of-range fields.
  void validate() const;
};

enum class HiddenActivation : std::uint8_t { kRelu = 0 };

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

/// Per-feature z-score fitted on a training split.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd inv_scale;

  /// Features with zero variance get unit scale.
  static Standardizer fit(const Eigen::MatrixXd& rows);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& rows) const;
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
};

struct ProbeModel {
  std::vector<DenseLayer> layers;  // last layer has one output
  HiddenActivation activation = HiddenActivation::kRelu;
  /// Applied to raw inputs before the first layer when present.
  std::optional<Standardizer> input_scaler;

  std::size_t input_dim() const;
  std::size_t parameter_count() const;
};

/// Gaussian init scaled by 1/sqrt(fan_in), zero biases.
ProbeModel init_probe(std::size_t input_dim, std::span<const std::size_t> hidden, std::uint64_t seed);

double probe_logit(const ProbeModel& model, std::span<const double> x);
/// Sigmoid of the logit; dropout is never applied here.
double probe_forward(const ProbeModel& model, std::span<const double> x);

/// Labelled rows; y holds 0/1.
struct Batch {
  Eigen::MatrixXd x;  // n x d
  Eigen::VectorXd y;  // n
};

struct Gradients {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;
};

/// Mean binary cross-entropy of the logits against y. Inputs are fed to the
/// layers as given (no input_scaler).
double mean_bce(const ProbeModel& model, const Batch& batch);

/// Gradient of mean_bce with respect to every weight and bias.
Gradients probe_grad(const ProbeModel& model, const Batch& batch);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  Gradients m;
  Gradients v;
};

AdamState init_adam(const ProbeModel& model);
void adam_step(ProbeModel& model, const Gradients& grads, AdamState& state, double learning_rate);

struct TrainResult {
  ProbeModel model;  // parameters from the best-validation epoch
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;  // 1-based
  double best_val_loss = 0.0;
  std::vector<double> train_loss;  // per epoch, dropout active
  std::vector<double> val_loss;    // per epoch
};

/// Trains on the rows as given; standardization is the caller's business.
TrainResult train_probe(const ProbeConfig& config, const Batch& train, const Batch& val);

/// Holds out a stratified fraction of `train` for early stopping and trains
/// on the rest, so a separate evaluation split never steers training.
TrainResult train_probe_holdout(const ProbeConfig& config, const Batch& train, double holdout_fraction = 0.125);

struct ScoredSamples {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
};

/// Collects one layer of one stream as an n x dim matrix.
Eigen::MatrixXd layer_matrix(std::span<const store::ActivationRecord> records,
                             std::string_view stream, std::size_t layer);

ScoredSamples predict_scores(const ProbeModel& model,
                             std::span<const store::ActivationRecord> records,
                             std::size_t layer, std::string_view stream);

void write_probe(const ProbeModel& model, const std::filesystem::path& path);
ProbeModel read_probe(const std::filesystem::path& path);

}  // namespace lumia::probe
