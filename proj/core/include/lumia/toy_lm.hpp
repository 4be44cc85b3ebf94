#pragma once

// A small causal transformer that stands in for a pretrained model at desk
// scale. Pre-norm blocks, learned positional embeddings, ReLU feed-forward,
// untied output projection. Hooks sit on the residual stream after each
// block.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "lumia/activation_store.hpp"
#include "lumia/corpus.hpp"

namespace lumia::toy {

struct ToyLMConfig {
  std::size_t vocab_size = 256;
  std::size_t n_layers = 4;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t max_context = 32;
  std::size_t ff_width = 128;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ToyLMConfig&) const = default;
};

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct BlockParamsT {
  Mat<Scalar> ln1_gain, ln1_bias;  // 1 x d
  Mat<Scalar> wq, wk, wv, wo;      // d x d
  Mat<Scalar> ln2_gain, ln2_bias;  // 1 x d
  Mat<Scalar> w1, b1;              // d x ff, 1 x ff
  Mat<Scalar> w2, b2;              // ff x d, 1 x d
};

template <typename Scalar>
struct ParamsT {
  Mat<Scalar> token_embedding;     // vocab x d
  Mat<Scalar> position_embedding;  // context x d
  std::vector<BlockParamsT<Scalar>> blocks;
  Mat<Scalar> lnf_gain, lnf_bias;  // 1 x d
  Mat<Scalar> w_out, b_out;        // d x vocab, 1 x vocab

  bool operator==(const ParamsT& o) const;
};

using ToyLMParams = ParamsT<float>;

/// Seeded Gaussian weights scaled by 1/sqrt(fan_in); unit LayerNorm gains,
/// zero biases.
template <typename Scalar>
ParamsT<Scalar> init_params(const ToyLMConfig& config);

template <typename Scalar>
ParamsT<Scalar> zeros_like(const ParamsT<Scalar>& params);

/// Total next-token cross-entropy (nats, summed over predicted positions)
/// of a batch. When grad is non-null, gradients of the summed loss are
/// accumulated into it. Returns (summed loss, predicted token count).
template <typename Scalar>
std::pair<double, std::size_t> batch_loss(const ParamsT<Scalar>& params, const ToyLMConfig& config,
                                          std::span<const TokenSeq> batch, ParamsT<Scalar>* grad);

struct LMTrainOptions {
  std::size_t epochs = 20;
  double learning_rate = 3e-4;
  std::size_t batch_size = 32;
  /// Stop after the first epoch whose mean loss falls below this (0 = off).
  double target_loss = 0.0;
  std::uint64_t seed = 0;
};

struct LMTrainResult {
  ToyLMParams params;
  std::vector<double> epoch_loss;  // token-weighted mean nats per token
  std::size_t steps = 0;
};

/// Sequences longer than max_context are rejected.
LMTrainResult train_lm(const ToyLMConfig& config, std::span<const TokenSeq> sequences,
                       const LMTrainOptions& options);

struct ForwardResult {
  std::vector<Eigen::MatrixXf> block_outputs;  // n_layers of (T x d_model)
  Eigen::MatrixXf log_softmax;                 // T x vocab
  /// log P(token[t+1] | tokens <= t), T - 1 entries.
  std::vector<float> log_probs;
};

/// Throws ValidationError when the sequence is empty, longer than
/// max_context, or holds an out-of-vocabulary token.
ForwardResult forward_with_hooks(const ToyLMParams& params, const ToyLMConfig& config, const TokenSeq& tokens);

/// Component-wise mean over the first token_count rows of every layer.
/// Each layer must hold exactly token_count rows.
std::vector<std::vector<float>> extract_averaged(std::span<const Eigen::MatrixXf> layers, std::size_t token_count);

TokenSeq crop(const TokenSeq& tokens, std::size_t max_context);

struct ExtractedDataset {
  std::vector<store::ActivationRecord> activations;
  std::vector<store::TokenLogProbRecord> log_probs;
};

/// One activation record and one log-prob record per sequence, members
/// first. Ids are "m%06zu" / "n%06zu". Sequences are cropped before the
/// forward pass.
ExtractedDataset build_dataset(const ToyLMParams& params, const ToyLMConfig& config,
                               std::span<const TokenSeq> members, std::span<const TokenSeq> nonmembers);

std::string sample_id(bool member, std::size_t index);

void write_params(const ToyLMParams& params, const ToyLMConfig& config, const std::filesystem::path& path);
std::pair<ToyLMParams, ToyLMConfig> read_params(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

/// Calls f(tensor_of_each...) for every tensor of the given parameter sets,
/// in a fixed order. Works on const and mutable sets alike.
template <typename F, typename First, typename... Rest>
void for_each_tensor(F&& f, First& first, Rest&... rest) {
  f(first.token_embedding, rest.token_embedding...);
  f(first.position_embedding, rest.position_embedding...);
  for (std::size_t i = 0; i < first.blocks.size(); ++i) {
    f(first.blocks[i].ln1_gain, rest.blocks[i].ln1_gain...);
    f(first.blocks[i].ln1_bias, rest.blocks[i].ln1_bias...);
    f(first.blocks[i].wq, rest.blocks[i].wq...);
    f(first.blocks[i].wk, rest.blocks[i].wk...);
    f(first.blocks[i].wv, rest.blocks[i].wv...);
    f(first.blocks[i].wo, rest.blocks[i].wo...);
    f(first.blocks[i].ln2_gain, rest.blocks[i].ln2_gain...);
    f(first.blocks[i].ln2_bias, rest.blocks[i].ln2_bias...);
    f(first.blocks[i].w1, rest.blocks[i].w1...);
    f(first.blocks[i].b1, rest.blocks[i].b1...);
    f(first.blocks[i].w2, rest.blocks[i].w2...);
    f(first.blocks[i].b2, rest.blocks[i].b2...);
  }
  f(first.lnf_gain, rest.lnf_gain...);
  f(first.lnf_bias, rest.lnf_bias...);
  f(first.w_out, rest.w_out...);
  f(first.b_out, rest.b_out...);
}

template <typename Scalar>
bool ParamsT<Scalar>::operator==(const ParamsT& o) const {
  if (blocks.size() != o.blocks.size()) return false;
  bool same = true;
  for_each_tensor(
      [&](const Mat<Scalar>& x, const Mat<Scalar>& y) {
        same = same && x.rows() == y.rows() && x.cols() == y.cols() && x == y;
      },
      *this, o);
  return same;
}

}  // namespace lumia::toy
