#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "lumia/corpus.hpp"
#include "lumia/error.hpp"
#include "lumia/toy_lm.hpp"
#include "oracles.hpp"

using namespace lumia;
using namespace lumia::toy;

namespace {

ToyLMConfig tiny_config() {
  ToyLMConfig c;
  c.vocab_size = 11;
  c.n_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.max_context = 8;
  c.ff_width = 12;
  c.seed = 5;
  return c;
}

TokenSeq random_tokens(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  TokenSeq t(n);
  for (auto& x : t) x = static_cast<std::uint32_t>(g() % vocab);
  return t;
}

}  // namespace

TEST(ToyLM, ConfigValidation) {
  auto c = tiny_config();
  EXPECT_NO_THROW(c.validate());
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny_config();
  c.max_context = 7;
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny_config();
  c.ff_width = 0;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(ToyLM, BackpropMatchesFiniteDifferences) {
  const auto config = tiny_config();
  auto params = init_params<double>(config);
  // perturb gains and biases away from 1/0 so their gradients are generic
  std::mt19937_64 g(3);
  std::normal_distribution<double> nd(0.0, 0.1);
  for_each_tensor([&](Mat<double>& m) { for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += nd(g); }, params);
  const std::vector<TokenSeq> batch = {random_tokens(8, 11, 1), random_tokens(5, 11, 2), random_tokens(2, 11, 3)};

  auto grad = zeros_like(params);
  batch_loss<double>(params, config, batch, &grad);

  std::vector<std::pair<double*, double>> entries;
  for_each_tensor(
      [&](Mat<double>& p, Mat<double>& gr) {
        for (Eigen::Index i = 0; i < p.size(); ++i) entries.emplace_back(&p.data()[i], gr.data()[i]);
      },
      params, grad);
  const auto loss = [&] { return batch_loss<double>(params, config, batch, nullptr).first; };
  double worst = 0.0;
  for (std::size_t k = 0; k < entries.size(); k += 3) {
    const double fd = oracle::central_difference(loss, *entries[k].first, 1e-5);
    const double err = std::abs(fd - entries[k].second) / std::max(1e-4, std::abs(fd) + std::abs(entries[k].second));
    worst = std::max(worst, err);
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(ToyLM, SoftmaxNormalizedAndLogProbsConsistent) {
  ToyLMConfig c = tiny_config();
  c.vocab_size = 40;
  const auto params = init_params<float>(c);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto tokens = random_tokens(8, 40, s);
    const auto fw = forward_with_hooks(params, c, tokens);
    ASSERT_EQ(fw.log_probs.size(), tokens.size() - 1);
    for (Eigen::Index t = 0; t < fw.log_softmax.rows(); ++t) {
      EXPECT_NEAR(fw.log_softmax.row(t).array().exp().sum(), 1.0, 1e-5);
    }
    for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
      EXPECT_LE(fw.log_probs[t], 0.0f);
      EXPECT_FLOAT_EQ(fw.log_probs[t], fw.log_softmax(static_cast<Eigen::Index>(t), tokens[t + 1]));
    }
    ASSERT_EQ(fw.block_outputs.size(), c.n_layers);
    for (const auto& b : fw.block_outputs) {
      EXPECT_EQ(b.rows(), 8);
      EXPECT_EQ(b.cols(), static_cast<Eigen::Index>(c.d_model));
      EXPECT_TRUE(b.allFinite());
    }
  }
}

TEST(ToyLM, Causality) {
  const auto c = tiny_config();
  const auto params = init_params<float>(c);
  const auto tokens = random_tokens(8, 11, 9);
  const auto base = forward_with_hooks(params, c, tokens);
  for (std::size_t t = 0; t + 2 < tokens.size(); ++t) {
    auto mutated = tokens;
    for (std::size_t j = t + 2; j < mutated.size(); ++j) mutated[j] = (mutated[j] + 1 + j) % 11;
    const auto fw = forward_with_hooks(params, c, mutated);
    for (std::size_t k = 0; k <= t; ++k) EXPECT_EQ(fw.log_probs[k], base.log_probs[k]) << "t=" << t << " k=" << k;
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      EXPECT_EQ(fw.block_outputs[l].topRows(static_cast<Eigen::Index>(t + 2)),
                base.block_outputs[l].topRows(static_cast<Eigen::Index>(t + 2)));
    }
  }
}

TEST(ToyLM, SingleTokenAndOverLength) {
  const auto c = tiny_config();
  const auto params = init_params<float>(c);
  const auto fw = forward_with_hooks(params, c, {3});
  EXPECT_TRUE(fw.log_probs.empty());
  for (const auto& b : fw.block_outputs) EXPECT_EQ(b.rows(), 1);
  EXPECT_THROW(forward_with_hooks(params, c, random_tokens(9, 11, 1)), ValidationError);
  EXPECT_THROW(forward_with_hooks(params, c, {11}), ValidationError);
  const auto long_seq = random_tokens(12, 11, 1);
  EXPECT_EQ(crop(long_seq, 8), TokenSeq(long_seq.begin(), long_seq.begin() + 8));
}

TEST(ToyLM, ForwardIsPure) {
  const auto c = tiny_config();
  const auto params = init_params<float>(c);
  const auto tokens = random_tokens(7, 11, 4);
  const auto a = forward_with_hooks(params, c, tokens);
  const auto b = forward_with_hooks(params, c, tokens);
  EXPECT_EQ(a.log_probs, b.log_probs);
  for (std::size_t l = 0; l < a.block_outputs.size(); ++l) EXPECT_EQ(a.block_outputs[l], b.block_outputs[l]);
}

TEST(ExtractAveraged, HandCases) {
  Eigen::MatrixXf layer(2, 2);
  layer << 1, 2, 3, 4;
  std::vector<Eigen::MatrixXf> layers = {layer};
  EXPECT_EQ(extract_averaged(layers, 2)[0], (std::vector<float>{2, 3}));
  std::vector<Eigen::MatrixXf> one = {layer.topRows(1)};
  EXPECT_EQ(extract_averaged(one, 1)[0], (std::vector<float>{1, 2}));
  EXPECT_THROW(extract_averaged(layers, 3), ValidationError);
}

TEST(ExtractAveraged, MatchesBruteForceMean) {
  std::mt19937_64 g(11);
  std::normal_distribution<float> nd(0.0f, 3.0f);
  std::vector<Eigen::MatrixXf> layers(3, Eigen::MatrixXf(7, 5));
  for (auto& m : layers) for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(g);
  const auto avg = extract_averaged(layers, 7);
  for (std::size_t l = 0; l < 3; ++l) {
    for (Eigen::Index d = 0; d < 5; ++d) {
      double s = 0.0;
      for (Eigen::Index t = 0; t < 7; ++t) s += layers[l](t, d);
      EXPECT_NEAR(avg[l][static_cast<std::size_t>(d)], s / 7.0, 1e-6);
    }
  }
  // scaling the activations scales the average
  std::vector<Eigen::MatrixXf> scaled;
  for (const auto& m : layers) scaled.push_back(m * 2.5f);
  const auto avg2 = extract_averaged(scaled, 7);
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t d = 0; d < 5; ++d) EXPECT_NEAR(avg2[l][d], 2.5f * avg[l][d], 1e-5);
}

TEST(ToyLMTrain, ZeroEpochsReturnsInitialization) {
  const auto c = tiny_config();
  LMTrainOptions opt;
  opt.epochs = 0;
  const std::vector<TokenSeq> data = {random_tokens(8, 11, 1), random_tokens(8, 11, 2)};
  const auto r = train_lm(c, data, opt);
  EXPECT_EQ(r.steps, 0u);
  EXPECT_TRUE(r.params == init_params<float>(c));
}

TEST(ToyLMTrain, DeterministicAndLossFalls) {
  const auto c = tiny_config();
  LMTrainOptions opt;
  opt.epochs = 15;
  opt.learning_rate = 3e-3;
  opt.batch_size = 4;
  opt.seed = 2;
  std::vector<TokenSeq> data;
  for (std::uint64_t s = 0; s < 16; ++s) data.push_back(random_tokens(8, 11, s % 4));
  const auto a = train_lm(c, data, opt);
  const auto b = train_lm(c, data, opt);
  EXPECT_TRUE(a.params == b.params);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  ASSERT_EQ(a.epoch_loss.size(), 15u);
  // 5-epoch moving average never rises
  for (std::size_t i = 0; i + 5 < a.epoch_loss.size(); ++i) {
    double w0 = 0.0;
    double w1 = 0.0;
    for (std::size_t k = 0; k < 5; ++k) {
      w0 += a.epoch_loss[i + k];
      w1 += a.epoch_loss[i + k + 1];
    }
    EXPECT_LE(w1, w0) << "window " << i;
  }
  EXPECT_LT(a.epoch_loss.back(), a.epoch_loss.front());
}

TEST(ToyLMTrain, TargetLossStopsEarly) {
  const auto c = tiny_config();
  LMTrainOptions opt;
  opt.epochs = 200;
  opt.learning_rate = 1e-2;
  opt.batch_size = 4;
  opt.target_loss = 1.5;
  std::vector<TokenSeq> data(8, random_tokens(8, 11, 3));
  const auto r = train_lm(c, data, opt);
  EXPECT_LT(r.epoch_loss.size(), 200u);
  EXPECT_LT(r.epoch_loss.back(), 1.5);
}

TEST(ToyLMParams, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "lumia_lutm";
  std::filesystem::create_directories(dir);
  const auto c = tiny_config();
  const auto p = init_params<float>(c);
  write_params(p, c, dir / "m.bin");
  const auto [q, c2] = read_params(dir / "m.bin");
  EXPECT_EQ(c2, c);
  EXPECT_TRUE(q == p);
  {
    std::fstream f(dir / "m.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.put('X');
  }
  EXPECT_THROW(read_params(dir / "m.bin"), FormatError);
}

TEST(BuildDataset, ShapesLabelsAndIds) {
  auto c = tiny_config();
  c.vocab_size = 64;
  c.max_context = 16;
  CorpusSpec spec;
  spec.member_count = 10;
  spec.nonmember_count = 10;
  spec.min_length = 12;
  spec.max_length = 20;
  spec.vocab_size = 64;
  const auto corpus = generate_corpus(spec);
  const auto ds = build_dataset(init_params<float>(c), c, corpus.members, corpus.nonmembers);
  ASSERT_EQ(ds.activations.size(), 20u);
  ASSERT_EQ(ds.log_probs.size(), 20u);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& a = ds.activations[i];
    EXPECT_EQ(a.label, i < 10 ? 1 : 0);
    EXPECT_EQ(a.sample_id, ds.log_probs[i].sample_id);
    ASSERT_EQ(a.streams.size(), 1u);
    EXPECT_EQ(a.streams[0].layers.size(), c.n_layers);
    for (const auto& l : a.streams[0].layers) EXPECT_EQ(l.size(), c.d_model);
    const auto& seq = i < 10 ? corpus.members[i] : corpus.nonmembers[i - 10];
    const std::size_t n = std::min<std::size_t>(seq.size(), 16);
    EXPECT_EQ(a.token_count, n);
    EXPECT_EQ(ds.log_probs[i].log_probs.size(), n - 1);
  }
  EXPECT_EQ(sample_id(true, 3), "m000003");
  EXPECT_EQ(sample_id(false, 12), "n000012");
}

TEST(BuildDataset, RepeatedMembersScoreHigher) {
  ToyLMConfig c;
  c.vocab_size = 64;
  c.n_layers = 2;
  c.d_model = 32;
  c.n_heads = 2;
  c.max_context = 16;
  c.ff_width = 64;
  CorpusSpec spec;
  spec.member_count = 24;
  spec.nonmember_count = 24;
  spec.min_length = 12;
  spec.max_length = 16;
  spec.vocab_size = 64;
  spec.seed = 4;
  const auto corpus = generate_corpus(spec);
  LMTrainOptions opt;
  opt.epochs = 40;
  opt.learning_rate = 3e-3;
  opt.batch_size = 8;
  const auto trained = train_lm(c, training_sequences(corpus, 8), opt);
  const auto ds = build_dataset(trained.params, c, corpus.members, corpus.nonmembers);
  double member_mean = 0.0;
  double nonmember_mean = 0.0;
  for (const auto& r : ds.log_probs) {
    double m = 0.0;
    for (float v : r.log_probs) m += v;
    m /= static_cast<double>(r.log_probs.size());
    (r.label ? member_mean : nonmember_mean) += m / 24.0;
  }
  EXPECT_GT(member_mean, nonmember_mean + 0.5);
}
