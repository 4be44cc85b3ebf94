#include "lumia/toy_lm.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "binary_io.hpp"
#include "lumia/error.hpp"
#include "lumia/seed.hpp"

namespace lumia::toy {
namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr std::string_view kParamsMagic = "LUTM";
constexpr std::uint32_t kParamsVersion = 1;

template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
struct LnCache {
  Mat<S> xhat;
  Vec<S> rstd;
};

template <typename S>
struct BlockCache {
  LnCache<S> ln1;
  Mat<S> h, q, k, v;
  std::vector<Mat<S>> attn;  // per head, T x T, zero above the diagonal
  Mat<S> o;
  LnCache<S> ln2;
  Mat<S> h2, u, r;
};

template <typename S>
struct SeqCache {
  std::vector<BlockCache<S>> blocks;
  LnCache<S> lnf;
  Mat<S> hf;
};

template <typename S>
Mat<S> layer_norm(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias, LnCache<S>* cache) {
  const auto rows = x.rows();
  Mat<S> xhat(rows, x.cols());
  Vec<S> rstd(rows);
  for (Eigen::Index t = 0; t < rows; ++t) {
    const S mu = x.row(t).mean();
    const S var = (x.row(t).array() - mu).square().mean();
    rstd(t) = S(1) / std::sqrt(var + S(kLayerNormEps));
    xhat.row(t) = (x.row(t).array() - mu) * rstd(t);
  }
  Mat<S> y = (xhat.array().rowwise() * gain.row(0).array()).matrix();
  y.rowwise() += bias.row(0);
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const Mat<S>& gain, const LnCache<S>& c, Mat<S>& dgain,
                           Mat<S>& dbias) {
  dgain += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  dbias += dy.colwise().sum();
  const Mat<S> dxhat = (dy.array().rowwise() * gain.row(0).array()).matrix();
  Mat<S> dx(dy.rows(), dy.cols());
  for (Eigen::Index t = 0; t < dy.rows(); ++t) {
    const S m1 = dxhat.row(t).mean();
    const S m2 = (dxhat.row(t).array() * c.xhat.row(t).array()).mean();
    dx.row(t) = c.rstd(t) * (dxhat.row(t).array() - m1 - c.xhat.row(t).array() * m2);
  }
  return dx;
}

template <typename S>
Mat<S> block_forward(const BlockParamsT<S>& p, const Mat<S>& x, std::size_t n_heads, BlockCache<S>* cache) {
  const auto rows = x.rows();
  const auto d = x.cols();
  const auto dh = d / static_cast<Eigen::Index>(n_heads);
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  LnCache<S> ln1;
  Mat<S> h = layer_norm(x, p.ln1_gain, p.ln1_bias, &ln1);
  Mat<S> q = h * p.wq;
  Mat<S> k = h * p.wk;
  Mat<S> v = h * p.wv;
  Mat<S> o = Mat<S>::Zero(rows, d);
  std::vector<Mat<S>> attn;
  attn.reserve(n_heads);
  for (std::size_t head = 0; head < n_heads; ++head) {
    const auto c0 = static_cast<Eigen::Index>(head) * dh;
    Mat<S> a = (q.middleCols(c0, dh) * k.middleCols(c0, dh).transpose()) * scale;
    for (Eigen::Index i = 0; i < rows; ++i) {
      const S mx = a.row(i).head(i + 1).maxCoeff();
      S sum = 0;
      for (Eigen::Index j = 0; j <= i; ++j) {
        a(i, j) = std::exp(a(i, j) - mx);
        sum += a(i, j);
      }
      for (Eigen::Index j = 0; j <= i; ++j) a(i, j) /= sum;
      for (Eigen::Index j = i + 1; j < rows; ++j) a(i, j) = 0;
    }
    o.middleCols(c0, dh).noalias() = a * v.middleCols(c0, dh);
    attn.push_back(std::move(a));
  }
  Mat<S> x_mid = x + o * p.wo;

  LnCache<S> ln2;
  Mat<S> h2 = layer_norm(x_mid, p.ln2_gain, p.ln2_bias, &ln2);
  Mat<S> u = h2 * p.w1;
  u.rowwise() += p.b1.row(0);
  Mat<S> r = u.cwiseMax(S(0));
  Mat<S> out = x_mid + r * p.w2;
  out.rowwise() += p.b2.row(0);

  if (cache != nullptr) {
    cache->ln1 = std::move(ln1);
    cache->h = std::move(h);
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->attn = std::move(attn);
    cache->o = std::move(o);
    cache->ln2 = std::move(ln2);
    cache->h2 = std::move(h2);
    cache->u = std::move(u);
    cache->r = std::move(r);
  }
  return out;
}

template <typename S>
Mat<S> block_backward(const BlockParamsT<S>& p, const BlockCache<S>& c, const Mat<S>& dout, std::size_t n_heads,
                      BlockParamsT<S>& g) {
  // Feed-forward branch.
  g.w2.noalias() += c.r.transpose() * dout;
  g.b2 += dout.colwise().sum();
  Mat<S> du = (dout * p.w2.transpose()).cwiseProduct((c.u.array() > S(0)).template cast<S>().matrix());
  g.w1.noalias() += c.h2.transpose() * du;
  g.b1 += du.colwise().sum();
  Mat<S> dx_mid = dout + layer_norm_backward<S>(du * p.w1.transpose(), p.ln2_gain, c.ln2, g.ln2_gain, g.ln2_bias);

  // Attention branch.
  g.wo.noalias() += c.o.transpose() * dx_mid;
  const Mat<S> d_o = dx_mid * p.wo.transpose();
  const auto rows = dout.rows();
  const auto d = dout.cols();
  const auto dh = d / static_cast<Eigen::Index>(n_heads);
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  Mat<S> dq(rows, d), dk(rows, d), dv(rows, d);
  for (std::size_t head = 0; head < n_heads; ++head) {
    const auto c0 = static_cast<Eigen::Index>(head) * dh;
    const Mat<S>& a = c.attn[head];
    const Mat<S> d_oh = d_o.middleCols(c0, dh);
    const Mat<S> da = d_oh * c.v.middleCols(c0, dh).transpose();
    dv.middleCols(c0, dh).noalias() = a.transpose() * d_oh;
    Mat<S> ds = a.cwiseProduct(da);
    const Vec<S> row_dot = ds.rowwise().sum();
    ds -= a.cwiseProduct(row_dot.replicate(1, rows));
    ds *= scale;
    dq.middleCols(c0, dh).noalias() = ds * c.k.middleCols(c0, dh);
    dk.middleCols(c0, dh).noalias() = ds.transpose() * c.q.middleCols(c0, dh);
  }
  g.wq.noalias() += c.h.transpose() * dq;
  g.wk.noalias() += c.h.transpose() * dk;
  g.wv.noalias() += c.h.transpose() * dv;
  const Mat<S> dh_in = dq * p.wq.transpose() + dk * p.wk.transpose() + dv * p.wv.transpose();
  return dx_mid + layer_norm_backward<S>(dh_in, p.ln1_gain, c.ln1, g.ln1_gain, g.ln1_bias);
}

void check_tokens(const ToyLMConfig& config, const TokenSeq& tokens) {
  if (tokens.empty()) throw ValidationError("empty token sequence");
  if (tokens.size() > config.max_context) {
    throw ValidationError("sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_context " +
                          std::to_string(config.max_context) + "; crop first");
  }
  for (auto t : tokens) {
    if (t >= config.vocab_size) throw ValidationError("token id " + std::to_string(t) + " outside the vocabulary");
  }
}

// Returns the T x vocab log-softmax. Fills the cache for backprop and the
// per-block residual outputs when requested.
template <typename S>
Mat<S> forward(const ParamsT<S>& p, const ToyLMConfig& config, const TokenSeq& tokens, SeqCache<S>* cache,
               std::vector<Mat<S>>* block_outputs) {
  const auto rows = static_cast<Eigen::Index>(tokens.size());
  Mat<S> x(rows, static_cast<Eigen::Index>(config.d_model));
  for (Eigen::Index t = 0; t < rows; ++t) {
    x.row(t) = p.token_embedding.row(tokens[static_cast<std::size_t>(t)]) + p.position_embedding.row(t);
  }
  if (cache != nullptr) cache->blocks.resize(p.blocks.size());
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    x = block_forward(p.blocks[b], x, config.n_heads, cache != nullptr ? &cache->blocks[b] : nullptr);
    if (block_outputs != nullptr) block_outputs->push_back(x);
  }
  Mat<S> hf = layer_norm(x, p.lnf_gain, p.lnf_bias, cache != nullptr ? &cache->lnf : nullptr);
  Mat<S> logits = hf * p.w_out;
  logits.rowwise() += p.b_out.row(0);
  for (Eigen::Index t = 0; t < rows; ++t) {
    const S mx = logits.row(t).maxCoeff();
    const S lse = mx + std::log((logits.row(t).array() - mx).exp().sum());
    logits.row(t).array() -= lse;
  }
  if (cache != nullptr) cache->hf = std::move(hf);
  return logits;
}

template <typename S>
double sequence_loss(const ParamsT<S>& p, const ToyLMConfig& config, const TokenSeq& tokens, ParamsT<S>* grad) {
  SeqCache<S> cache;
  const Mat<S> logp = forward<S>(p, config, tokens, grad != nullptr ? &cache : nullptr, nullptr);
  const auto rows = logp.rows();
  double loss = 0.0;
  for (Eigen::Index t = 0; t + 1 < rows; ++t) loss -= static_cast<double>(logp(t, tokens[static_cast<std::size_t>(t + 1)]));
  if (grad == nullptr || rows < 2) return loss;

  Mat<S> dlogits = logp.array().exp().matrix();
  for (Eigen::Index t = 0; t + 1 < rows; ++t) dlogits(t, tokens[static_cast<std::size_t>(t + 1)]) -= S(1);
  dlogits.row(rows - 1).setZero();
  grad->w_out.noalias() += cache.hf.transpose() * dlogits;
  grad->b_out += dlogits.colwise().sum();
  Mat<S> dx = layer_norm_backward<S>(dlogits * p.w_out.transpose(), p.lnf_gain, cache.lnf, grad->lnf_gain,
                                     grad->lnf_bias);
  for (std::size_t b = p.blocks.size(); b-- > 0;) {
    dx = block_backward(p.blocks[b], cache.blocks[b], dx, config.n_heads, grad->blocks[b]);
  }
  for (Eigen::Index t = 0; t < rows; ++t) {
    grad->token_embedding.row(tokens[static_cast<std::size_t>(t)]) += dx.row(t);
    grad->position_embedding.row(t) += dx.row(t);
  }
  return loss;
}

template <typename S>
Mat<S> gaussian(Rng& rng, std::size_t rows, std::size_t cols, double fan_in) {
  Mat<S> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  const double scale = 1.0 / std::sqrt(fan_in);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<S>(rng.normal() * scale);
  }
  return m;
}

template <typename S>
Mat<S> filled(std::size_t cols, S value) {
  return Mat<S>::Constant(1, static_cast<Eigen::Index>(cols), value);
}

}  // namespace

void ToyLMConfig::validate() const {
  if (vocab_size < 1 || n_layers < 1 || d_model < 1 || n_heads < 1 || ff_width < 1) {
    throw ValidationError("toy LM dimensions must all be >= 1");
  }
  if (d_model % n_heads != 0) throw ValidationError("d_model must be divisible by n_heads");
  if (max_context < 8) throw ValidationError("max_context must be >= 8");
}

template <typename S>
ParamsT<S> init_params(const ToyLMConfig& config) {
  config.validate();
  Rng rng(derive_seed(config.seed, "toy_lm.init"));
  const std::size_t d = config.d_model;
  ParamsT<S> p;
  p.token_embedding = gaussian<S>(rng, config.vocab_size, d, static_cast<double>(config.vocab_size));
  p.position_embedding = gaussian<S>(rng, config.max_context, d, static_cast<double>(config.max_context));
  for (std::size_t b = 0; b < config.n_layers; ++b) {
    BlockParamsT<S> blk;
    blk.ln1_gain = filled<S>(d, S(1));
    blk.ln1_bias = filled<S>(d, S(0));
    blk.wq = gaussian<S>(rng, d, d, static_cast<double>(d));
    blk.wk = gaussian<S>(rng, d, d, static_cast<double>(d));
    blk.wv = gaussian<S>(rng, d, d, static_cast<double>(d));
    blk.wo = gaussian<S>(rng, d, d, static_cast<double>(d));
    blk.ln2_gain = filled<S>(d, S(1));
    blk.ln2_bias = filled<S>(d, S(0));
    blk.w1 = gaussian<S>(rng, d, config.ff_width, static_cast<double>(d));
    blk.b1 = filled<S>(config.ff_width, S(0));
    blk.w2 = gaussian<S>(rng, config.ff_width, d, static_cast<double>(config.ff_width));
    blk.b2 = filled<S>(d, S(0));
    p.blocks.push_back(std::move(blk));
  }
  p.lnf_gain = filled<S>(d, S(1));
  p.lnf_bias = filled<S>(d, S(0));
  p.w_out = gaussian<S>(rng, d, config.vocab_size, static_cast<double>(d));
  p.b_out = filled<S>(config.vocab_size, S(0));
  return p;
}

template <typename S>
ParamsT<S> zeros_like(const ParamsT<S>& params) {
  ParamsT<S> z = params;
  for_each_tensor([](Mat<S>& m) { m.setZero(); }, z);
  return z;
}

template <typename S>
std::pair<double, std::size_t> batch_loss(const ParamsT<S>& params, const ToyLMConfig& config,
                                          std::span<const TokenSeq> batch, ParamsT<S>* grad) {
  double loss = 0.0;
  std::size_t predicted = 0;
  for (const auto& seq : batch) {
    check_tokens(config, seq);
    loss += sequence_loss(params, config, seq, grad);
    predicted += seq.size() - 1;
  }
  return {loss, predicted};
}

template ParamsT<float> init_params<float>(const ToyLMConfig&);
template ParamsT<double> init_params<double>(const ToyLMConfig&);
template ParamsT<float> zeros_like<float>(const ParamsT<float>&);
template ParamsT<double> zeros_like<double>(const ParamsT<double>&);
template std::pair<double, std::size_t> batch_loss<float>(const ParamsT<float>&, const ToyLMConfig&,
                                                          std::span<const TokenSeq>, ParamsT<float>*);
template std::pair<double, std::size_t> batch_loss<double>(const ParamsT<double>&, const ToyLMConfig&,
                                                           std::span<const TokenSeq>, ParamsT<double>*);

LMTrainResult train_lm(const ToyLMConfig& config, std::span<const TokenSeq> sequences,
                       const LMTrainOptions& options) {
  config.validate();
  if (options.batch_size < 1) throw ValidationError("batch size must be >= 1");
  if (!(options.learning_rate > 0.0)) throw ValidationError("learning rate must be > 0");
  for (const auto& s : sequences) check_tokens(config, s);

  LMTrainResult result;
  result.params = init_params<float>(config);
  if (options.epochs == 0 || sequences.empty()) return result;

  ToyLMParams& p = result.params;
  ToyLMParams grad = zeros_like(p);
  ToyLMParams m = zeros_like(p);
  ToyLMParams v = zeros_like(p);
  constexpr float beta1 = 0.9f;
  constexpr float beta2 = 0.999f;
  constexpr float eps = 1e-8f;

  Rng order_rng(derive_seed(options.seed, "toy_lm.order"));
  std::vector<std::size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<TokenSeq> batch;

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    order_rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(sequences[order[i]]);
      for_each_tensor([](Mat<float>& t) { t.setZero(); }, grad);
      const auto [loss, tokens] = batch_loss<float>(p, config, batch, &grad);
      ++result.steps;
      if (!std::isfinite(loss)) {
        throw RuntimeError("toy LM training diverged (loss NaN/Inf) at step " + std::to_string(result.steps));
      }
      if (tokens == 0) continue;
      epoch_loss += loss;
      epoch_tokens += tokens;

      const auto inv_tokens = static_cast<float>(1.0 / static_cast<double>(tokens));
      const auto step = static_cast<double>(result.steps);
      const auto c1 = static_cast<float>(1.0 - std::pow(0.9, step));
      const auto c2 = static_cast<float>(1.0 - std::pow(0.999, step));
      const auto lr = static_cast<float>(options.learning_rate);
      for_each_tensor(
          [&](Mat<float>& w, Mat<float>& g, Mat<float>& mm, Mat<float>& vv) {
            g *= inv_tokens;
            mm = beta1 * mm + (1.0f - beta1) * g;
            vv = beta2 * vv + (1.0f - beta2) * g.cwiseProduct(g);
            w.array() -= lr * (mm.array() / c1) / ((vv.array() / c2).sqrt() + eps);
          },
          p, grad, m, v);
    }
    const double mean_loss = epoch_tokens ? epoch_loss / static_cast<double>(epoch_tokens) : 0.0;
    result.epoch_loss.push_back(mean_loss);
    if (options.target_loss > 0.0 && mean_loss < options.target_loss) break;
  }
  return result;
}

ForwardResult forward_with_hooks(const ToyLMParams& params, const ToyLMConfig& config, const TokenSeq& tokens) {
  check_tokens(config, tokens);
  ForwardResult out;
  out.block_outputs.reserve(config.n_layers);
  out.log_softmax = forward<float>(params, config, tokens, nullptr, &out.block_outputs);
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
    out.log_probs.push_back(out.log_softmax(static_cast<Eigen::Index>(t), tokens[t + 1]));
  }
  return out;
}

std::vector<std::vector<float>> extract_averaged(std::span<const Eigen::MatrixXf> layers, std::size_t token_count) {
  if (token_count < 1) throw ValidationError("token_count must be >= 1");
  std::vector<std::vector<float>> out;
  out.reserve(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& m = layers[l];
    if (static_cast<std::size_t>(m.rows()) != token_count) {
      throw ValidationError("layer " + std::to_string(l) + " holds " + std::to_string(m.rows()) +
                            " token vectors, expected " + std::to_string(token_count));
    }
    std::vector<float> avg(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      double sum = 0.0;
      for (Eigen::Index t = 0; t < m.rows(); ++t) sum += m(t, c);
      avg[static_cast<std::size_t>(c)] = static_cast<float>(sum / static_cast<double>(token_count));
    }
    out.push_back(std::move(avg));
  }
  return out;
}

TokenSeq crop(const TokenSeq& tokens, std::size_t max_context) {
  if (tokens.size() <= max_context) return tokens;
  return TokenSeq(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(max_context));
}

std::string sample_id(bool member, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%06zu", member ? 'm' : 'n', index);
  return buf;
}

ExtractedDataset build_dataset(const ToyLMParams& params, const ToyLMConfig& config,
                               std::span<const TokenSeq> members, std::span<const TokenSeq> nonmembers) {
  config.validate();
  ExtractedDataset ds;
  ds.activations.reserve(members.size() + nonmembers.size());
  ds.log_probs.reserve(members.size() + nonmembers.size());
  const auto add = [&](const TokenSeq& seq, bool member, std::size_t index) {
    const TokenSeq tokens = crop(seq, config.max_context);
    if (tokens.size() < 2) {
      throw ValidationError("sample " + sample_id(member, index) + " has fewer than 2 tokens after cropping");
    }
    const auto fw = forward_with_hooks(params, config, tokens);
    store::ActivationRecord rec;
    rec.sample_id = sample_id(member, index);
    rec.label = member ? 1 : 0;
    rec.token_count = static_cast<std::uint32_t>(tokens.size());
    rec.streams.push_back({"text", extract_averaged(fw.block_outputs, tokens.size())});
    store::TokenLogProbRecord lp;
    lp.sample_id = rec.sample_id;
    lp.label = rec.label;
    lp.log_probs = fw.log_probs;
    const std::string text = detokenize(tokens);
    lp.raw_bytes.assign(text.begin(), text.end());
    ds.activations.push_back(std::move(rec));
    ds.log_probs.push_back(std::move(lp));
  };
  for (std::size_t i = 0; i < members.size(); ++i) add(members[i], true, i);
  for (std::size_t i = 0; i < nonmembers.size(); ++i) add(nonmembers[i], false, i);
  return ds;
}

void write_params(const ToyLMParams& params, const ToyLMConfig& config, const std::filesystem::path& path) {
  detail::ByteWriter out;
  out.bytes(kParamsMagic);
  out.u32(kParamsVersion);
  for (auto v : {config.vocab_size, config.n_layers, config.d_model, config.n_heads, config.max_context,
                 config.ff_width}) {
    out.u32(static_cast<std::uint32_t>(v));
  }
  out.u64(config.seed);
  for_each_tensor(
      [&](const Mat<float>& t) {
        out.u32(static_cast<std::uint32_t>(t.rows()));
        out.u32(static_cast<std::uint32_t>(t.cols()));
        for (Eigen::Index r = 0; r < t.rows(); ++r) {
          for (Eigen::Index c = 0; c < t.cols(); ++c) out.f32(t(r, c));
        }
      },
      params);
  detail::write_file(path, out.buffer());
}

std::pair<ToyLMParams, ToyLMConfig> read_params(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::ByteReader in(bytes);
  if (in.remaining() < 8 || in.string(4) != kParamsMagic) throw FormatError("bad toy LM magic in " + path.string());
  if (const auto v = in.u32(); v != kParamsVersion) {
    throw FormatError("unsupported toy LM format version " + std::to_string(v));
  }
  ToyLMConfig config;
  config.vocab_size = in.u32();
  config.n_layers = in.u32();
  config.d_model = in.u32();
  config.n_heads = in.u32();
  config.max_context = in.u32();
  config.ff_width = in.u32();
  config.seed = in.u64();
  config.validate();
  // Shapes come from the config; stored dims must agree.
  ToyLMParams params = zeros_like(init_params<float>(config));
  for_each_tensor(
      [&](Mat<float>& t) {
        const auto at = in.offset();
        const auto rows = in.u32();
        const auto cols = in.u32();
        if (rows != t.rows() || cols != t.cols()) throw CorruptionError("tensor shape disagrees with config", at);
        in.require(std::size_t{rows} * cols * 4, "tensor");
        for (Eigen::Index r = 0; r < t.rows(); ++r) {
          for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = in.f32();
        }
      },
      params);
  if (in.remaining() != 0) throw CorruptionError("trailing bytes in toy LM file", in.offset());
  return {std::move(params), config};
}

}  // namespace lumia::toy
