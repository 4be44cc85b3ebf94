#include "lumia/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "binary_io.hpp"
#include "lumia/error.hpp"
#include "lumia/seed.hpp"

namespace lumia::probe {
namespace {

constexpr std::string_view kProbeMagic = "LUPB";
constexpr std::uint32_t kProbeVersion = 1;

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Gradients zeros_like(const ProbeModel& model) {
  Gradients g;
  for (const auto& layer : model.layers) {
    g.weight.push_back(Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()));
    g.bias.push_back(Eigen::VectorXd::Zero(layer.bias.size()));
  }
  return g;
}

struct DropoutPlan {
  Rng* rng;
  double rate;
};

// Forward and backward through the whole batch. The dropout plan, when given,
// masks hidden activations with inverted scaling.
double forward_backward(const ProbeModel& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                        const DropoutPlan* dropout, Gradients* grads) {
  const auto n = x.rows();
  const std::size_t depth = model.layers.size();
  std::vector<Eigen::MatrixXd> inputs;   // input to each layer
  std::vector<Eigen::MatrixXd> pre;      // pre-activation of hidden layers
  std::vector<Eigen::MatrixXd> masks;    // dropout mask (already scaled)
  inputs.reserve(depth);
  pre.reserve(depth);

  Eigen::MatrixXd a = x;
  for (std::size_t i = 0; i < depth; ++i) {
    const auto& layer = model.layers[i];
    inputs.push_back(a);
    Eigen::MatrixXd z = a * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    if (i + 1 == depth) {
      a = std::move(z);
      break;
    }
    pre.push_back(z);
    a = z.cwiseMax(0.0);
    if (dropout != nullptr && dropout->rate > 0.0) {
      Eigen::MatrixXd mask(a.rows(), a.cols());
      const double keep = 1.0 - dropout->rate;
      for (Eigen::Index r = 0; r < mask.rows(); ++r) {
        for (Eigen::Index c = 0; c < mask.cols(); ++c) {
          mask(r, c) = dropout->rng->bernoulli(keep) ? 1.0 / keep : 0.0;
        }
      }
      a = a.cwiseProduct(mask);
      masks.push_back(std::move(mask));
    }
  }

  const Eigen::VectorXd logits = a.col(0);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) loss += softplus(logits(i)) - y(i) * logits(i);
  loss /= static_cast<double>(n);
  if (grads == nullptr) return loss;

  Eigen::MatrixXd delta(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) delta(i, 0) = (sigmoid(logits(i)) - y(i)) / static_cast<double>(n);

  for (std::size_t k = depth; k-- > 0;) {
    const auto& layer = model.layers[k];
    grads->weight[k].noalias() = delta.transpose() * inputs[k];
    grads->bias[k] = delta.colwise().sum().transpose();
    if (k == 0) break;
    Eigen::MatrixXd upstream = delta * layer.weight;
    if (!masks.empty()) upstream = upstream.cwiseProduct(masks[k - 1]);
    delta = upstream.cwiseProduct((pre[k - 1].array() > 0.0).cast<double>().matrix());
  }
  return loss;
}

Batch gather(const Batch& data, std::span<const std::size_t> rows) {
  Batch out{Eigen::MatrixXd(static_cast<Eigen::Index>(rows.size()), data.x.cols()),
            Eigen::VectorXd(static_cast<Eigen::Index>(rows.size()))};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.x.row(static_cast<Eigen::Index>(i)) = data.x.row(static_cast<Eigen::Index>(rows[i]));
    out.y(static_cast<Eigen::Index>(i)) = data.y(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

void check_batch(const Batch& b, std::string_view what) {
  if (b.x.rows() == 0) throw ValidationError(std::string(what) + " set is empty");
  if (b.x.rows() != b.y.size()) throw ValidationError(std::string(what) + " set has mismatched x/y rows");
  for (Eigen::Index i = 0; i < b.y.size(); ++i) {
    if (b.y(i) != 0.0 && b.y(i) != 1.0) throw ValidationError(std::string(what) + " labels must be 0 or 1");
  }
}

}  // namespace

void ProbeConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("probe learning rate must be > 0");
  if (patience < 1) throw ValidationError("probe patience must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("probe dropout must be in [0, 1)");
  if (max_epochs < 1) throw ValidationError("probe max_epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("probe batch size must be >= 1");
  for (auto h : hidden) {
    if (h < 1) throw ValidationError("probe hidden sizes must be >= 1");
  }
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& rows) {
  Standardizer s;
  const auto n = static_cast<double>(rows.rows());
  s.mean = rows.colwise().mean().transpose();
  s.inv_scale.resize(rows.cols());
  for (Eigen::Index c = 0; c < rows.cols(); ++c) {
    const double var = (rows.col(c).array() - s.mean(c)).square().sum() / n;
    s.inv_scale(c) = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
  }
  return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& rows) const {
  return (rows.rowwise() - mean.transpose()).array().rowwise() * inv_scale.transpose().array();
}

Eigen::VectorXd Standardizer::apply(const Eigen::VectorXd& x) const {
  return (x - mean).cwiseProduct(inv_scale);
}

std::size_t ProbeModel::input_dim() const {
  return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().weight.cols());
}

std::size_t ProbeModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

ProbeModel init_probe(std::size_t input_dim, std::span<const std::size_t> hidden, std::uint64_t seed) {
  if (input_dim == 0) throw ValidationError("probe input dimension must be >= 1");
  Rng rng(seed);
  ProbeModel model;
  std::size_t fan_in = input_dim;
  std::vector<std::size_t> widths(hidden.begin(), hidden.end());
  widths.push_back(1);
  for (std::size_t out : widths) {
    DenseLayer layer{Eigen::MatrixXd(out, fan_in), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out))};
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = rng.normal() * scale;
    }
    model.layers.push_back(std::move(layer));
    fan_in = out;
  }
  return model;
}

double probe_logit(const ProbeModel& model, std::span<const double> x) {
  if (x.size() != model.input_dim()) {
    throw ValidationError("probe input has dimension " + std::to_string(x.size()) + ", model expects " +
                          std::to_string(model.input_dim()));
  }
  Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  if (model.input_scaler) a = model.input_scaler->apply(a);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    Eigen::VectorXd z = model.layers[i].weight * a + model.layers[i].bias;
    a = (i + 1 == model.layers.size()) ? z : z.cwiseMax(0.0);
  }
  return a(0);
}

double probe_forward(const ProbeModel& model, std::span<const double> x) {
  return sigmoid(probe_logit(model, x));
}

double mean_bce(const ProbeModel& model, const Batch& batch) {
  check_batch(batch, "evaluation");
  return forward_backward(model, batch.x, batch.y, nullptr, nullptr);
}

Gradients probe_grad(const ProbeModel& model, const Batch& batch) {
  if (batch.x.rows() == 0) throw ValidationError("probe_grad needs a non-empty batch");
  check_batch(batch, "gradient");
  if (static_cast<std::size_t>(batch.x.cols()) != model.input_dim()) {
    throw ValidationError("batch dimension does not match probe input");
  }
  Gradients g = zeros_like(model);
  forward_backward(model, batch.x, batch.y, nullptr, &g);
  return g;
}

AdamState init_adam(const ProbeModel& model) {
  AdamState s;
  s.m = zeros_like(model);
  s.v = zeros_like(model);
  return s;
}

void adam_step(ProbeModel& model, const Gradients& grads, AdamState& state, double learning_rate) {
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    param.array() -= learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
  };
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    update(model.layers[i].weight, grads.weight[i], state.m.weight[i], state.v.weight[i]);
    update(model.layers[i].bias, grads.bias[i], state.m.bias[i], state.v.bias[i]);
  }
}

TrainResult train_probe(const ProbeConfig& config, const Batch& train, const Batch& val) {
  config.validate();
  check_batch(train, "training");
  check_batch(val, "validation");
  if (train.x.cols() != val.x.cols()) throw ValidationError("train and validation dimensions differ");
  const double positives = train.y.sum();
  if (positives == 0.0 || positives == static_cast<double>(train.y.size())) {
    throw ValidationError("training set holds a single class; probe is undefined");
  }

  ProbeModel model = init_probe(static_cast<std::size_t>(train.x.cols()), config.hidden,
                                derive_seed(config.seed, "probe.init"));
  AdamState adam = init_adam(model);
  Rng order_rng(derive_seed(config.seed, "probe.order"));
  Rng dropout_rng(derive_seed(config.seed, "probe.dropout"));
  DropoutPlan dropout{&dropout_rng, config.dropout};

  std::vector<std::size_t> order(static_cast<std::size_t>(train.x.rows()));
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  result.model = model;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  Gradients grads = zeros_like(model);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    order_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const Batch batch = gather(train, std::span(order).subspan(start, end - start));
      const double loss = forward_backward(model, batch.x, batch.y, &dropout, &grads);
      loss_sum += loss * static_cast<double>(end - start);
      adam_step(model, grads, adam, config.learning_rate);
    }
    const double train_loss = loss_sum / static_cast<double>(order.size());
    const double val_loss = forward_backward(model, val.x, val.y, nullptr, nullptr);
    if (!std::isfinite(train_loss) || !std::isfinite(val_loss)) {
      throw RuntimeError("probe training diverged at epoch " + std::to_string(epoch));
    }
    result.train_loss.push_back(train_loss);
    result.val_loss.push_back(val_loss);
    result.epochs_run = epoch;

    if (val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      result.best_epoch = epoch;
      result.model = model;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

TrainResult train_probe_holdout(const ProbeConfig& config, const Batch& train, double holdout_fraction) {
  check_batch(train, "training");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) throw ValidationError("holdout fraction must be in (0, 1)");
  std::vector<std::size_t> by_class[2];
  for (Eigen::Index i = 0; i < train.y.size(); ++i) by_class[train.y(i) > 0.5].push_back(static_cast<std::size_t>(i));
  Rng rng(derive_seed(config.seed, "probe.holdout"));
  std::vector<std::size_t> fit;
  std::vector<std::size_t> hold;
  for (auto& idx : by_class) {
    if (idx.size() < 2) throw ValidationError("training set needs >= 2 samples per class to hold some out");
    rng.shuffle(idx.begin(), idx.end());
    const auto k = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(holdout_fraction * static_cast<double>(idx.size()))), 1, idx.size() - 1);
    hold.insert(hold.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    fit.insert(fit.end(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
  }
  std::sort(fit.begin(), fit.end());
  std::sort(hold.begin(), hold.end());
  return train_probe(config, gather(train, fit), gather(train, hold));
}

Eigen::MatrixXd layer_matrix(std::span<const store::ActivationRecord> records, std::string_view stream,
                             std::size_t layer) {
  if (records.empty()) return {};
  Eigen::MatrixXd out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto* st = records[i].stream(stream);
    if (st == nullptr) {
      throw ValidationError("record '" + records[i].sample_id + "' has no stream '" + std::string(stream) + "'");
    }
    if (layer >= st->layers.size()) {
      throw ValidationError("stream '" + std::string(stream) + "' has no layer " + std::to_string(layer));
    }
    const auto& v = st->layers[layer];
    if (i == 0) out.resize(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(v.size()));
    if (static_cast<Eigen::Index>(v.size()) != out.cols()) {
      throw ValidationError("ragged layer dimensions at record '" + records[i].sample_id + "'");
    }
    for (std::size_t c = 0; c < v.size(); ++c) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = static_cast<double>(v[c]);
    }
  }
  return out;
}

ScoredSamples predict_scores(const ProbeModel& model, std::span<const store::ActivationRecord> records,
                             std::size_t layer, std::string_view stream) {
  const Eigen::MatrixXd x = layer_matrix(records, stream, layer);
  ScoredSamples out;
  out.scores.reserve(records.size());
  out.labels.reserve(records.size());
  std::vector<double> row(static_cast<std::size_t>(x.cols()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) row[static_cast<std::size_t>(c)] = x(static_cast<Eigen::Index>(i), c);
    out.scores.push_back(probe_forward(model, row));
    out.labels.push_back(records[i].label);
  }
  return out;
}

void write_probe(const ProbeModel& model, const std::filesystem::path& path) {
  detail::ByteWriter out;
  out.bytes(kProbeMagic);
  out.u32(kProbeVersion);
  out.u8(static_cast<std::uint8_t>(model.activation));
  out.u8(model.input_scaler ? 1 : 0);
  out.u16(static_cast<std::uint16_t>(model.layers.size()));
  for (const auto& layer : model.layers) {
    out.u32(static_cast<std::uint32_t>(layer.weight.rows()));
    out.u32(static_cast<std::uint32_t>(layer.weight.cols()));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) out.f64(layer.weight(r, c));
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) out.f64(layer.bias(r));
  }
  if (model.input_scaler) {
    out.u32(static_cast<std::uint32_t>(model.input_scaler->mean.size()));
    for (Eigen::Index i = 0; i < model.input_scaler->mean.size(); ++i) out.f64(model.input_scaler->mean(i));
    for (Eigen::Index i = 0; i < model.input_scaler->inv_scale.size(); ++i) out.f64(model.input_scaler->inv_scale(i));
  }
  detail::write_file(path, out.buffer());
}

ProbeModel read_probe(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::ByteReader in(bytes);
  if (in.remaining() < 8 || in.string(4) != kProbeMagic) throw FormatError("bad probe magic in " + path.string());
  if (const auto v = in.u32(); v != kProbeVersion) {
    throw FormatError("unsupported probe format version " + std::to_string(v));
  }
  ProbeModel model;
  const auto act_offset = in.offset();
  if (in.u8() != 0) throw CorruptionError("unknown activation tag", act_offset);
  const bool has_scaler = in.u8() != 0;
  const std::uint16_t depth = in.u16();
  for (std::uint16_t k = 0; k < depth; ++k) {
    const std::uint32_t rows = in.u32();
    const std::uint32_t cols = in.u32();
    in.require((std::size_t{rows} * cols + rows) * 8, "probe layer");
    DenseLayer layer{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) layer.weight(r, c) = in.f64();
    }
    for (std::uint32_t r = 0; r < rows; ++r) layer.bias(r) = in.f64();
    model.layers.push_back(std::move(layer));
  }
  if (has_scaler) {
    const std::uint32_t dim = in.u32();
    in.require(std::size_t{dim} * 16, "probe scaler");
    Standardizer s{Eigen::VectorXd(dim), Eigen::VectorXd(dim)};
    for (std::uint32_t i = 0; i < dim; ++i) s.mean(i) = in.f64();
    for (std::uint32_t i = 0; i < dim; ++i) s.inv_scale(i) = in.f64();
    model.input_scaler = std::move(s);
  }
  if (in.remaining() != 0) throw CorruptionError("trailing bytes in probe file", in.offset());
  return model;
}

}  // namespace lumia::probe
