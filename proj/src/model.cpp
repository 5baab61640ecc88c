#include "fetfids/model.hpp"

#include <cmath>
#include <sstream>

#include "fetfids/errors.hpp"
#include "fetfids/rng.hpp"

namespace fetfids {

using nn::Mode;

std::string to_string(ModelKind kind) { return kind == ModelKind::fetfids ? "fetfids" : "mlr"; }

ModelKind parse_model_kind(const std::string& text) {
  if (text == "fetfids") return ModelKind::fetfids;
  if (text == "mlr") return ModelKind::mlr;
  throw ConfigError("model_kind must be 'fetfids' or 'mlr', got '" + text + "'");
}

std::vector<std::string> FetFidsConfig::violations() const {
  std::vector<std::string> v;
  if (n_features == 0) v.push_back("n_features must be positive");
  if (d_model < 2) v.push_back("d_model must be at least 2");
  if (heads == 0) {
    v.push_back("heads must be positive");
  } else if (d_model % heads != 0) {
    v.push_back("d_model (" + std::to_string(d_model) + ") must be divisible by heads (" + std::to_string(heads) + ")");
  }
  if (blocks == 0) v.push_back("blocks must be positive");
  if (embed_kernel % 2 == 0) v.push_back("embed_kernel must be odd, got " + std::to_string(embed_kernel));
  if (embed_channels.empty()) {
    v.push_back("embed_channels must list at least one conv width");
  } else {
    for (auto c : embed_channels) {
      if (c == 0) v.push_back("embed_channels entries must be positive");
    }
    if (embed_channels.back() + 1 != d_model) {
      v.push_back("last embed channel width (" + std::to_string(embed_channels.back()) + ") must equal d_model - 1 (" +
                  std::to_string(d_model - 1) + ")");
    }
  }
  if (ff_hidden == 0) v.push_back("ff_hidden must be positive");
  for (auto h : mlp_hidden) {
    if (h == 0) v.push_back("mlp_hidden entries must be positive");
  }
  if (n_classes < 2) v.push_back("n_classes must be at least 2");
  return v;
}

void FetFidsConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid model config:";
  for (const auto& s : v) msg += "\n  - " + s;
  throw ConfigError(msg);
}

void Classifier::set_weights(const ParamSet& weights) {
  auto& mine = params();
  if (!mine.structurally_equal(weights)) throw StateError("set_weights: weights do not match the model layout");
  for (std::size_t i = 0; i < mine.size(); ++i) mine[i].value = weights[i].value;
}

std::uint64_t linear_flops(std::size_t in, std::size_t out) { return 2ULL * in * out + out; }

// ---------------------------------------------------------------------------

namespace {

Tensor uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

FetFidsModel::Norm FetFidsModel::add_norm(const std::string& prefix, std::size_t width) {
  Norm n{};
  n.gamma = params_.add(prefix + ".gamma", Tensor({width}, 1.0));
  n.beta = params_.add(prefix + ".beta", Tensor({width}, 0.0));
  n.mean = params_.add(prefix + ".running_mean", Tensor({width}, 0.0), EntryKind::buffer);
  n.var = params_.add(prefix + ".running_var", Tensor({width}, 1.0), EntryKind::buffer);
  return n;
}

FetFidsModel::FetFidsModel(const FetFidsConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const std::size_t d = config_.d_model;
  const std::size_t k = config_.embed_kernel;

  std::size_t c_in = 1;
  for (std::size_t l = 0; l < config_.embed_channels.size(); ++l) {
    const std::size_t c_out = config_.embed_channels[l];
    const std::string p = "embed.conv" + std::to_string(l);
    ConvLayer layer{};
    layer.weight = params_.add(p + ".weight", uniform_fan_in({c_out, c_in, k}, c_in * k, rng));
    layer.bias = params_.add(p + ".bias", uniform_fan_in({c_out}, c_in * k, rng));
    conv_.push_back(layer);
    c_in = c_out;
  }

  for (std::size_t b = 0; b < config_.blocks; ++b) {
    const std::string p = "block" + std::to_string(b);
    Block blk{};
    blk.wq = params_.add(p + ".attn.wq", uniform_fan_in({d, d}, d, rng));
    blk.wk = params_.add(p + ".attn.wk", uniform_fan_in({d, d}, d, rng));
    blk.wv = params_.add(p + ".attn.wv", uniform_fan_in({d, d}, d, rng));
    blk.wo = params_.add(p + ".attn.wo", uniform_fan_in({d, d}, d, rng));
    blk.norm1 = add_norm(p + ".norm1", d);
    blk.ff_w1 = params_.add(p + ".ff.w1", uniform_fan_in({d, config_.ff_hidden}, d, rng));
    blk.ff_b1 = params_.add(p + ".ff.b1", uniform_fan_in({config_.ff_hidden}, d, rng));
    blk.ff_w2 = params_.add(p + ".ff.w2", uniform_fan_in({config_.ff_hidden, d}, config_.ff_hidden, rng));
    blk.norm2 = add_norm(p + ".norm2", d);
    blocks_.push_back(blk);
  }

  std::size_t in = d;
  for (std::size_t l = 0; l < config_.mlp_hidden.size(); ++l) {
    const std::size_t h = config_.mlp_hidden[l];
    const std::string p = "head.fc" + std::to_string(l);
    Dense dense{};
    dense.weight = params_.add(p + ".weight", uniform_fan_in({in, h}, in, rng));
    dense.bias = params_.add(p + ".bias", uniform_fan_in({h}, in, rng));
    mlp_.push_back(dense);
    mlp_norm_.push_back(add_norm("head.bn" + std::to_string(l), h));
    in = h;
  }
  out_.weight = params_.add("head.out.weight", uniform_fan_in({in, config_.n_classes}, in, rng));
  out_.bias = params_.add("head.out.bias", uniform_fan_in({config_.n_classes}, in, rng));
}

std::size_t FetFidsModel::analytic_param_count(const FetFidsConfig& c) {
  std::size_t total = 0;
  std::size_t c_in = 1;
  for (auto c_out : c.embed_channels) {
    total += c_out * c_in * c.embed_kernel + c_out;
    c_in = c_out;
  }
  const std::size_t d = c.d_model;
  const std::size_t per_block = 4 * d * d        // Wq, Wk, Wv, Wo
                                + 2 * (2 * d)    // two BatchNorms (γ, β)
                                + d * c.ff_hidden + c.ff_hidden + c.ff_hidden * d;
  total += c.blocks * per_block;
  std::size_t in = d;
  for (auto h : c.mlp_hidden) {
    total += in * h + h + 2 * h;
    in = h;
  }
  total += in * c.n_classes + c.n_classes;
  return total;
}

std::string FetFidsModel::architecture() const {
  std::ostringstream os;
  os << "fetfids;n_features=" << config_.n_features << ";d_model=" << config_.d_model << ";heads=" << config_.heads
     << ";blocks=" << config_.blocks << ";embed_channels=";
  for (std::size_t i = 0; i < config_.embed_channels.size(); ++i) os << (i ? "," : "") << config_.embed_channels[i];
  os << ";embed_kernel=" << config_.embed_kernel << ";ff_hidden=" << config_.ff_hidden << ";mlp_hidden=";
  for (std::size_t i = 0; i < config_.mlp_hidden.size(); ++i) os << (i ? "," : "") << config_.mlp_hidden[i];
  os << ";n_classes=" << config_.n_classes;
  return os.str();
}

std::unique_ptr<Classifier> FetFidsModel::clone() const {
  auto copy = std::make_unique<FetFidsModel>(*this);
  copy->cache_ = Cache{};
  copy->probe_cache_ = BlockCache{};
  copy->probe_block_ = SIZE_MAX;
  copy->params_.clear_grads();
  return copy;
}

// FLOP accounting for one forward pass:
//   conv          2·C_out·C_in·K·F, plus one op per ReLU output
//   projections   2·T·D·D each (Q, K, V, output)
//   scores, AV    2·T·T·D each (summed over heads)
//   softmax       3 per attention weight
//   residual add  1 per element; BatchNorm (eval, folded affine) 2 per element
//   dense layers  linear_flops(in, out), ReLU 1 per output
//   pooling       1 per token element; log-softmax 3 per class
std::uint64_t FetFidsModel::flop_estimate(std::size_t batch) const {
  const std::uint64_t t = config_.n_features;
  const std::uint64_t d = config_.d_model;
  const std::uint64_t ff = config_.ff_hidden;
  const std::uint64_t k = config_.embed_kernel;
  std::uint64_t f = 0;
  std::uint64_t c_in = 1;
  for (auto c_out : config_.embed_channels) {
    f += 2 * c_out * c_in * k * t + c_out * t;
    c_in = c_out;
  }
  std::uint64_t block = 4 * (2 * t * d * d);
  block += 2 * (2 * t * t * d);
  block += 3 * config_.heads * t * t;
  block += 2 * (t * d) + 2 * (2 * t * d);
  block += t * linear_flops(d, ff) + t * ff + t * 2 * ff * d;
  f += config_.blocks * block;
  f += t * d;
  std::uint64_t in = d;
  for (auto h : config_.mlp_hidden) {
    f += linear_flops(in, h) + h + 2 * h;
    in = h;
  }
  f += linear_flops(in, config_.n_classes) + 3 * config_.n_classes;
  return f * batch;
}

void FetFidsModel::check_input(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != config_.n_features) {
    throw DimensionError("model expects input [B×" + std::to_string(config_.n_features) + "], got " +
                         shape_str(x.shape()));
  }
}

nn::BatchNormRefs FetFidsModel::norm_refs(const Norm& n, ParamSet& params) const {
  return nn::BatchNormRefs{params.value(n.gamma), params.value(n.beta), params.value(n.mean), params.value(n.var)};
}

Tensor FetFidsModel::embed(const Tensor& x, const ParamSet& params, Cache* cache) const {
  check_input(x);
  const std::size_t batch = x.dim(0);
  const std::size_t t_len = config_.n_features;
  const std::size_t d = config_.d_model;
  if (cache != nullptr) {
    cache->conv_in.assign(conv_.size(), std::vector<Tensor>(batch));
    cache->conv_pre.assign(conv_.size(), std::vector<Tensor>(batch));
  }
  Tensor tokens({batch, t_len, d});
  for (std::size_t b = 0; b < batch; ++b) {
    Tensor h({1, t_len}, std::vector<double>(x.raw() + b * t_len, x.raw() + (b + 1) * t_len));
    for (std::size_t l = 0; l < conv_.size(); ++l) {
      Tensor pre = nn::conv1d(h, params.value(conv_[l].weight), params.value(conv_[l].bias));
      Tensor act = nn::relu(pre);
      if (cache != nullptr) {
        cache->conv_in[l][b] = std::move(h);
        cache->conv_pre[l][b] = std::move(pre);
      }
      h = std::move(act);
    }
    double* tb = tokens.raw() + b * t_len * d;
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t c = 0; c + 1 < d; ++c) tb[t * d + c] = h.at(c, t);
      tb[t * d + d - 1] = x.at(b, t);
    }
  }
  return tokens;
}

Tensor FetFidsModel::feature_embed(const Tensor& x) const { return embed(x, params_, nullptr); }

Tensor FetFidsModel::block_forward(const Block& blk, const Tensor& tokens, Mode mode, ParamSet& params,
                                   BlockCache* cache) const {
  const std::size_t batch = tokens.dim(0);
  const std::size_t t_len = tokens.dim(1);
  const std::size_t d = tokens.dim(2);
  const std::size_t rows = batch * t_len;

  const nn::MhaParams mp{params.value(blk.wq), params.value(blk.wk), params.value(blk.wv), params.value(blk.wo)};
  Tensor attn = nn::multihead_attention(tokens, mp, config_.heads, cache ? &cache->mha : nullptr);
  Tensor r1 = tokens.reshaped({rows, d});
  add_into(r1, attn);
  Tensor n1 = nn::batchnorm_forward(r1, norm_refs(blk.norm1, params), mode, cache ? &cache->bn1 : nullptr);

  Tensor ff_pre = nn::linear_forward(n1, params.value(blk.ff_w1), &params.value(blk.ff_b1));
  Tensor ff_act = nn::relu(ff_pre);
  Tensor r2 = nn::linear_forward(ff_act, params.value(blk.ff_w2), nullptr);
  add_into(r2, n1);
  Tensor n2 = nn::batchnorm_forward(r2, norm_refs(blk.norm2, params), mode, cache ? &cache->bn2 : nullptr);
  if (cache != nullptr) {
    cache->norm1_out = std::move(n1);
    cache->ff_pre = std::move(ff_pre);
    cache->ff_act = std::move(ff_act);
  }
  n2.reshape({batch, t_len, d});
  return n2;
}

Tensor FetFidsModel::encoder_block(std::size_t block, const Tensor& tokens, Mode mode) {
  if (block >= blocks_.size()) throw ConfigError("encoder block index out of range");
  if (tokens.rank() != 3 || tokens.dim(2) != config_.d_model) {
    throw DimensionError("encoder block expects [B×T×" + std::to_string(config_.d_model) + "], got " +
                         shape_str(tokens.shape()));
  }
  probe_block_ = mode == Mode::train ? block : SIZE_MAX;
  return block_forward(blocks_[block], tokens, mode, params_, mode == Mode::train ? &probe_cache_ : nullptr);
}

Tensor FetFidsModel::encoder_block_backward(std::size_t block, const Tensor& dout) {
  if (block != probe_block_) throw StateError("encoder_block_backward without a matching train-mode encoder_block");
  params_.zero_grads();
  return block_backward(blocks_[block], probe_cache_, dout);
}

Tensor FetFidsModel::run(const Tensor& x, Mode mode, ParamSet& params, Cache* cache) const {
  check_input(x);
  const std::size_t batch = x.dim(0);
  if (mode == Mode::train && batch < 2) {
    throw BatchSizeError("train-mode forward needs a batch of at least 2, got " + std::to_string(batch));
  }
  const std::size_t t_len = config_.n_features;
  const std::size_t d = config_.d_model;

  Tensor tokens = embed(x, params, cache);
  if (cache != nullptr) cache->blocks.assign(blocks_.size(), BlockCache{});
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    tokens = block_forward(blocks_[b], tokens, mode, params, cache ? &cache->blocks[b] : nullptr);
  }

  Tensor z({batch, d});
  const double inv_t = 1.0 / static_cast<double>(t_len);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < t_len; ++t) {
      const double* row = tokens.raw() + (b * t_len + t) * d;
      for (std::size_t c = 0; c < d; ++c) z.at(b, c) += row[c];
    }
    for (std::size_t c = 0; c < d; ++c) z.at(b, c) *= inv_t;
  }
  if (cache != nullptr) {
    cache->pooled = z;
    cache->mlp_in.assign(mlp_.size(), Tensor{});
    cache->mlp_pre.assign(mlp_.size(), Tensor{});
    cache->mlp_bn.assign(mlp_.size(), nn::BatchNormCache{});
  }
  for (std::size_t l = 0; l < mlp_.size(); ++l) {
    Tensor pre = nn::linear_forward(z, params.value(mlp_[l].weight), &params.value(mlp_[l].bias));
    Tensor act = nn::relu(pre);
    Tensor next =
        nn::batchnorm_forward(act, norm_refs(mlp_norm_[l], params), mode, cache ? &cache->mlp_bn[l] : nullptr);
    if (cache != nullptr) {
      cache->mlp_in[l] = std::move(z);
      cache->mlp_pre[l] = std::move(pre);
    }
    z = std::move(next);
  }
  Tensor logits = nn::linear_forward(z, params.value(out_.weight), &params.value(out_.bias));
  Tensor log_probs = nn::log_softmax(logits);
  if (cache != nullptr) {
    cache->out_in = std::move(z);
    cache->log_probs = log_probs;
    cache->batch = batch;
    cache->valid = true;
  }
  return log_probs;
}

Tensor FetFidsModel::forward(const Tensor& x, Mode mode) {
  cache_.valid = false;
  if (mode == Mode::eval) return infer(x);
  return run(x, mode, params_, &cache_);
}

Tensor FetFidsModel::infer(const Tensor& x) const {
  // Eval mode only reads the running statistics, so the const_cast never leads to a write.
  return run(x, Mode::eval, const_cast<ParamSet&>(params_), nullptr);
}

Tensor FetFidsModel::block_backward(const Block& blk, const BlockCache& cache, const Tensor& dout) {
  const std::size_t rows = cache.norm1_out.rows();
  const std::size_t d = config_.d_model;

  auto bn2 = nn::batchnorm_backward(cache.bn2, params_.value(blk.norm2.gamma), dout.reshaped({rows, d}));
  add_into(params_.grad(blk.norm2.gamma), bn2.dgamma);
  add_into(params_.grad(blk.norm2.beta), bn2.dbeta);

  // r2 = ff(n1) + n1
  auto ff2 = nn::linear_backward(cache.ff_act, params_.value(blk.ff_w2), bn2.dx, false);
  add_into(params_.grad(blk.ff_w2), ff2.dw);
  Tensor d_pre = nn::relu_backward(cache.ff_pre, ff2.dx);
  auto ff1 = nn::linear_backward(cache.norm1_out, params_.value(blk.ff_w1), d_pre, true);
  add_into(params_.grad(blk.ff_w1), ff1.dw);
  add_into(params_.grad(blk.ff_b1), ff1.db);
  Tensor d_n1 = std::move(bn2.dx);
  add_into(d_n1, ff1.dx);

  auto bn1 = nn::batchnorm_backward(cache.bn1, params_.value(blk.norm1.gamma), d_n1);
  add_into(params_.grad(blk.norm1.gamma), bn1.dgamma);
  add_into(params_.grad(blk.norm1.beta), bn1.dbeta);

  // r1 = tokens + mha(tokens)
  const nn::MhaParams mp{params_.value(blk.wq), params_.value(blk.wk), params_.value(blk.wv), params_.value(blk.wo)};
  auto mg = nn::multihead_attention_backward(cache.mha, mp, config_.heads, bn1.dx);
  add_into(params_.grad(blk.wq), mg.dwq);
  add_into(params_.grad(blk.wk), mg.dwk);
  add_into(params_.grad(blk.wv), mg.dwv);
  add_into(params_.grad(blk.wo), mg.dwo);
  Tensor dx = std::move(mg.dx);
  add_into(dx, bn1.dx);
  return dx;
}

void FetFidsModel::backward(const Tensor& d_log_probs) {
  if (!cache_.valid) throw StateError("backward called without a preceding train-mode forward");
  if (!d_log_probs.same_shape(cache_.log_probs)) {
    throw DimensionError("backward: gradient " + shape_str(d_log_probs.shape()) + " does not match output " +
                         shape_str(cache_.log_probs.shape()));
  }
  params_.zero_grads();
  const std::size_t batch = cache_.batch;
  const std::size_t t_len = config_.n_features;
  const std::size_t d = config_.d_model;

  Tensor dlogits = nn::log_softmax_backward(cache_.log_probs, d_log_probs);
  auto og = nn::linear_backward(cache_.out_in, params_.value(out_.weight), dlogits, true);
  add_into(params_.grad(out_.weight), og.dw);
  add_into(params_.grad(out_.bias), og.db);
  Tensor dz = std::move(og.dx);
  for (std::size_t l = mlp_.size(); l-- > 0;) {
    const auto& nrm = mlp_norm_[l];
    auto bg = nn::batchnorm_backward(cache_.mlp_bn[l], params_.value(nrm.gamma), dz);
    add_into(params_.grad(nrm.gamma), bg.dgamma);
    add_into(params_.grad(nrm.beta), bg.dbeta);
    Tensor dpre = nn::relu_backward(cache_.mlp_pre[l], bg.dx);
    auto lg = nn::linear_backward(cache_.mlp_in[l], params_.value(mlp_[l].weight), dpre, true);
    add_into(params_.grad(mlp_[l].weight), lg.dw);
    add_into(params_.grad(mlp_[l].bias), lg.db);
    dz = std::move(lg.dx);
  }

  Tensor dtokens({batch, t_len, d});
  const double inv_t = 1.0 / static_cast<double>(t_len);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t c = 0; c < d; ++c) dtokens.raw()[(b * t_len + t) * d + c] = dz.at(b, c) * inv_t;
    }
  }
  for (std::size_t blk = blocks_.size(); blk-- > 0;) {
    dtokens = block_backward(blocks_[blk], cache_.blocks[blk], dtokens);
    dtokens.reshape({batch, t_len, d});
  }

  // The raw-value channel has no parameters; only the conv channels propagate.
  for (std::size_t b = 0; b < batch; ++b) {
    Tensor dh({d - 1, t_len});
    const double* tb = dtokens.raw() + b * t_len * d;
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t c = 0; c + 1 < d; ++c) dh.at(c, t) = tb[t * d + c];
    }
    for (std::size_t l = conv_.size(); l-- > 0;) {
      Tensor dpre = nn::relu_backward(cache_.conv_pre[l][b], dh);
      auto cg = nn::conv1d_backward(cache_.conv_in[l][b], params_.value(conv_[l].weight), dpre);
      add_into(params_.grad(conv_[l].weight), cg.dw);
      add_into(params_.grad(conv_[l].bias), cg.db);
      dh = std::move(cg.dx);
    }
  }
}

// ---------------------------------------------------------------------------

MlrModel::MlrModel(std::size_t n_features, std::size_t n_classes) : features_(n_features), classes_(n_classes) {
  if (n_features == 0 || n_classes < 2) throw ConfigError("mlr needs n_features > 0 and n_classes >= 2");
  params_.add("mlr.weight", Tensor({n_features, n_classes}, 0.0));
  params_.add("mlr.bias", Tensor({n_classes}, 0.0));
}

Tensor MlrModel::forward(const Tensor& x, Mode mode) {
  Tensor out = infer(x);
  if (mode == Mode::train) {
    last_x_ = x;
    last_log_probs_ = out;
  } else {
    last_x_ = Tensor{};
    last_log_probs_ = Tensor{};
  }
  return out;
}

Tensor MlrModel::infer(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != features_) {
    throw DimensionError("mlr expects input [B×" + std::to_string(features_) + "], got " + shape_str(x.shape()));
  }
  return nn::log_softmax(nn::linear_forward(x, params_.value(0), &params_.value(1)));
}

void MlrModel::backward(const Tensor& d_log_probs) {
  if (last_log_probs_.empty()) throw StateError("backward called without a preceding train-mode forward");
  if (!d_log_probs.same_shape(last_log_probs_)) throw DimensionError("mlr backward: gradient shape mismatch");
  Tensor dlogits = nn::log_softmax_backward(last_log_probs_, d_log_probs);
  auto g = nn::linear_backward(last_x_, params_.value(0), dlogits, true);
  params_.grad(0) = std::move(g.dw);
  params_.grad(1) = std::move(g.db);
}

std::unique_ptr<Classifier> MlrModel::clone() const {
  auto copy = std::make_unique<MlrModel>(*this);
  copy->last_x_ = Tensor{};
  copy->last_log_probs_ = Tensor{};
  copy->params_.clear_grads();
  return copy;
}

std::uint64_t MlrModel::flop_estimate(std::size_t batch) const {
  return (linear_flops(features_, classes_) + 3ULL * classes_) * batch;
}

std::string MlrModel::architecture() const {
  return "mlr;n_features=" + std::to_string(features_) + ";n_classes=" + std::to_string(classes_);
}

std::unique_ptr<Classifier> make_model(const ModelSpec& spec) {
  if (spec.kind == ModelKind::mlr) {
    return std::make_unique<MlrModel>(spec.fetfids.n_features, spec.fetfids.n_classes);
  }
  return std::make_unique<FetFidsModel>(spec.fetfids);
}

}  // namespace fetfids
