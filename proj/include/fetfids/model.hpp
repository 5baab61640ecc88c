#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "fetfids/nn.hpp"
#include "fetfids/param_set.hpp"

namespace fetfids {

enum class ModelKind { fetfids, mlr };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& text);

/// Architecture of the attention classifier. The defaults are the documented
/// desk-scale configuration: 116,554 parameters, 1,218,527 FLOPs per example.
struct FetFidsConfig {
  std::size_t n_features = 41;
  std::size_t d_model = 16;
  std::size_t heads = 8;
  std::size_t blocks = 3;
  // Widths of the conv stack; the last must be d_model - 1 because the raw
  // feature value is appended as the final channel of every token.
  std::vector<std::size_t> embed_channels = {8, 15};
  std::size_t embed_kernel = 3;
  std::size_t ff_hidden = 32;
  std::vector<std::size_t> mlp_hidden = {318, 318};
  std::size_t n_classes = 5;
  std::uint64_t seed = 0;

  /// Every violated constraint, empty when valid.
  std::vector<std::string> violations() const;
  /// Throws ConfigError listing all violations at once.
  void validate() const;
};

/// Common surface of the two model kinds the federated harness can train.
///
/// forward() in train mode caches activations for the following backward()
/// and updates BatchNorm running statistics, so a model instance is
/// single-writer. infer() is the eval-mode forward and touches nothing.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual ModelKind kind() const = 0;
  virtual std::size_t n_features() const = 0;
  virtual std::size_t n_classes() const = 0;

  virtual ParamSet& params() = 0;
  virtual const ParamSet& params() const = 0;

  /// Log-probabilities [B×n_classes].
  virtual Tensor forward(const Tensor& x, nn::Mode mode) = 0;
  virtual Tensor infer(const Tensor& x) const = 0;

  /// Writes ∂loss/∂θ into params() grads (overwriting), given ∂loss/∂log_probs
  /// for the most recent train-mode forward().
  virtual void backward(const Tensor& d_log_probs) = 0;

  virtual std::unique_ptr<Classifier> clone() const = 0;

  /// Forward-pass floating point operations for `batch` examples.
  virtual std::uint64_t flop_estimate(std::size_t batch = 1) const = 0;

  /// Architecture description hashed into checkpoints. Excludes the seed.
  virtual std::string architecture() const = 0;

  std::size_t param_count() const { return params().trainable_count(); }

  /// Replaces all values with those of `weights` (must be structurally equal).
  void set_weights(const ParamSet& weights);
};

/// 2·in·out multiply-adds plus the bias add.
std::uint64_t linear_flops(std::size_t in, std::size_t out);

/// The feature-embedding attention classifier.
class FetFidsModel final : public Classifier {
 public:
  explicit FetFidsModel(const FetFidsConfig& config);

  const FetFidsConfig& config() const { return config_; }

  ModelKind kind() const override { return ModelKind::fetfids; }
  std::size_t n_features() const override { return config_.n_features; }
  std::size_t n_classes() const override { return config_.n_classes; }
  ParamSet& params() override { return params_; }
  const ParamSet& params() const override { return params_; }

  Tensor forward(const Tensor& x, nn::Mode mode) override;
  Tensor infer(const Tensor& x) const override;
  void backward(const Tensor& d_log_probs) override;
  std::unique_ptr<Classifier> clone() const override;
  std::uint64_t flop_estimate(std::size_t batch = 1) const override;
  std::string architecture() const override;

  /// Token matrix [B×F×d_model]: conv/ReLU channels followed by the raw value.
  Tensor feature_embed(const Tensor& x) const;
  /// One encoder block applied to tokens [B×T×D]; train mode updates the block's running stats.
  Tensor encoder_block(std::size_t block, const Tensor& tokens, nn::Mode mode);
  /// Zeroes all grads, then writes the block's parameter grads for the most
  /// recent train-mode encoder_block() call. Returns ∂loss/∂tokens.
  Tensor encoder_block_backward(std::size_t block, const Tensor& dout);

  /// Parameter count implied by a config, summed layer by layer.
  static std::size_t analytic_param_count(const FetFidsConfig& config);

 private:
  struct ConvLayer {
    std::size_t weight, bias;
  };
  struct Norm {
    std::size_t gamma, beta, mean, var;
  };
  struct Block {
    std::size_t wq, wk, wv, wo;
    Norm norm1;
    std::size_t ff_w1, ff_b1, ff_w2;
    Norm norm2;
  };
  struct Dense {
    std::size_t weight, bias;
  };

  struct BlockCache {
    nn::MhaCache mha;
    nn::BatchNormCache bn1, bn2;
    Tensor norm1_out;  // [N×D]
    Tensor ff_pre;     // [N×ff]
    Tensor ff_act;     // [N×ff]
  };
  struct Cache {
    std::size_t batch = 0;
    std::vector<std::vector<Tensor>> conv_in;   // [layer][example]
    std::vector<std::vector<Tensor>> conv_pre;  // [layer][example]
    std::vector<BlockCache> blocks;
    Tensor pooled;
    std::vector<Tensor> mlp_in, mlp_pre;
    std::vector<nn::BatchNormCache> mlp_bn;
    Tensor out_in;
    Tensor log_probs;
    bool valid = false;
  };

  Tensor run(const Tensor& x, nn::Mode mode, ParamSet& params, Cache* cache) const;
  Tensor embed(const Tensor& x, const ParamSet& params, Cache* cache) const;
  Tensor block_forward(const Block& blk, const Tensor& tokens, nn::Mode mode, ParamSet& params,
                       BlockCache* cache) const;
  Tensor block_backward(const Block& blk, const BlockCache& cache, const Tensor& dout);
  Norm add_norm(const std::string& prefix, std::size_t width);
  nn::BatchNormRefs norm_refs(const Norm& n, ParamSet& params) const;
  void check_input(const Tensor& x) const;

  FetFidsConfig config_;
  ParamSet params_;
  std::vector<ConvLayer> conv_;
  std::vector<Block> blocks_;
  std::vector<Dense> mlp_;
  std::vector<Norm> mlp_norm_;
  Dense out_{};
  Cache cache_;
  BlockCache probe_cache_;
  std::size_t probe_block_ = SIZE_MAX;
};

/// Multinomial logistic regression: log_softmax(xW + b), zero-initialized.
class MlrModel final : public Classifier {
 public:
  MlrModel(std::size_t n_features, std::size_t n_classes);

  ModelKind kind() const override { return ModelKind::mlr; }
  std::size_t n_features() const override { return features_; }
  std::size_t n_classes() const override { return classes_; }
  ParamSet& params() override { return params_; }
  const ParamSet& params() const override { return params_; }

  Tensor forward(const Tensor& x, nn::Mode mode) override;
  Tensor infer(const Tensor& x) const override;
  void backward(const Tensor& d_log_probs) override;
  std::unique_ptr<Classifier> clone() const override;
  std::uint64_t flop_estimate(std::size_t batch = 1) const override;
  std::string architecture() const override;

 private:
  std::size_t features_;
  std::size_t classes_;
  ParamSet params_;
  Tensor last_x_;
  Tensor last_log_probs_;
};

/// Everything needed to build a model of either kind.
struct ModelSpec {
  ModelKind kind = ModelKind::fetfids;
  FetFidsConfig fetfids;  // for mlr only n_features / n_classes are used
};

std::unique_ptr<Classifier> make_model(const ModelSpec& spec);

/// 64-bit FNV-1a of the model's architecture string.
std::uint64_t config_digest(const Classifier& model);

/// Checkpoint layout (little-endian):
///   "FETFIDS-CKPT-1\n"  magic, 15 bytes
///   u64 config digest
///   u64 record count
///   per record: u32 name length, name bytes, u32 rank, u64 dims[rank], f64 payload
void save_params(const Classifier& model, const std::filesystem::path& path);

/// Loads values into `model`. Throws IncompatibleCheckpointError on a digest or
/// layout mismatch and CorruptionError on a malformed or truncated file; the
/// model is left untouched on any error.
void load_params(const std::filesystem::path& path, Classifier& model);

/// Builds a model from `spec` and loads the checkpoint into it.
std::unique_ptr<Classifier> load_checkpoint(const std::filesystem::path& path, const ModelSpec& spec);

}  // namespace fetfids
