#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fetfids/tensor.hpp"

// Forward operations used by the classifier, each paired with a hand-written
// backward pass. Backward functions return fresh gradient tensors; the caller
// decides where to accumulate them.
namespace fetfids::nn {

enum class Mode { train, eval };

// ---------------------------------------------------------------------------
// Dense kernels on raw row-major storage. Each output row is produced by the
// same instruction sequence regardless of m, so results do not depend on how
// many rows are processed together.

/// C[m×n] (+)= A[m×k] · B[k×n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate = false);
/// C[m×n] (+)= A[k×m]ᵀ · B[k×n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate = false);
/// C[m×n] (+)= A[m×k] · B[n×k]ᵀ
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate = false);

/// 2-D matrix product. Throws DimensionError naming both shapes.
Tensor matmul(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Activations. softmax/log_softmax act on the last axis with max subtraction.

Tensor softmax(const Tensor& z);
Tensor log_softmax(const Tensor& z);
Tensor softmax_backward(const Tensor& y, const Tensor& dy);
/// dy is the gradient w.r.t. log_softmax output; logp is that output.
Tensor log_softmax_backward(const Tensor& logp, const Tensor& dy);

Tensor relu(const Tensor& x);
/// Passes dy where x > 0; the gradient at exactly 0 is 0.
Tensor relu_backward(const Tensor& x, const Tensor& dy);

// ---------------------------------------------------------------------------
// Fully connected layer over the last axis: y = xW + b.

/// b may be null for a bias-free layer.
Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor* b);

struct LinearGrads {
  Tensor dx;
  Tensor dw;
  Tensor db;  // empty when the layer has no bias
};
LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, bool with_bias);

// ---------------------------------------------------------------------------
// Same-length 1-D convolution.
//
//   y[o][j] = b[o] + Σ_c Σ_{k=-p..p} x[c][j-k] · w[o][c][k+p]
//
// with x zero outside [0, L). x: [C_in×L], w: [C_out×C_in×(2p+1)], b: [C_out].

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b);

struct Conv1dGrads {
  Tensor dx;
  Tensor dw;
  Tensor db;
};
Conv1dGrads conv1d_backward(const Tensor& x, const Tensor& w, const Tensor& dy);

// ---------------------------------------------------------------------------
// Batch normalization over rows, per feature (last axis).
//
// Train mode normalizes with the biased batch variance (divisor m) and updates
// the running variance with the unbiased estimate (divisor m-1).

struct BatchNormState {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;
  double momentum = 0.1;
  Mode mode = Mode::train;

  static BatchNormState create(std::size_t features);
};

struct BatchNormCache {
  Tensor xhat;
  std::vector<double> inv_std;
  Mode mode = Mode::train;
};

/// Reference form over externally owned storage (the model keeps these in a ParamSet).
struct BatchNormRefs {
  const Tensor& gamma;
  const Tensor& beta;
  Tensor& running_mean;
  Tensor& running_var;
  double eps = 1e-5;
  double momentum = 0.1;
};

Tensor batchnorm_forward(const Tensor& x, const BatchNormRefs& bn, Mode mode, BatchNormCache* cache = nullptr);
Tensor batchnorm(const Tensor& x, BatchNormState& state, BatchNormCache* cache = nullptr);

struct BatchNormGrads {
  Tensor dx;
  Tensor dgamma;
  Tensor dbeta;
};
BatchNormGrads batchnorm_backward(const BatchNormCache& cache, const Tensor& gamma, const Tensor& dy);

// ---------------------------------------------------------------------------
// Scaled dot-product attention: softmax(QKᵀ/√d_k)V, no masking.

struct AttentionCache {
  Tensor probs;  // [T×T]
};

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, AttentionCache* cache = nullptr);

struct AttentionGrads {
  Tensor dq;
  Tensor dk;
  Tensor dv;
};
AttentionGrads attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionCache& cache,
                                  const Tensor& dout);

// ---------------------------------------------------------------------------
// Multi-head self-attention over X: [B×T×D]. The projections are D×D; head h
// owns columns [h·d_k, (h+1)·d_k) of Wq, Wk and Wv. Head outputs are
// concatenated in head order and mapped by Wo. The projections carry no bias:
// softmax is shift invariant along a row and every use in this project is
// followed by a residual add and BatchNorm, which removes constant offsets.

struct MhaParams {
  const Tensor& wq;
  const Tensor& wk;
  const Tensor& wv;
  const Tensor& wo;
};

struct MhaCache {
  Tensor x;       // [B·T×D]
  Tensor q, k, v; // [B·T×D]
  Tensor probs;   // [B×H×T×T]
  Tensor concat;  // [B·T×D]
};

Tensor multihead_attention(const Tensor& x, const MhaParams& p, std::size_t heads, MhaCache* cache = nullptr);

struct MhaGrads {
  Tensor dx;
  Tensor dwq, dwk, dwv, dwo;
};
MhaGrads multihead_attention_backward(const MhaCache& cache, const MhaParams& p, std::size_t heads,
                                      const Tensor& dout);

// ---------------------------------------------------------------------------

struct NllResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d log_probs
};

/// Mean negative log-likelihood of the true class. Throws LabelError on an
/// out-of-range label, naming the offending row.
NllResult nll_loss(const Tensor& log_probs, std::span<const int> labels);

}  // namespace fetfids::nn
