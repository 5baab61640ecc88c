#include "fetfids/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fetfids/errors.hpp"

namespace fetfids::nn {

namespace {

void require_rank_at_least(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() < rank) {
    throw DimensionError(std::string(what) + " expects rank >= " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Row-wise softmax of `n` values at `z` into `out`, max-subtracted.
void softmax_row(const double* z, double* out, std::size_t n) {
  double m = z[0];
  for (std::size_t j = 1; j < n; ++j) m = std::max(m, z[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(z[j] - m);
    sum += out[j];
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j < n; ++j) out[j] *= inv;
}

// One attention head over strided rows. q/k rows hold d_k values, v/out rows
// hold d_v values; consecutive rows are `ld` doubles apart.
void head_forward(const double* q, const double* k, const double* v, std::size_t ld, std::size_t t_len,
                  std::size_t dk, std::size_t dv, double* probs, double* out, std::size_t ld_out) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<double> scores(t_len);
  for (std::size_t i = 0; i < t_len; ++i) {
    const double* qi = q + i * ld;
    for (std::size_t j = 0; j < t_len; ++j) {
      const double* kj = k + j * ld;
      double s = 0.0;
      for (std::size_t t = 0; t < dk; ++t) s += qi[t] * kj[t];
      scores[j] = s * scale;
    }
    double* pi = probs + i * t_len;
    softmax_row(scores.data(), pi, t_len);
    double* oi = out + i * ld_out;
    for (std::size_t t = 0; t < dv; ++t) oi[t] = 0.0;
    for (std::size_t j = 0; j < t_len; ++j) {
      const double p = pi[j];
      const double* vj = v + j * ld;
      for (std::size_t t = 0; t < dv; ++t) oi[t] += p * vj[t];
    }
  }
}

// Gradients of one head; dq/dk/dv are accumulated with the same strides as the inputs.
void head_backward(const double* q, const double* k, const double* v, std::size_t ld, std::size_t t_len,
                   std::size_t dk, std::size_t dv, const double* probs, const double* dout, std::size_t ld_out,
                   double* dq, double* dkk, double* dvv) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<double> dp(t_len);
  for (std::size_t i = 0; i < t_len; ++i) {
    const double* pi = probs + i * t_len;
    const double* doi = dout + i * ld_out;
    double dot = 0.0;
    for (std::size_t j = 0; j < t_len; ++j) {
      const double* vj = v + j * ld;
      double s = 0.0;
      for (std::size_t t = 0; t < dv; ++t) s += doi[t] * vj[t];
      dp[j] = s;
      dot += s * pi[j];
      double* dvj = dvv + j * ld;
      for (std::size_t t = 0; t < dv; ++t) dvj[t] += pi[j] * doi[t];
    }
    const double* qi = q + i * ld;
    double* dqi = dq + i * ld;
    for (std::size_t j = 0; j < t_len; ++j) {
      const double ds = pi[j] * (dp[j] - dot) * scale;
      const double* kj = k + j * ld;
      double* dkj = dkk + j * ld;
      for (std::size_t t = 0; t < dk; ++t) {
        dqi[t] += ds * kj[t];
        dkj[t] += ds * qi[t];
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    if (!accumulate) std::fill(ci, ci + n, 0.0);
    const double* ai = a + i * k;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = ai[t];
      const double* bt = b + t * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bt[j];
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t t = 0; t < k; ++t) {
    const double* at = a + t * m;
    const double* bt = b + t * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = at[i];
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bt[j];
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += ai[t] * bj[t];
      ci[j] = accumulate ? ci[j] + s : s;
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  Tensor c({a.dim(0), b.dim(1)});
  gemm_nn(a.raw(), b.raw(), c.raw(), a.dim(0), a.dim(1), b.dim(1));
  return c;
}

// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& z) {
  require_rank_at_least(z, 1, "softmax");
  Tensor y(z.shape());
  const std::size_t n = z.cols();
  for (std::size_t r = 0; r < z.rows(); ++r) softmax_row(z.raw() + r * n, y.raw() + r * n, n);
  return y;
}

Tensor log_softmax(const Tensor& z) {
  require_rank_at_least(z, 1, "log_softmax");
  Tensor y(z.shape());
  const std::size_t n = z.cols();
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const double* zr = z.raw() + r * n;
    double* yr = y.raw() + r * n;
    const double m = *std::max_element(zr, zr + n);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(zr[j] - m);
    const double lse = m + std::log(sum);
    for (std::size_t j = 0; j < n; ++j) yr[j] = zr[j] - lse;
  }
  return y;
}

Tensor softmax_backward(const Tensor& y, const Tensor& dy) {
  require_same_shape(y, dy, "softmax_backward");
  Tensor dz(y.shape());
  const std::size_t n = y.cols();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const double* yr = y.raw() + r * n;
    const double* gr = dy.raw() + r * n;
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
    for (std::size_t j = 0; j < n; ++j) dz.raw()[r * n + j] = yr[j] * (gr[j] - dot);
  }
  return dz;
}

Tensor log_softmax_backward(const Tensor& logp, const Tensor& dy) {
  require_same_shape(logp, dy, "log_softmax_backward");
  Tensor dz(logp.shape());
  const std::size_t n = logp.cols();
  for (std::size_t r = 0; r < logp.rows(); ++r) {
    const double* lr = logp.raw() + r * n;
    const double* gr = dy.raw() + r * n;
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += gr[j];
    for (std::size_t j = 0; j < n; ++j) dz.raw()[r * n + j] = gr[j] - std::exp(lr[j]) * sum;
  }
  return dz;
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  require_same_shape(x, dy, "relu_backward");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
  return dx;
}

// ---------------------------------------------------------------------------

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor* b) {
  require_rank_at_least(x, 2, "linear");
  if (w.rank() != 2 || x.cols() != w.dim(0)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
  }
  const std::size_t out = w.dim(1);
  if (b != nullptr && (b->rank() != 1 || b->dim(0) != out)) {
    throw DimensionError("linear: bias " + shape_str(b->shape()) + " does not match weight " + shape_str(w.shape()));
  }
  Shape shape = x.shape();
  shape.back() = out;
  Tensor y(shape);
  const std::size_t m = x.rows();
  if (b != nullptr) {
    for (std::size_t i = 0; i < m; ++i) std::copy(b->raw(), b->raw() + out, y.raw() + i * out);
  }
  gemm_nn(x.raw(), w.raw(), y.raw(), m, x.cols(), out, b != nullptr);
  return y;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, bool with_bias) {
  const std::size_t m = x.rows();
  const std::size_t in = w.dim(0);
  const std::size_t out = w.dim(1);
  if (dy.rows() != m || dy.cols() != out) {
    throw DimensionError("linear_backward: upstream gradient " + shape_str(dy.shape()) + " does not match output");
  }
  LinearGrads g;
  g.dx = Tensor(x.shape());
  gemm_nt(dy.raw(), w.raw(), g.dx.raw(), m, out, in);
  g.dw = Tensor(w.shape());
  gemm_tn(x.raw(), dy.raw(), g.dw.raw(), in, m, out);
  if (with_bias) {
    g.db = Tensor({out});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < out; ++j) g.db[j] += dy.raw()[i * out + j];
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 3) throw DimensionError("conv1d: kernel must be [C_out×C_in×K], got " + shape_str(w.shape()));
  const std::size_t kernel = w.dim(2);
  if (kernel % 2 == 0) throw ConfigError("conv1d: kernel length must be odd, got " + std::to_string(kernel));
  if (x.rank() != 2 || x.dim(0) != w.dim(1)) {
    throw DimensionError("conv1d: input " + shape_str(x.shape()) + " does not match kernel " + shape_str(w.shape()));
  }
  const std::size_t c_out = w.dim(0);
  const std::size_t c_in = w.dim(1);
  if (b.rank() != 1 || b.dim(0) != c_out) {
    throw DimensionError("conv1d: bias " + shape_str(b.shape()) + " does not match kernel " + shape_str(w.shape()));
  }
  const std::size_t len = x.dim(1);
  const auto pad = static_cast<std::ptrdiff_t>(kernel / 2);
  const auto slen = static_cast<std::ptrdiff_t>(len);
  Tensor y({c_out, len});
  for (std::size_t o = 0; o < c_out; ++o) {
    for (std::ptrdiff_t j = 0; j < slen; ++j) {
      double s = b[o];
      for (std::size_t c = 0; c < c_in; ++c) {
        const double* xc = x.raw() + c * len;
        const double* wc = w.raw() + (o * c_in + c) * kernel;
        for (std::ptrdiff_t k = -pad; k <= pad; ++k) {
          const std::ptrdiff_t src = j - k;
          if (src < 0 || src >= slen) continue;
          s += xc[src] * wc[k + pad];
        }
      }
      y.raw()[o * len + static_cast<std::size_t>(j)] = s;
    }
  }
  return y;
}

Conv1dGrads conv1d_backward(const Tensor& x, const Tensor& w, const Tensor& dy) {
  const std::size_t c_out = w.dim(0);
  const std::size_t c_in = w.dim(1);
  const std::size_t kernel = w.dim(2);
  const std::size_t len = x.dim(1);
  if (dy.rank() != 2 || dy.dim(0) != c_out || dy.dim(1) != len) {
    throw DimensionError("conv1d_backward: upstream gradient " + shape_str(dy.shape()) + " does not match output");
  }
  const auto pad = static_cast<std::ptrdiff_t>(kernel / 2);
  const auto slen = static_cast<std::ptrdiff_t>(len);
  Conv1dGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({c_out})};
  for (std::size_t o = 0; o < c_out; ++o) {
    const double* dyo = dy.raw() + o * len;
    for (std::ptrdiff_t j = 0; j < slen; ++j) {
      const double gj = dyo[j];
      g.db[o] += gj;
      for (std::size_t c = 0; c < c_in; ++c) {
        const double* xc = x.raw() + c * len;
        double* dxc = g.dx.raw() + c * len;
        const double* wc = w.raw() + (o * c_in + c) * kernel;
        double* dwc = g.dw.raw() + (o * c_in + c) * kernel;
        for (std::ptrdiff_t k = -pad; k <= pad; ++k) {
          const std::ptrdiff_t src = j - k;
          if (src < 0 || src >= slen) continue;
          dxc[src] += gj * wc[k + pad];
          dwc[k + pad] += gj * xc[src];
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

BatchNormState BatchNormState::create(std::size_t features) {
  BatchNormState s;
  s.gamma = Tensor({features}, 1.0);
  s.beta = Tensor({features}, 0.0);
  s.running_mean = Tensor({features}, 0.0);
  s.running_var = Tensor({features}, 1.0);
  return s;
}

Tensor batchnorm_forward(const Tensor& x, const BatchNormRefs& bn, Mode mode, BatchNormCache* cache) {
  require_rank_at_least(x, 2, "batchnorm");
  const std::size_t f = x.cols();
  const std::size_t m = x.rows();
  for (const Tensor* t : {&bn.gamma, &bn.beta, static_cast<const Tensor*>(&bn.running_mean),
                          static_cast<const Tensor*>(&bn.running_var)}) {
    if (t->rank() != 1 || t->dim(0) != f) {
      throw DimensionError("batchnorm: parameter " + shape_str(t->shape()) + " does not match input " +
                           shape_str(x.shape()));
    }
  }
  if (!(bn.eps > 0.0)) throw ConfigError("batchnorm: eps must be positive");

  std::vector<double> mean(f, 0.0);
  std::vector<double> inv_std(f, 0.0);
  if (mode == Mode::train) {
    if (m < 2) throw BatchSizeError("batchnorm in train mode needs at least 2 rows, got " + std::to_string(m));
    std::vector<double> var(f, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const double* xi = x.raw() + i * f;
      for (std::size_t j = 0; j < f; ++j) mean[j] += xi[j];
    }
    for (auto& v : mean) v /= static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
      const double* xi = x.raw() + i * f;
      for (std::size_t j = 0; j < f; ++j) {
        const double d = xi[j] - mean[j];
        var[j] += d * d;
      }
    }
    const double unbias = static_cast<double>(m) / static_cast<double>(m - 1);
    for (std::size_t j = 0; j < f; ++j) {
      var[j] /= static_cast<double>(m);
      inv_std[j] = 1.0 / std::sqrt(var[j] + bn.eps);
      bn.running_mean[j] = (1.0 - bn.momentum) * bn.running_mean[j] + bn.momentum * mean[j];
      bn.running_var[j] = (1.0 - bn.momentum) * bn.running_var[j] + bn.momentum * var[j] * unbias;
    }
  } else {
    for (std::size_t j = 0; j < f; ++j) {
      mean[j] = bn.running_mean[j];
      inv_std[j] = 1.0 / std::sqrt(bn.running_var[j] + bn.eps);
    }
  }

  Tensor y(x.shape());
  Tensor xhat(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.raw() + i * f;
    double* hi = xhat.raw() + i * f;
    double* yi = y.raw() + i * f;
    for (std::size_t j = 0; j < f; ++j) {
      hi[j] = (xi[j] - mean[j]) * inv_std[j];
      yi[j] = bn.gamma[j] * hi[j] + bn.beta[j];
    }
  }
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return y;
}

Tensor batchnorm(const Tensor& x, BatchNormState& state, BatchNormCache* cache) {
  const BatchNormRefs refs{state.gamma, state.beta, state.running_mean, state.running_var, state.eps, state.momentum};
  return batchnorm_forward(x, refs, state.mode, cache);
}

BatchNormGrads batchnorm_backward(const BatchNormCache& cache, const Tensor& gamma, const Tensor& dy) {
  require_same_shape(cache.xhat, dy, "batchnorm_backward");
  const std::size_t f = dy.cols();
  const std::size_t m = dy.rows();
  BatchNormGrads g{Tensor(dy.shape()), Tensor({f}), Tensor({f})};
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = dy.raw() + i * f;
    const double* hi = cache.xhat.raw() + i * f;
    for (std::size_t j = 0; j < f; ++j) {
      g.dbeta[j] += gi[j];
      g.dgamma[j] += gi[j] * hi[j];
    }
  }
  if (cache.mode == Mode::eval) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < f; ++j) g.dx.raw()[i * f + j] = dy.raw()[i * f + j] * gamma[j] * cache.inv_std[j];
    }
    return g;
  }
  // dx = inv_std/m · (m·dxhat − Σdxhat − xhat·Σ(dxhat·xhat)), with dxhat = γ·dy
  const double md = static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = dy.raw() + i * f;
    const double* hi = cache.xhat.raw() + i * f;
    double* dxi = g.dx.raw() + i * f;
    for (std::size_t j = 0; j < f; ++j) {
      const double sum_dxhat = gamma[j] * g.dbeta[j];
      const double sum_dxhat_xhat = gamma[j] * g.dgamma[j];
      dxi[j] = cache.inv_std[j] / md * (md * gamma[j] * gi[j] - sum_dxhat - hi[j] * sum_dxhat_xhat);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, AttentionCache* cache) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) throw DimensionError("attention expects 2-D Q, K, V");
  if (q.dim(1) != k.dim(1)) {
    throw DimensionError("attention: Q " + shape_str(q.shape()) + " and K " + shape_str(k.shape()) +
                         " disagree on d_k");
  }
  if (q.dim(0) != k.dim(0) || k.dim(0) != v.dim(0)) {
    throw DimensionError("attention: row counts differ: Q " + shape_str(q.shape()) + ", K " + shape_str(k.shape()) +
                         ", V " + shape_str(v.shape()));
  }
  const std::size_t t_len = q.dim(0);
  const std::size_t dk = q.dim(1);
  const std::size_t dv = v.dim(1);
  // head_forward assumes a shared row stride; copy K/V rows to Q's stride when they differ.
  Tensor probs({t_len, t_len});
  Tensor out({t_len, dv});
  const std::size_t ld = std::max(dk, dv);
  std::vector<double> qs(t_len * ld, 0.0), ks(t_len * ld, 0.0), vs(t_len * ld, 0.0);
  for (std::size_t i = 0; i < t_len; ++i) {
    std::copy_n(q.raw() + i * dk, dk, qs.data() + i * ld);
    std::copy_n(k.raw() + i * dk, dk, ks.data() + i * ld);
    std::copy_n(v.raw() + i * dv, dv, vs.data() + i * ld);
  }
  head_forward(qs.data(), ks.data(), vs.data(), ld, t_len, dk, dv, probs.raw(), out.raw(), dv);
  if (cache != nullptr) cache->probs = std::move(probs);
  return out;
}

AttentionGrads attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionCache& cache,
                                  const Tensor& dout) {
  const std::size_t t_len = q.dim(0);
  const std::size_t dk = q.dim(1);
  const std::size_t dv = v.dim(1);
  if (dout.rank() != 2 || dout.dim(0) != t_len || dout.dim(1) != dv) {
    throw DimensionError("attention_backward: upstream gradient " + shape_str(dout.shape()) + " does not match output");
  }
  const std::size_t ld = std::max(dk, dv);
  std::vector<double> qs(t_len * ld, 0.0), ks(t_len * ld, 0.0), vs(t_len * ld, 0.0);
  std::vector<double> dq(t_len * ld, 0.0), dkk(t_len * ld, 0.0), dvv(t_len * ld, 0.0);
  for (std::size_t i = 0; i < t_len; ++i) {
    std::copy_n(q.raw() + i * dk, dk, qs.data() + i * ld);
    std::copy_n(k.raw() + i * dk, dk, ks.data() + i * ld);
    std::copy_n(v.raw() + i * dv, dv, vs.data() + i * ld);
  }
  head_backward(qs.data(), ks.data(), vs.data(), ld, t_len, dk, dv, cache.probs.raw(), dout.raw(), dv, dq.data(),
                dkk.data(), dvv.data());
  AttentionGrads g{Tensor(q.shape()), Tensor(k.shape()), Tensor(v.shape())};
  for (std::size_t i = 0; i < t_len; ++i) {
    std::copy_n(dq.data() + i * ld, dk, g.dq.raw() + i * dk);
    std::copy_n(dkk.data() + i * ld, dk, g.dk.raw() + i * dk);
    std::copy_n(dvv.data() + i * ld, dv, g.dv.raw() + i * dv);
  }
  return g;
}

// ---------------------------------------------------------------------------

namespace {

struct MhaDims {
  std::size_t batch, tokens, width, heads, dk;
};

MhaDims check_mha(const Tensor& x, const MhaParams& p, std::size_t heads) {
  if (x.rank() != 3) throw DimensionError("multihead_attention expects [B×T×D], got " + shape_str(x.shape()));
  const std::size_t d = x.dim(2);
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("multihead_attention: width " + std::to_string(d) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  for (const Tensor* w : {&p.wq, &p.wk, &p.wv, &p.wo}) {
    if (w->rank() != 2 || w->dim(0) != d || w->dim(1) != d) {
      throw DimensionError("multihead_attention: projection " + shape_str(w->shape()) + " does not match width " +
                           std::to_string(d));
    }
  }
  return {x.dim(0), x.dim(1), d, heads, d / heads};
}

}  // namespace

Tensor multihead_attention(const Tensor& x, const MhaParams& p, std::size_t heads, MhaCache* cache) {
  const auto dims = check_mha(x, p, heads);
  const std::size_t rows = dims.batch * dims.tokens;
  const std::size_t d = dims.width;
  const std::size_t t_len = dims.tokens;

  Tensor q({rows, d}), k({rows, d}), v({rows, d});
  gemm_nn(x.raw(), p.wq.raw(), q.raw(), rows, d, d);
  gemm_nn(x.raw(), p.wk.raw(), k.raw(), rows, d, d);
  gemm_nn(x.raw(), p.wv.raw(), v.raw(), rows, d, d);

  Tensor probs({dims.batch, heads, t_len, t_len});
  Tensor concat({rows, d});
  for (std::size_t b = 0; b < dims.batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = b * t_len * d + h * dims.dk;
      head_forward(q.raw() + off, k.raw() + off, v.raw() + off, d, t_len, dims.dk, dims.dk,
                   probs.raw() + (b * heads + h) * t_len * t_len, concat.raw() + off, d);
    }
  }
  Tensor out({dims.batch, t_len, d});
  gemm_nn(concat.raw(), p.wo.raw(), out.raw(), rows, d, d);
  if (cache != nullptr) {
    cache->x = x.reshaped({rows, d});
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->concat = std::move(concat);
  }
  return out;
}

MhaGrads multihead_attention_backward(const MhaCache& cache, const MhaParams& p, std::size_t heads,
                                      const Tensor& dout) {
  const std::size_t batch = cache.probs.dim(0);
  const std::size_t t_len = cache.probs.dim(2);
  const std::size_t d = cache.x.dim(1);
  const std::size_t rows = batch * t_len;
  const std::size_t dk = d / heads;
  if (dout.size() != rows * d) {
    throw DimensionError("multihead_attention_backward: upstream gradient " + shape_str(dout.shape()) +
                         " does not match output");
  }
  MhaGrads g;
  g.dwo = Tensor({d, d});
  gemm_tn(cache.concat.raw(), dout.raw(), g.dwo.raw(), d, rows, d);
  Tensor dconcat({rows, d});
  gemm_nt(dout.raw(), p.wo.raw(), dconcat.raw(), rows, d, d);

  Tensor dq({rows, d}), dk_({rows, d}), dv({rows, d});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = b * t_len * d + h * dk;
      head_backward(cache.q.raw() + off, cache.k.raw() + off, cache.v.raw() + off, d, t_len, dk, dk,
                    cache.probs.raw() + (b * heads + h) * t_len * t_len, dconcat.raw() + off, d, dq.raw() + off,
                    dk_.raw() + off, dv.raw() + off);
    }
  }
  g.dwq = Tensor({d, d});
  g.dwk = Tensor({d, d});
  g.dwv = Tensor({d, d});
  gemm_tn(cache.x.raw(), dq.raw(), g.dwq.raw(), d, rows, d);
  gemm_tn(cache.x.raw(), dk_.raw(), g.dwk.raw(), d, rows, d);
  gemm_tn(cache.x.raw(), dv.raw(), g.dwv.raw(), d, rows, d);
  g.dx = Tensor({batch, t_len, d});
  gemm_nt(dq.raw(), p.wq.raw(), g.dx.raw(), rows, d, d);
  gemm_nt(dk_.raw(), p.wk.raw(), g.dx.raw(), rows, d, d, true);
  gemm_nt(dv.raw(), p.wv.raw(), g.dx.raw(), rows, d, d, true);
  return g;
}

// ---------------------------------------------------------------------------

NllResult nll_loss(const Tensor& log_probs, std::span<const int> labels) {
  if (log_probs.rank() != 2) throw DimensionError("nll_loss expects [B×J], got " + shape_str(log_probs.shape()));
  const std::size_t batch = log_probs.dim(0);
  const std::size_t classes = log_probs.dim(1);
  if (labels.size() != batch) {
    throw DimensionError("nll_loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(batch) +
                         " rows");
  }
  NllResult r{0.0, Tensor(log_probs.shape())};
  const double inv_b = 1.0 / static_cast<double>(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw LabelError("nll_loss: label " + std::to_string(y) + " at row " + std::to_string(i) + " outside [0," +
                       std::to_string(classes) + ")");
    }
    r.loss -= log_probs.at(i, static_cast<std::size_t>(y));
    r.grad.at(i, static_cast<std::size_t>(y)) = -inv_b;
  }
  r.loss *= inv_b;
  return r;
}

}  // namespace fetfids::nn
