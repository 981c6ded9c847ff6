#pragma once

// Pre-LN decoder forward pass that records every intermediate the attribution
// code reads. Block order per layer:
//   x -> ln1 -> attention -> +x -> ln2 -> MLP -> +residual
// followed by the final LN and the unembedding.

#include <cmath>
#include <span>
#include <vector>

#include "lattr/error.hpp"
#include "lattr/model.hpp"
#include "lattr/tensor.hpp"

namespace lattr {

template <std::floating_point T>
struct AttentionCapture {
  std::vector<LayerNormStats<T>> ln;  // query-side LN stats per position
  std::vector<Matrix<T>> weights;     // one (queries x sources) matrix per head
  Matrix<T> output;                   // includes b_O
};

template <std::floating_point T>
struct MlpCapture {
  std::vector<LayerNormStats<T>> ln;
  Matrix<T> keys;    // positions x d_mlp, post-activation
  Matrix<T> output;  // positions x d, includes b_2
};

// Multi-head attention from `queries` (pre-LN residual rows) onto `sources`.
// Self-attention passes the same LN'd rows for both; cross-attention passes
// encoder states as sources, which are used without normalization.
template <std::floating_point T>
AttentionCapture<T> attention_block(const Matrix<T>& w_q, const Vector<T>& b_q,
                                    const Matrix<T>& w_k, const Vector<T>& b_k,
                                    const Matrix<T>& w_v, const Vector<T>& b_v,
                                    const Matrix<T>& w_o, const Vector<T>& b_o,
                                    const Vector<T>& ln_gamma, const Vector<T>& ln_beta,
                                    double eps, std::size_t n_head, const Matrix<T>& queries,
                                    const Matrix<T>* sources, bool causal) {
  const std::size_t t = queries.rows(), d = queries.cols();
  if (d % n_head != 0) throw ShapeError("attention: width not divisible by head count");
  const std::size_t dh = d / n_head;
  AttentionCapture<T> cap;
  Matrix<T> normed(t, d);
  for (std::size_t i = 0; i < t; ++i) {
    cap.ln.push_back(layer_norm_stats(queries.row(i), eps));
    const auto y = layer_norm(queries.row(i), std::span<const T>(ln_gamma),
                              std::span<const T>(ln_beta), cap.ln.back());
    std::copy(y.begin(), y.end(), normed.row(i).begin());
  }
  const Matrix<T>& src = sources ? *sources : normed;
  if (src.cols() != d) throw ShapeError("attention: source width " + src.shape());
  const std::size_t s = src.rows();

  auto project = [](const Matrix<T>& x, const Matrix<T>& w, const Vector<T>& b) {
    Matrix<T> out = matmul(x, w);
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += b[c];
    return out;
  };
  const Matrix<T> q = project(normed, w_q, b_q);
  const Matrix<T> k = project(src, w_k, b_k);
  const Matrix<T> v = project(src, w_v, b_v);

  Matrix<T> z(t, d);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t h = 0; h < n_head; ++h) {
    Matrix<T> a(t, s);
    for (std::size_t i = 0; i < t; ++i) {
      const std::size_t visible = causal ? i + 1 : s;
      Vector<T> scores(visible);
      for (std::size_t j = 0; j < visible; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += static_cast<double>(q(i, h * dh + c)) * k(j, h * dh + c);
        scores[j] = static_cast<T>(acc * scale);
      }
      const auto p = softmax_row(std::span<const T>(scores));
      for (std::size_t j = 0; j < visible; ++j) a(i, j) = p[j];
      for (std::size_t c = 0; c < dh; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < visible; ++j) acc += static_cast<double>(a(i, j)) * v(j, h * dh + c);
        z(i, h * dh + c) = static_cast<T>(acc);
      }
    }
    cap.weights.push_back(std::move(a));
  }
  cap.output = project(z, w_o, b_o);
  return cap;
}

template <std::floating_point T>
AttentionCapture<T> self_attention_block(const LayerWeights<T>& w, double eps, std::size_t n_head,
                                         const Matrix<T>& x, bool causal = true) {
  return attention_block(w.w_q, w.b_q, w.w_k, w.b_k, w.w_v, w.b_v, w.w_o, w.b_o, w.ln1_gamma,
                         w.ln1_beta, eps, n_head, x, static_cast<const Matrix<T>*>(nullptr), causal);
}

template <std::floating_point T>
MlpCapture<T> mlp_block(const LayerWeights<T>& w, double eps, const Matrix<T>& x) {
  MlpCapture<T> cap;
  const std::size_t t = x.rows();
  cap.keys = Matrix<T>(t, w.w_1.cols());
  cap.output = Matrix<T>(t, w.w_2.cols());
  for (std::size_t i = 0; i < t; ++i) {
    cap.ln.push_back(layer_norm_stats(x.row(i), eps));
    const auto y = layer_norm(x.row(i), std::span<const T>(w.ln2_gamma),
                              std::span<const T>(w.ln2_beta), cap.ln.back());
    auto pre = vec_mat(std::span<const T>(y), w.w_1);
    for (std::size_t c = 0; c < pre.size(); ++c) cap.keys(i, c) = gelu(static_cast<T>(pre[c] + w.b_1[c]));
    auto out = vec_mat(std::span<const T>(cap.keys.row(i)), w.w_2);
    for (std::size_t c = 0; c < out.size(); ++c) cap.output(i, c) = out[c] + w.b_2[c];
  }
  return cap;
}

template <std::floating_point T>
struct LayerTrace {
  Matrix<T> input;                     // x^{l-1}
  std::vector<LayerNormStats<T>> ln1;  // per position
  std::vector<Matrix<T>> attention;    // per head, causal (t x t)
  Matrix<T> attn_out;                  // attention block output incl. b_O
  Matrix<T> mid;                       // input + attn_out
  std::vector<LayerNormStats<T>> ln2;
  Matrix<T> mlp_keys;                  // t x d_mlp
  Matrix<T> mlp_out;                   // t x d incl. b_2
  Matrix<T> output;                    // x^l = mid + mlp_out
};

template <std::floating_point T>
struct ForwardTrace {
  std::vector<TokenId> ids;
  Matrix<T> embeddings;  // x^0
  std::vector<LayerTrace<T>> layers;
  std::vector<LayerNormStats<T>> lnf;
  Matrix<T> final_hidden;  // LN_f(x^L)

  std::size_t length() const { return ids.size(); }
  std::size_t n_layers() const { return layers.size(); }

  // x^l for l in [0, L].
  const Matrix<T>& residual(std::size_t l) const {
    if (l > layers.size()) throw RangeError("residual index " + std::to_string(l) + " out of range");
    return l == 0 ? embeddings : layers[l - 1].output;
  }
};

template <std::floating_point T>
struct PredictionHead {
  std::size_t position = 0;
  Vector<T> logits;
  Vector<T> probs;
};

template <std::floating_point T>
struct ForwardResult {
  ForwardTrace<T> trace;
  PredictionHead<T> head;
};

template <std::floating_point T>
Vector<T> logits_at(const ModelBundle<T>& bundle, const ForwardTrace<T>& trace, std::size_t position) {
  if (position >= trace.length()) throw RangeError("position out of range");
  const auto h = trace.final_hidden.row(position);
  Vector<T> logits(bundle.config.vocab_size);
  for (std::size_t w = 0; w < logits.size(); ++w) {
    logits[w] = static_cast<T>(dot(h, bundle.unembedding_column(static_cast<TokenId>(w))));
  }
  return logits;
}

template <std::floating_point T>
ForwardResult<T> run_forward(const ModelBundle<T>& bundle, std::span<const TokenId> ids) {
  const auto& cfg = bundle.config;
  if (ids.empty()) throw RangeError("run_forward: empty token sequence");
  if (ids.size() > cfg.n_positions) {
    throw RangeError("run_forward: sequence of " + std::to_string(ids.size()) +
                     " tokens exceeds the model's " + std::to_string(cfg.n_positions) + " positions");
  }
  const std::size_t t = ids.size(), d = cfg.d_model;
  ForwardResult<T> res;
  auto& tr = res.trace;
  tr.ids.assign(ids.begin(), ids.end());
  tr.embeddings = Matrix<T>(t, d);
  for (std::size_t i = 0; i < t; ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= cfg.vocab_size) {
      throw RangeError("run_forward: token id " + std::to_string(ids[i]) + " outside vocabulary");
    }
    const auto te = bundle.token_embedding.row(static_cast<std::size_t>(ids[i]));
    const auto pe = bundle.position_embedding.row(i);
    for (std::size_t c = 0; c < d; ++c) tr.embeddings(i, c) = te[c] + pe[c];
  }

  const Matrix<T>* x = &tr.embeddings;
  for (const auto& w : bundle.layers) {
    LayerTrace<T> lt;
    lt.input = *x;
    auto att = self_attention_block(w, cfg.ln_eps, cfg.n_head, lt.input, true);
    lt.ln1 = std::move(att.ln);
    lt.attention = std::move(att.weights);
    lt.attn_out = std::move(att.output);
    lt.mid = Matrix<T>(t, d);
    for (std::size_t i = 0; i < t * d; ++i) lt.mid.data()[i] = lt.input.data()[i] + lt.attn_out.data()[i];
    auto mlp = mlp_block(w, cfg.ln_eps, lt.mid);
    lt.ln2 = std::move(mlp.ln);
    lt.mlp_keys = std::move(mlp.keys);
    lt.mlp_out = std::move(mlp.output);
    lt.output = Matrix<T>(t, d);
    for (std::size_t i = 0; i < t * d; ++i) lt.output.data()[i] = lt.mid.data()[i] + lt.mlp_out.data()[i];
    tr.layers.push_back(std::move(lt));
    x = &tr.layers.back().output;
  }

  tr.final_hidden = Matrix<T>(t, d);
  for (std::size_t i = 0; i < t; ++i) {
    tr.lnf.push_back(layer_norm_stats(x->row(i), cfg.ln_eps));
    const auto y = layer_norm(x->row(i), std::span<const T>(bundle.lnf_gamma),
                              std::span<const T>(bundle.lnf_beta), tr.lnf.back());
    std::copy(y.begin(), y.end(), tr.final_hidden.row(i).begin());
  }
  res.head.position = t - 1;
  res.head.logits = logits_at(bundle, tr, t - 1);
  res.head.probs = softmax_row(std::span<const T>(res.head.logits));
  return res;
}

template <std::floating_point T>
ForwardResult<T> run_forward(const ModelBundle<T>& bundle, const std::vector<TokenId>& ids) {
  return run_forward(bundle, std::span<const TokenId>(ids));
}

template <std::floating_point T>
double next_token_logit(const PredictionHead<T>& head, TokenId id) {
  if (id < 0 || static_cast<std::size_t>(id) >= head.logits.size()) {
    throw RangeError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return head.logits[static_cast<std::size_t>(id)];
}

template <std::floating_point T>
double next_token_prob(const PredictionHead<T>& head, TokenId id) {
  if (id < 0 || static_cast<std::size_t>(id) >= head.probs.size()) {
    throw RangeError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return head.probs[static_cast<std::size_t>(id)];
}

}  // namespace lattr
