#pragma once

// Attention block output as a sum of per-source affine images:
//
//   attn_out_t = sum_j T_{t,j}(x_j) + b_O
//   T_{t,j}(x) = sum_h A^h_{t,j} * ( (x L_j) W_V^h W_O^h + theta^h )
//   theta^h    = (beta W_V^h + b_V^h) W_O^h
//
// L_j is the layer norm frozen at the source's realized sigma. Bias shares
// A^h_{t,j} theta^h stay with source j; b_O is reported separately.

#include <optional>
#include <span>
#include <vector>

#include "lattr/error.hpp"
#include "lattr/model.hpp"
#include "lattr/tensor.hpp"
#include "lattr/trace.hpp"

namespace lattr {

// Layer norm with its scale frozen: x -> ((x - mean(x)) / sigma) * gamma + beta.
// Centering is recomputed from whatever vector is mapped, so the linear part is linear.
template <std::floating_point T>
struct LnAffine {
  Vector<T> gamma;
  Vector<T> beta;
  T sigma{};

  Vector<T> apply_linear(std::span<const T> x) const {
    if (x.size() != gamma.size()) throw ShapeError("LnAffine: input width mismatch");
    double mean = 0.0;
    for (T v : x) mean += v;
    mean /= static_cast<double>(x.size());
    Vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
      out[i] = static_cast<T>((x[i] - mean) / sigma * gamma[i]);
    return out;
  }

  Vector<T> apply(std::span<const T> x) const {
    auto out = apply_linear(x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += beta[i];
    return out;
  }
};

template <std::floating_point T>
LnAffine<T> linearize_ln(std::span<const T> gamma, std::span<const T> beta, std::span<const T> x,
                         double eps) {
  if (x.size() != gamma.size() || beta.size() != gamma.size()) {
    throw ShapeError("linearize_ln: gamma, beta and x must share a length");
  }
  return {Vector<T>(gamma.begin(), gamma.end()), Vector<T>(beta.begin(), beta.end()),
          layer_norm_stats(x, eps).std};
}

template <std::floating_point T>
struct TransformedVectors {
  std::size_t layer = 0;
  std::size_t query = 0;
  Matrix<T> vectors;                // sources x d, T_{t,j}(x_j) summed over heads
  std::vector<Matrix<T>> per_head;  // H x (sources x d), filled on request
  Vector<T> bias;                   // b_O

  std::size_t n_sources() const { return vectors.rows(); }
};

// Head-wise affine maps of every source of one attention block, precomputed once
// and reused for each query position.
template <std::floating_point T>
class AffineHeads {
 public:
  // `linear_sources` holds the already-linearized source rows (x_j L_j for
  // self-attention, e_i for cross-attention); `value_offset` is the constant
  // added before W_V (beta for self-attention, zero for cross-attention).
  AffineHeads(const Matrix<T>& linear_sources, std::span<const T> value_offset,
              const Matrix<T>& w_v, const Vector<T>& b_v, const Matrix<T>& w_o,
              const Vector<T>& b_o, std::size_t n_head)
      : n_head_(n_head), d_(w_o.cols()), bias_(b_o) {
    const std::size_t d_in = w_v.rows(), dv = w_v.cols();
    if (linear_sources.cols() != d_in) throw ShapeError("AffineHeads: source width mismatch");
    if (dv % n_head != 0 || w_o.rows() != dv) throw ShapeError("AffineHeads: head split mismatch");
    const std::size_t dh = dv / n_head;
    n_src_ = linear_sources.rows();
    projected_ = Matrix<T>(n_src_ * n_head, d_);
    theta_ = Matrix<T>(n_head, d_);

    auto through_heads = [&](std::span<const T> u, std::size_t h, std::span<T> out) {
      std::vector<double> acc(d_, 0.0);
      for (std::size_t c = 0; c < dh; ++c) {
        const double uc = u[h * dh + c];
        const auto orow = w_o.row(h * dh + c);
        for (std::size_t k = 0; k < d_; ++k) acc[k] += uc * orow[k];
      }
      for (std::size_t k = 0; k < d_; ++k) out[k] = static_cast<T>(acc[k]);
    };

    for (std::size_t j = 0; j < n_src_; ++j) {
      const auto u = vec_mat(linear_sources.row(j), w_v);
      for (std::size_t h = 0; h < n_head; ++h)
        through_heads(std::span<const T>(u), h, projected_.row(j * n_head + h));
    }
    Vector<T> vb(dv);
    if (value_offset.empty()) {
      vb = b_v;
    } else {
      vb = vec_mat(value_offset, w_v);
      for (std::size_t c = 0; c < dv; ++c) vb[c] += b_v[c];
    }
    for (std::size_t h = 0; h < n_head; ++h) through_heads(std::span<const T>(vb), h, theta_.row(h));
  }

  std::size_t n_sources() const { return n_src_; }
  std::size_t n_head() const { return n_head_; }

  // (x_j L_j) W_V^h W_O^h
  std::span<const T> projected(std::size_t source, std::size_t head) const {
    return projected_.row(source * n_head_ + head);
  }
  std::span<const T> theta(std::size_t head) const { return theta_.row(head); }

  // `weights[h]` row `query` supplies A^h_{query, j}; only the first `n_visible` sources are used.
  TransformedVectors<T> for_query(const std::vector<Matrix<T>>& weights, std::size_t query,
                                  std::size_t n_visible, bool per_head) const {
    if (weights.size() != n_head_) throw ShapeError("for_query: expected one weight matrix per head");
    if (n_visible > n_src_) throw ShapeError("for_query: more visible sources than sources");
    for (const auto& w : weights) {
      if (query >= w.rows() || w.cols() != n_src_) {
        throw ShapeError("for_query: attention matrix " + w.shape() + " does not match " +
                         std::to_string(n_src_) + " sources");
      }
    }
    TransformedVectors<T> tv;
    tv.query = query;
    tv.vectors = Matrix<T>(n_visible, d_);
    tv.bias = bias_;
    if (per_head) tv.per_head.assign(n_head_, Matrix<T>(n_visible, d_));
    std::vector<double> sum(d_), head(d_);
    for (std::size_t j = 0; j < n_visible; ++j) {
      std::fill(sum.begin(), sum.end(), 0.0);
      for (std::size_t h = 0; h < n_head_; ++h) {
        const double a = weights[h](query, j);
        const auto p = projected(j, h);
        const auto th = theta(h);
        for (std::size_t k = 0; k < d_; ++k) {
          head[k] = a * p[k] + a * th[k];
          sum[k] += head[k];
        }
        if (per_head) {
          auto dst = tv.per_head[h].row(j);
          for (std::size_t k = 0; k < d_; ++k) dst[k] = static_cast<T>(head[k]);
        }
      }
      auto dst = tv.vectors.row(j);
      for (std::size_t k = 0; k < d_; ++k) dst[k] = static_cast<T>(sum[k]);
    }
    return tv;
  }

 private:
  std::size_t n_head_ = 0, d_ = 0, n_src_ = 0;
  Matrix<T> projected_;  // (source, head) rows
  Matrix<T> theta_;
  Vector<T> bias_;
};

// Self-attention decomposition of one traced layer.
template <std::floating_point T>
class LayerDecomposer {
 public:
  LayerDecomposer(const ModelBundle<T>& bundle, const ForwardTrace<T>& trace, std::size_t layer)
      : layer_(layer), trace_(&trace), heads_(build(bundle, trace, layer)) {}

  TransformedVectors<T> at(std::size_t query, bool per_head = false) const {
    if (query >= trace_->length()) {
      throw RangeError("query position " + std::to_string(query) + " out of range");
    }
    auto tv = heads_.for_query(trace_->layers[layer_].attention, query, query + 1, per_head);
    tv.layer = layer_;
    return tv;
  }

  const AffineHeads<T>& heads() const { return heads_; }
  std::size_t layer() const { return layer_; }

 private:
  static AffineHeads<T> build(const ModelBundle<T>& bundle, const ForwardTrace<T>& trace,
                              std::size_t layer) {
    if (layer >= trace.n_layers()) {
      throw RangeError("layer " + std::to_string(layer) + " not covered by the trace");
    }
    const auto& w = bundle.layers[layer];
    const auto& lt = trace.layers[layer];
    const std::size_t t = trace.length(), d = bundle.config.d_model;
    Matrix<T> lin(t, d);
    for (std::size_t j = 0; j < t; ++j) {
      const LnAffine<T> ln{w.ln1_gamma, w.ln1_beta, lt.ln1[j].std};
      const auto y = ln.apply_linear(lt.input.row(j));
      std::copy(y.begin(), y.end(), lin.row(j).begin());
    }
    return AffineHeads<T>(lin, std::span<const T>(w.ln1_beta), w.w_v, w.b_v, w.w_o, w.b_o,
                          bundle.config.n_head);
  }

  std::size_t layer_;
  const ForwardTrace<T>* trace_;
  AffineHeads<T> heads_;
};

template <std::floating_point T>
TransformedVectors<T> transformed_vectors(const ModelBundle<T>& bundle, const ForwardTrace<T>& trace,
                                          std::size_t layer, std::size_t query,
                                          bool per_head = false) {
  return LayerDecomposer<T>(bundle, trace, layer).at(query, per_head);
}

// One source's image under the layer's affine map, for given per-head weights
// A^h_{t,j} and a frozen layer norm. Used to probe linearity directly.
template <std::floating_point T>
Vector<T> transform_source(const LayerWeights<T>& w, std::size_t n_head, const LnAffine<T>& ln,
                           std::span<const T> head_weights, std::span<const T> x) {
  if (head_weights.size() != n_head) throw ShapeError("transform_source: one weight per head");
  Matrix<T> src(1, x.size());
  const auto y = ln.apply_linear(x);
  std::copy(y.begin(), y.end(), src.row(0).begin());
  AffineHeads<T> heads(src, std::span<const T>(ln.beta), w.w_v, w.b_v, w.w_o, w.b_o, n_head);
  std::vector<Matrix<T>> a(n_head, Matrix<T>(1, 1));
  for (std::size_t h = 0; h < n_head; ++h) a[h](0, 0) = head_weights[h];
  const auto tv = heads.for_query(a, 0, 1, false);
  const auto r = tv.vectors.row(0);
  return Vector<T>(r.begin(), r.end());
}

// Encoder-decoder cross-attention. Queries come from the decoder residual
// through `ln`; keys and values read encoder states directly.
template <std::floating_point T>
struct CrossAttentionWeights {
  Vector<T> ln_gamma, ln_beta;
  Matrix<T> w_q, w_k, w_v, w_o;
  Vector<T> b_q, b_k, b_v, b_o;
};

template <std::floating_point T>
AttentionCapture<T> cross_attention_block(const CrossAttentionWeights<T>& p, double eps,
                                          std::size_t n_head, const Matrix<T>& queries,
                                          const Matrix<T>& encoder_states) {
  if (encoder_states.rows() == 0) throw ShapeError("cross attention: no encoder states");
  return attention_block(p.w_q, p.b_q, p.w_k, p.b_k, p.w_v, p.b_v, p.w_o, p.b_o, p.ln_gamma,
                         p.ln_beta, eps, n_head, queries, &encoder_states, false);
}

// T^c_{t,i}(e_i) = sum_h A^h_{t,i} (e_i W_V^h + b_V^h) W_O^h for every encoder position i.
template <std::floating_point T>
TransformedVectors<T> cross_transformed_vectors(const CrossAttentionWeights<T>& p,
                                                std::size_t n_head,
                                                const Matrix<T>& encoder_states,
                                                const std::vector<Matrix<T>>& attention,
                                                std::size_t query, bool per_head = false) {
  if (encoder_states.rows() == 0) throw ShapeError("cross_transformed_vectors: no encoder states");
  for (const auto& a : attention) {
    if (a.cols() != encoder_states.rows()) {
      throw ShapeError("cross_transformed_vectors: attention rows of length " +
                       std::to_string(a.cols()) + " for " + std::to_string(encoder_states.rows()) +
                       " encoder states");
    }
  }
  AffineHeads<T> heads(encoder_states, std::span<const T>(), p.w_v, p.b_v, p.w_o, p.b_o, n_head);
  return heads.for_query(attention, query, encoder_states.rows(), per_head);
}

// Same, computing the attention weights from a single decoder query state.
template <std::floating_point T>
TransformedVectors<T> cross_transformed_vectors(const CrossAttentionWeights<T>& p, double eps,
                                                std::size_t n_head,
                                                const Matrix<T>& encoder_states,
                                                std::span<const T> query_state,
                                                bool per_head = false) {
  Matrix<T> q(1, query_state.size());
  std::copy(query_state.begin(), query_state.end(), q.row(0).begin());
  const auto cap = cross_attention_block(p, eps, n_head, q, encoder_states);
  return cross_transformed_vectors(p, n_head, encoder_states, cap.weights, 0, per_head);
}

}  // namespace lattr
