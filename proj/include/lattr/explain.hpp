#pragma once

// Logit attributions for the prediction at one position.
//
// Every residual-stream component c reaches the logit of w through the final
// layer norm frozen at the realized sigma of x^L_t:
//   logit_w(c) = c . rho_w,   rho_w = g - mean(g),   g = gamma_f * U_w / sigma
// plus the constant beta_f . U_w. Sums of components therefore reconstruct the
// model's logit exactly (up to rounding).

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lattr/alti.hpp"
#include "lattr/decomposition.hpp"
#include "lattr/error.hpp"
#include "lattr/model.hpp"
#include "lattr/tensor.hpp"
#include "lattr/trace.hpp"

namespace lattr {

enum class Method { logit, alti_logit, erasure };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::logit: return "logit";
    case Method::alti_logit: return "alti-logit";
    case Method::erasure: return "erasure";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "logit") return Method::logit;
  if (s == "alti-logit") return Method::alti_logit;
  if (s == "erasure") return Method::erasure;
  throw Error("unknown method '" + s + "'");
}

// How component updates pass the final layer norm: frozen at the realized sigma,
// or skipped entirely (raw dot product with U_w).
enum class FinalLnMode { linearized, ignore };

// Erasure measures the change in probability by default; `logit` is the ablation.
enum class ErasureMeasure { probability, logit };

struct Readout {
  std::vector<double> direction;
  double offset = 0.0;

  double project(auto component) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < direction.size(); ++k) acc += component[k] * direction[k];
    return acc;
  }

  Readout operator-(const Readout& o) const {
    Readout r{direction, offset - o.offset};
    for (std::size_t k = 0; k < r.direction.size(); ++k) r.direction[k] -= o.direction[k];
    return r;
  }
};

template <std::floating_point T>
class AttributionContext {
 public:
  AttributionContext(const ModelBundle<T>& bundle, const ForwardTrace<T>& trace,
                     std::optional<std::size_t> position = std::nullopt,
                     FinalLnMode mode = FinalLnMode::linearized, bool per_head = false)
      : bundle_(&bundle), trace_(&trace), mode_(mode) {
    position_ = position.value_or(trace.length() - 1);
    if (position_ >= trace.length()) throw RangeError("query position out of range");
    sigma_ = trace.lnf[position_].std;
    for (std::size_t l = 0; l < trace.n_layers(); ++l) {
      decomposers_.emplace_back(bundle, trace, l);
      vectors_.push_back(decomposers_.back().at(position_, per_head));
    }
  }

  const ModelBundle<T>& bundle() const { return *bundle_; }
  const ForwardTrace<T>& trace() const { return *trace_; }
  std::size_t position() const { return position_; }
  std::size_t n_sources() const { return position_ + 1; }
  FinalLnMode mode() const { return mode_; }
  const std::vector<LayerDecomposer<T>>& decomposers() const { return decomposers_; }
  const TransformedVectors<T>& vectors(std::size_t layer) const { return vectors_.at(layer); }

  Readout readout(TokenId w) const {
    const auto u = bundle_->unembedding_column(w);
    const std::size_t d = u.size();
    Readout r;
    r.direction.resize(d);
    if (mode_ == FinalLnMode::ignore) {
      for (std::size_t k = 0; k < d; ++k) r.direction[k] = u[k];
      return r;
    }
    double mean = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      r.direction[k] = static_cast<double>(bundle_->lnf_gamma[k]) * u[k] / sigma_;
      mean += r.direction[k];
    }
    mean /= static_cast<double>(d);
    for (double& v : r.direction) v -= mean;
    r.offset = dot(std::span<const T>(bundle_->lnf_beta), u);
    return r;
  }

  Readout readout(TokenId w, std::optional<TokenId> foil) const {
    return foil ? readout(w) - readout(*foil) : readout(w);
  }

  MixMatrices mix(MixEstimator estimator = MixEstimator::alti) const {
    MixMatrices m;
    for (const auto& dec : decomposers_) m.coefficients.push_back(layer_coefficients(dec, *trace_, estimator));
    m.rollout = rollout(m.coefficients);
    return m;
  }

 private:
  const ModelBundle<T>* bundle_;
  const ForwardTrace<T>* trace_;
  std::size_t position_ = 0;
  FinalLnMode mode_;
  T sigma_{};
  std::vector<LayerDecomposer<T>> decomposers_;
  std::vector<TransformedVectors<T>> vectors_;
};

struct LayerLogitUpdate {
  std::vector<double> per_source;
  double bias = 0.0;  // b_O

  double total() const {
    double s = bias;
    for (double v : per_source) s += v;
    return s;
  }
};

template <std::floating_point T>
LayerLogitUpdate layer_logit_update(const TransformedVectors<T>& tv, const Readout& r) {
  if (tv.vectors.cols() != r.direction.size()) throw ShapeError("layer_logit_update: width mismatch");
  LayerLogitUpdate u;
  for (std::size_t j = 0; j < tv.n_sources(); ++j) u.per_source.push_back(r.project(tv.vectors.row(j)));
  u.bias = r.project(std::span<const T>(tv.bias));
  return u;
}

// H x sources.
template <std::floating_point T>
Matrix<double> head_logit_update(const TransformedVectors<T>& tv, const Readout& r) {
  if (tv.per_head.empty()) throw Error("head_logit_update: transformed vectors lack per-head parts");
  Matrix<double> out(tv.per_head.size(), tv.n_sources());
  for (std::size_t h = 0; h < tv.per_head.size(); ++h)
    for (std::size_t j = 0; j < tv.n_sources(); ++j) out(h, j) = r.project(tv.per_head[h].row(j));
  return out;
}

struct Explanation {
  Method method = Method::logit;
  TokenId target = 0;
  std::optional<TokenId> foil;
  std::vector<std::string> tokens;
  std::vector<double> scores;   // one per input token
  Matrix<double> per_layer;     // L x tokens, empty for erasure
  std::vector<double> attn_bias;  // per layer, b_O
  std::vector<double> mlp;        // per layer, full MLP output incl. b_2
  double embedding = 0.0;         // x^0 at the query position
  double final_ln_bias = 0.0;     // beta_f . U

  std::size_t n_layers() const { return per_layer.rows(); }

  // Sum of every attributed part; equals the (contrastive) logit for logit-based methods.
  double total() const {
    double s = embedding + final_ln_bias;
    for (double v : scores) s += v;
    for (double v : attn_bias) s += v;
    for (double v : mlp) s += v;
    return s;
  }

  // Self-attention update of layer l (token shares plus b_O).
  double attention_update(std::size_t l) const {
    double s = attn_bias.at(l);
    for (std::size_t j = 0; j < per_layer.cols(); ++j) s += per_layer(l, j);
    return s;
  }
};

// Spreads per-stream updates over model inputs: out_s = sum_j update_j * M[j][s].
// Only the first update.size() rows and columns of M take part.
inline std::vector<double> redistribute(std::span<const double> update, const Matrix<double>& m) {
  const std::size_t n = update.size();
  if (m.rows() < n || m.cols() < n) throw ShapeError("redistribute: mixing matrix " + m.shape() + " too small");
  std::vector<double> out(n, 0.0);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t j = 0; j < n; ++j) out[s] += update[j] * m(j, s);
  return out;
}

namespace detail {

template <std::floating_point T>
Explanation explain_with(const AttributionContext<T>& ctx, const MixMatrices* mix, TokenId w,
                         std::optional<TokenId> foil) {
  const auto& tr = ctx.trace();
  const std::size_t L = tr.n_layers(), n = ctx.n_sources(), pos = ctx.position();
  const Readout r = ctx.readout(w, foil);
  Explanation e;
  e.method = mix ? Method::alti_logit : Method::logit;
  e.target = w;
  e.foil = foil;
  e.per_layer = Matrix<double>(L, n);
  e.scores.assign(n, 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    const auto upd = layer_logit_update(ctx.vectors(l), r);
    if (mix) {
      const auto shares = redistribute(upd.per_source, mix->rollout[l]);  // M^{l-1}
      for (std::size_t s = 0; s < n; ++s) e.per_layer(l, s) = shares[s];
    } else {
      for (std::size_t s = 0; s < n; ++s) e.per_layer(l, s) = upd.per_source[s];
    }
    e.attn_bias.push_back(upd.bias);
    e.mlp.push_back(r.project(tr.layers[l].mlp_out.row(pos)));
  }
  for (std::size_t s = 0; s < n; ++s) {
    double acc = 0.0;
    for (std::size_t l = 0; l < L; ++l) acc += e.per_layer(l, s);
    e.scores[s] = acc;
  }
  e.embedding = r.project(tr.embeddings.row(pos));
  e.final_ln_bias = r.offset;
  return e;
}

}  // namespace detail

// Each input token's summed per-layer updates, assuming streams keep their identity.
template <std::floating_point T>
Explanation logit_explanation(const AttributionContext<T>& ctx, TokenId w,
                              std::optional<TokenId> foil = std::nullopt) {
  return detail::explain_with<T>(ctx, nullptr, w, foil);
}

// Per-layer updates redistributed to the model inputs through M^{l-1}.
template <std::floating_point T>
Explanation alti_logit_explanation(const AttributionContext<T>& ctx, const MixMatrices& mix,
                                   TokenId w, std::optional<TokenId> foil = std::nullopt) {
  const std::size_t t = ctx.trace().length();
  if (mix.coefficients.size() != ctx.trace().n_layers() || mix.rollout.size() != mix.coefficients.size() + 1) {
    throw ShapeError("alti_logit_explanation: mixing matrices cover " +
                     std::to_string(mix.coefficients.size()) + " layers, trace has " +
                     std::to_string(ctx.trace().n_layers()));
  }
  for (const auto& m : mix.rollout) {
    if (m.rows() != t || m.cols() != t) {
      throw ShapeError("alti_logit_explanation: mixing matrix " + m.shape() +
                       " does not match trace length " + std::to_string(t));
    }
  }
  return detail::explain_with<T>(ctx, &mix, w, foil);
}

// Target minus foil, element-wise over every attributed part.
inline Explanation contrastive(const Explanation& ew, const Explanation& ef) {
  if (ew.method != ef.method || ew.scores.size() != ef.scores.size() ||
      ew.per_layer.rows() != ef.per_layer.rows() || ew.per_layer.cols() != ef.per_layer.cols()) {
    throw ShapeError("contrastive: explanations come from different methods or traces");
  }
  Explanation e = ew;
  e.foil = ef.target;
  for (std::size_t i = 0; i < e.scores.size(); ++i) e.scores[i] = ew.scores[i] - ef.scores[i];
  for (std::size_t i = 0; i < e.per_layer.data().size(); ++i)
    e.per_layer.data()[i] = ew.per_layer.data()[i] - ef.per_layer.data()[i];
  for (std::size_t l = 0; l < e.attn_bias.size(); ++l) {
    e.attn_bias[l] = ew.attn_bias[l] - ef.attn_bias[l];
    e.mlp[l] = ew.mlp[l] - ef.mlp[l];
  }
  e.embedding = ew.embedding - ef.embedding;
  e.final_ln_bias = ew.final_ln_bias - ef.final_ln_bias;
  return e;
}

struct MlpSubUpdates {
  std::size_t layer = 0;
  TokenId target = 0;
  std::optional<TokenId> foil;
  std::vector<double> updates;  // k_i * (v_i . rho), one per MLP dimension
  double bias = 0.0;            // b_2 . rho

  double total() const {
    double s = bias;
    for (double v : updates) s += v;
    return s;
  }
};

// Key-value view of the MLP at the context's query position.
template <std::floating_point T>
MlpSubUpdates mlp_value_updates(const AttributionContext<T>& ctx, std::size_t layer, TokenId w,
                                std::optional<TokenId> foil = std::nullopt) {
  if (layer >= ctx.trace().n_layers()) throw RangeError("mlp_value_updates: layer out of range");
  const auto& weights = ctx.bundle().layers[layer];
  const auto keys = ctx.trace().layers[layer].mlp_keys.row(ctx.position());
  const Readout r = ctx.readout(w, foil);
  MlpSubUpdates out;
  out.layer = layer;
  out.target = w;
  out.foil = foil;
  out.updates.resize(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i)
    out.updates[i] = static_cast<double>(keys[i]) * r.project(weights.w_2.row(i));
  out.bias = r.project(std::span<const T>(weights.b_2));
  return out;
}

// Contrastive input erasure: delete token s, re-run, and compare
//   (m_w(x) - m_w(x\s)) - (m_f(x) - m_f(x\s)).
template <std::floating_point T>
Explanation contrastive_erasure(const ModelBundle<T>& bundle, std::span<const TokenId> ids,
                                TokenId w, std::optional<TokenId> foil,
                                ErasureMeasure measure = ErasureMeasure::probability) {
  if (ids.size() < 2) throw RangeError("contrastive_erasure: need at least two tokens to erase one");
  auto score = [&](const PredictionHead<T>& h, TokenId id) {
    return measure == ErasureMeasure::probability ? next_token_prob(h, id) : next_token_logit(h, id);
  };
  const auto base = run_forward(bundle, ids).head;
  Explanation e;
  e.method = Method::erasure;
  e.target = w;
  e.foil = foil;
  e.per_layer = Matrix<double>(0, ids.size());
  for (std::size_t s = 0; s < ids.size(); ++s) {
    std::vector<TokenId> reduced;
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (i != s) reduced.push_back(ids[i]);
    const auto h = run_forward(bundle, reduced).head;
    double v = score(base, w) - score(h, w);
    if (foil) v -= score(base, *foil) - score(h, *foil);
    e.scores.push_back(v);
  }
  return e;
}

}  // namespace lattr
