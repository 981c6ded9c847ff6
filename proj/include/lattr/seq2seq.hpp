#pragma once

// Small Pre-LN encoder-decoder used to exercise cross-attention attribution.
// Decoder block order per layer:
//   x -> ln1 -> self-attention -> +x -> cross ln -> cross-attention -> +x -> ln2 -> MLP -> +x
// The unembedding is tied to the target embedding.

#include <algorithm>
#include <cstdint>
#include <random>
#include <set>
#include <vector>

#include "lattr/decomposition.hpp"
#include "lattr/error.hpp"
#include "lattr/explain.hpp"
#include "lattr/metrics.hpp"
#include "lattr/synthetic.hpp"
#include "lattr/trace.hpp"

namespace lattr {

struct Seq2SeqConfig {
  std::size_t n_enc_layer = 2;
  std::size_t n_dec_layer = 2;
  std::size_t n_head = 2;
  std::size_t d_model = 32;
  std::size_t d_mlp = 64;
  std::size_t src_vocab = 8;
  std::size_t tgt_vocab = 9;
  std::size_t n_positions = 8;
  double ln_eps = 1e-5;
  TokenId bos = 0;  // decoder start token

  void validate() const {
    if (n_enc_layer < 1 || n_dec_layer < 1 || n_head < 1 || d_model < 1 || d_mlp < 1 ||
        src_vocab < 1 || tgt_vocab < 1 || n_positions < 1) {
      throw ModelError("seq2seq config: all counts must be >= 1");
    }
    if (d_model % n_head != 0) throw ModelError("seq2seq config: d_model not divisible by n_head");
    if (bos < 0 || static_cast<std::size_t>(bos) >= tgt_vocab) throw ModelError("seq2seq config: bad bos id");
  }
};

template <std::floating_point T>
struct DecoderLayerWeights {
  LayerWeights<T> self;  // ln1, self-attention, ln2, MLP
  CrossAttentionWeights<T> cross;
};

template <std::floating_point T>
struct Seq2SeqModel {
  Seq2SeqConfig config;
  Matrix<T> src_embedding;       // src_vocab x d
  Matrix<T> tgt_embedding;       // tgt_vocab x d, also the unembedding
  Matrix<T> position_embedding;  // shared by both sides
  std::vector<LayerWeights<T>> encoder;
  Vector<T> enc_ln_gamma, enc_ln_beta;
  std::vector<DecoderLayerWeights<T>> decoder;
  Vector<T> dec_ln_gamma, dec_ln_beta;
};

template <std::floating_point T>
struct DecoderLayerTrace {
  Matrix<T> input;
  AttentionCapture<T> self;
  Matrix<T> after_self;
  AttentionCapture<T> cross;  // weights are (t x I) per head
  Matrix<T> after_cross;
  MlpCapture<T> mlp;
  Matrix<T> output;
};

template <std::floating_point T>
struct Seq2SeqTrace {
  std::vector<TokenId> src;
  std::vector<TokenId> tgt_in;
  Matrix<T> encoder_states;  // after the encoder's final LN
  Matrix<T> dec_embeddings;
  std::vector<DecoderLayerTrace<T>> layers;
  std::vector<LayerNormStats<T>> lnf;
  Matrix<T> final_hidden;

  std::size_t length() const { return tgt_in.size(); }
};

namespace detail {

template <std::floating_point T>
Matrix<T> embed(const Matrix<T>& table, const Matrix<T>& positions, std::span<const TokenId> ids,
                const char* side) {
  if (ids.empty()) throw RangeError(std::string("seq2seq: empty ") + side + " sequence");
  if (ids.size() > positions.rows()) throw RangeError(std::string("seq2seq: ") + side + " sequence too long");
  Matrix<T> x(ids.size(), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows()) {
      throw RangeError(std::string("seq2seq: ") + side + " token id " + std::to_string(ids[i]) +
                       " outside vocabulary");
    }
    const auto te = table.row(static_cast<std::size_t>(ids[i]));
    const auto pe = positions.row(i);
    for (std::size_t c = 0; c < x.cols(); ++c) x(i, c) = te[c] + pe[c];
  }
  return x;
}

template <std::floating_point T>
Matrix<T> plus(const Matrix<T>& a, const Matrix<T>& b) {
  Matrix<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

template <std::floating_point T>
Matrix<T> ln_rows(const Matrix<T>& x, const Vector<T>& gamma, const Vector<T>& beta, double eps,
                  std::vector<LayerNormStats<T>>* stats = nullptr) {
  Matrix<T> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto s = layer_norm_stats(x.row(i), eps);
    if (stats) stats->push_back(s);
    const auto y = layer_norm(x.row(i), std::span<const T>(gamma), std::span<const T>(beta), s);
    std::copy(y.begin(), y.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace detail

template <std::floating_point T>
Matrix<T> encode(const Seq2SeqModel<T>& m, std::span<const TokenId> src) {
  const auto& c = m.config;
  Matrix<T> x = detail::embed(m.src_embedding, m.position_embedding, src, "source");
  for (const auto& w : m.encoder) {
    const auto att = self_attention_block(w, c.ln_eps, c.n_head, x, false);
    const Matrix<T> mid = detail::plus(x, att.output);
    x = detail::plus(mid, mlp_block(w, c.ln_eps, mid).output);
  }
  return detail::ln_rows(x, m.enc_ln_gamma, m.enc_ln_beta, c.ln_eps);
}

// Teacher-forced decoder pass over `tgt_in` (normally bos followed by all but the last target token).
template <std::floating_point T>
Seq2SeqTrace<T> run_seq2seq(const Seq2SeqModel<T>& m, std::span<const TokenId> src,
                            std::span<const TokenId> tgt_in) {
  const auto& c = m.config;
  Seq2SeqTrace<T> tr;
  tr.src.assign(src.begin(), src.end());
  tr.tgt_in.assign(tgt_in.begin(), tgt_in.end());
  tr.encoder_states = encode(m, src);
  tr.dec_embeddings = detail::embed(m.tgt_embedding, m.position_embedding, tgt_in, "target");
  const Matrix<T>* x = &tr.dec_embeddings;
  for (const auto& w : m.decoder) {
    DecoderLayerTrace<T> lt;
    lt.input = *x;
    lt.self = self_attention_block(w.self, c.ln_eps, c.n_head, lt.input, true);
    lt.after_self = detail::plus(lt.input, lt.self.output);
    lt.cross = cross_attention_block(w.cross, c.ln_eps, c.n_head, lt.after_self, tr.encoder_states);
    lt.after_cross = detail::plus(lt.after_self, lt.cross.output);
    lt.mlp = mlp_block(w.self, c.ln_eps, lt.after_cross);
    lt.output = detail::plus(lt.after_cross, lt.mlp.output);
    tr.layers.push_back(std::move(lt));
    x = &tr.layers.back().output;
  }
  tr.final_hidden = detail::ln_rows(*x, m.dec_ln_gamma, m.dec_ln_beta, c.ln_eps, &tr.lnf);
  return tr;
}

template <std::floating_point T>
TransformedVectors<T> cross_vectors(const Seq2SeqModel<T>& m, const Seq2SeqTrace<T>& tr,
                                    std::size_t layer, std::size_t query, bool per_head = false) {
  if (layer >= tr.layers.size()) throw RangeError("cross_vectors: layer out of range");
  if (query >= tr.length()) throw RangeError("cross_vectors: query out of range");
  auto tv = cross_transformed_vectors(m.decoder[layer].cross, m.config.n_head, tr.encoder_states,
                                      tr.layers[layer].cross.weights, query, per_head);
  tv.layer = layer;
  return tv;
}

// Delta-logit of target token w at decoder position t from each encoder state,
// read through the decoder's final LN frozen at position t.
template <std::floating_point T>
std::vector<double> cross_logit_updates(const Seq2SeqModel<T>& m, const Seq2SeqTrace<T>& tr,
                                        std::size_t layer, std::size_t query, TokenId w) {
  if (w < 0 || static_cast<std::size_t>(w) >= m.config.tgt_vocab) throw RangeError("cross_logit_updates: bad token id");
  const auto tv = cross_vectors(m, tr, layer, query);
  const auto u = m.tgt_embedding.row(static_cast<std::size_t>(w));
  const double sigma = tr.lnf[query].std;
  std::vector<double> rho(u.size());
  double mean = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    rho[k] = static_cast<double>(m.dec_ln_gamma[k]) * u[k] / sigma;
    mean += rho[k];
  }
  mean /= static_cast<double>(u.size());
  for (double& r : rho) r -= mean;
  const Readout rd{rho, 0.0};
  std::vector<double> out;
  for (std::size_t i = 0; i < tv.n_sources(); ++i) out.push_back(rd.project(tv.vectors.row(i)));
  return out;
}

// One (source, target) link per target token: the encoder position with the
// largest update to that token's logit at `layer`. Ties go to the lower index.
template <std::floating_point T>
std::set<Link> extract_alignment(const Seq2SeqModel<T>& m, std::span<const TokenId> src,
                                 std::span<const TokenId> tgt, std::size_t layer) {
  std::vector<TokenId> tgt_in{m.config.bos};
  tgt_in.insert(tgt_in.end(), tgt.begin(), tgt.end());
  tgt_in.pop_back();
  const auto tr = run_seq2seq(m, src, std::span<const TokenId>(tgt_in));
  std::set<Link> links;
  for (std::size_t t = 0; t < tgt.size(); ++t) {
    const auto upd = cross_logit_updates(m, tr, layer, t, tgt[t]);
    const auto best = std::max_element(upd.begin(), upd.end()) - upd.begin();
    links.emplace(static_cast<int>(best), static_cast<int>(t));
  }
  return links;
}

template <std::floating_point T>
Seq2SeqModel<T> random_seq2seq(const Seq2SeqConfig& c, const RandomInit& init = {}) {
  c.validate();
  detail::Filler<T> f(init.seed);
  const std::size_t d = c.d_model;
  Seq2SeqModel<T> m;
  m.config = c;
  m.src_embedding = f.matrix(c.src_vocab, d, init.embed_std);
  m.tgt_embedding = f.matrix(c.tgt_vocab, d, init.embed_std);
  m.position_embedding = f.matrix(c.n_positions, d, init.embed_std * 0.5);
  for (std::size_t l = 0; l < c.n_enc_layer; ++l) m.encoder.push_back(detail::random_layer(f, d, c.d_mlp, init));
  m.enc_ln_gamma = f.vector(d, init.ln_jitter, 1.0);
  m.enc_ln_beta = f.vector(d, init.ln_jitter);
  for (std::size_t l = 0; l < c.n_dec_layer; ++l) {
    DecoderLayerWeights<T> w;
    w.self = detail::random_layer(f, d, c.d_mlp, init);
    w.cross.ln_gamma = f.vector(d, init.ln_jitter, 1.0);
    w.cross.ln_beta = f.vector(d, init.ln_jitter);
    w.cross.w_q = f.matrix(d, d, init.weight_std);
    w.cross.w_k = f.matrix(d, d, init.weight_std);
    w.cross.w_v = f.matrix(d, d, init.weight_std);
    w.cross.w_o = f.matrix(d, d, init.weight_std);
    w.cross.b_q = f.vector(d, init.bias_std);
    w.cross.b_k = f.vector(d, init.bias_std);
    w.cross.b_v = f.vector(d, init.bias_std);
    w.cross.b_o = f.vector(d, init.bias_std);
    m.decoder.push_back(std::move(w));
  }
  m.dec_ln_gamma = f.vector(d, init.ln_jitter, 1.0);
  m.dec_ln_beta = f.vector(d, init.ln_jitter);
  return m;
}

// Word-for-word "translation" target of source token k.
inline TokenId diagonal_translation(TokenId k) { return 1 + static_cast<TokenId>((3 * k + 2) % 8); }

// Hand-wired model whose cross-attention copies source position t into decoder
// position t and emits diagonal_translation of the token there. Gold alignment
// of any pair is therefore the diagonal. Everything else is small noise.
template <std::floating_point T>
Seq2SeqModel<T> diagonal_seq2seq(std::uint64_t seed = 7) {
  Seq2SeqConfig c;  // 8 source tokens, target 0 = bos, 8 positions, d = 32
  RandomInit noise{seed, 0.02, 0.02, 0.01, 0.0};
  auto m = random_seq2seq<T>(c, noise);
  constexpr std::size_t src_dim = 9, pos_dim = 17;
  const double gain = 4.0, sharp = 3.0;
  for (std::size_t w = 0; w < c.tgt_vocab; ++w) m.tgt_embedding(w, w) += T{1};
  for (std::size_t k = 0; k < c.src_vocab; ++k) m.src_embedding(k, src_dim + k) += T{1};
  for (std::size_t p = 0; p < c.n_positions; ++p) m.position_embedding(p, pos_dim + p) += T{1};
  for (auto& w : m.decoder) {
    // Head 0 occupies columns [0, 16): positions drive queries/keys, source tokens drive values.
    for (std::size_t p = 0; p < c.n_positions; ++p) {
      w.cross.w_q(pos_dim + p, p) += static_cast<T>(sharp);
      w.cross.w_k(pos_dim + p, p) += static_cast<T>(sharp);
    }
    for (std::size_t k = 0; k < c.src_vocab; ++k) {
      w.cross.w_v(src_dim + k, k) += T{1};
      const auto out = static_cast<std::size_t>(diagonal_translation(static_cast<TokenId>(k)));
      w.cross.w_o(k, out) += static_cast<T>(gain);
    }
  }
  return m;
}

}  // namespace lattr
