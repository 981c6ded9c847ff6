#pragma once

// Randomly initialized models for tests, demos and surrogate runs.

#include <cstdint>
#include <random>

#include "lattr/model.hpp"
#include "lattr/tensor.hpp"

namespace lattr {

struct RandomInit {
  std::uint64_t seed = 0;
  double weight_std = 0.2;
  double embed_std = 1.0;
  double bias_std = 0.05;
  double ln_jitter = 0.1;  // gamma ~ 1 + N(0, jitter), beta ~ N(0, jitter)
};

namespace detail {

template <std::floating_point T>
class Filler {
 public:
  explicit Filler(std::uint64_t seed) : rng_(seed) {}

  Matrix<T> matrix(std::size_t r, std::size_t c, double sd) {
    Matrix<T> m(r, c);
    for (auto& v : m.data()) v = draw(sd);
    return m;
  }
  Vector<T> vector(std::size_t n, double sd, double mean = 0.0) {
    Vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(mean + draw(sd));
    return v;
  }

 private:
  T draw(double sd) { return static_cast<T>(sd * normal_(rng_)); }

  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

template <std::floating_point T>
LayerWeights<T> random_layer(Filler<T>& f, std::size_t d, std::size_t F, const RandomInit& init) {
  LayerWeights<T> w;
  w.ln1_gamma = f.vector(d, init.ln_jitter, 1.0);
  w.ln1_beta = f.vector(d, init.ln_jitter);
  w.w_q = f.matrix(d, d, init.weight_std);
  w.w_k = f.matrix(d, d, init.weight_std);
  w.w_v = f.matrix(d, d, init.weight_std);
  w.w_o = f.matrix(d, d, init.weight_std);
  w.b_q = f.vector(d, init.bias_std);
  w.b_k = f.vector(d, init.bias_std);
  w.b_v = f.vector(d, init.bias_std);
  w.b_o = f.vector(d, init.bias_std);
  w.ln2_gamma = f.vector(d, init.ln_jitter, 1.0);
  w.ln2_beta = f.vector(d, init.ln_jitter);
  w.w_1 = f.matrix(d, F, init.weight_std);
  w.b_1 = f.vector(F, init.bias_std);
  w.w_2 = f.matrix(F, d, init.weight_std);
  w.b_2 = f.vector(d, init.bias_std);
  return w;
}

}  // namespace detail

template <std::floating_point T>
ModelBundle<T> random_bundle(const ModelConfig& config, const RandomInit& init = {},
                             bool untied_head = false) {
  config.validate();
  detail::Filler<T> f(init.seed);
  const std::size_t d = config.d_model;
  ModelBundle<T> b;
  b.config = config;
  b.token_embedding = f.matrix(config.vocab_size, d, init.embed_std);
  b.position_embedding = f.matrix(config.n_positions, d, init.embed_std * 0.5);
  for (std::size_t l = 0; l < config.n_layer; ++l)
    b.layers.push_back(detail::random_layer(f, d, config.d_mlp, init));
  b.lnf_gamma = f.vector(d, init.ln_jitter, 1.0);
  b.lnf_beta = f.vector(d, init.ln_jitter);
  if (untied_head) b.lm_head = f.matrix(config.vocab_size, d, init.embed_std);
  return b;
}

inline ModelConfig small_config(std::size_t vocab = 64) {
  ModelConfig c;
  c.n_layer = 3;
  c.n_head = 2;
  c.d_model = 16;
  c.d_mlp = 64;
  c.vocab_size = vocab;
  c.n_positions = 32;
  return c;
}

}  // namespace lattr
