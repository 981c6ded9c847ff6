#pragma once

// Independent reference computations for the tests. Deliberately naive: plain
// loops, dense per-head matrices, no shared kernels with the library.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lattr/model.hpp"
#include "lattr/synthetic.hpp"

#ifndef LATTR_FIXTURE_DIR
#error "LATTR_FIXTURE_DIR must point at tests/fixtures"
#endif

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline std::filesystem::path fixture(const std::string& rel) {
  return std::filesystem::path(LATTR_FIXTURE_DIR) / rel;
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, std::vector<double>(c, 0.0)); }

template <typename M>
Mat to_mat(const M& m) {
  Mat out = zeros(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

inline Mat mul(const Mat& a, const Mat& b) {
  Mat c = zeros(a.size(), b[0].size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline std::vector<double> vmul(const std::vector<double>& x, const Mat& w) {
  std::vector<double> y(w[0].size(), 0.0);
  for (std::size_t k = 0; k < x.size(); ++k)
    for (std::size_t j = 0; j < y.size(); ++j) y[j] += x[k] * w[k][j];
  return y;
}

inline double ln_sigma(const std::vector<double>& x, double eps) {
  double mean = 0.0, var = 0.0;
  for (double v : x) mean += v;
  mean /= x.size();
  for (double v : x) var += (v - mean) * (v - mean);
  return std::sqrt(var / x.size() + eps);
}

template <typename V>
std::vector<double> ln(const std::vector<double>& x, const V& g, const V& b, double eps) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= x.size();
  const double s = ln_sigma(x, eps);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean) / s * g[i] + b[i];
  return y;
}

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

struct LayerRef {
  Mat input;                    // t x d
  std::vector<Mat> attention;   // H x (t x t)
  Mat attn_out;                 // t x d, incl. b_O
  Mat output;
  std::vector<double> ln1_sigma;
};

struct ForwardRef {
  Mat embeddings;
  std::vector<LayerRef> layers;
  std::vector<double> last_logits;
  double lnf_sigma_last = 0.0;
};

// Straight-line double forward pass.
template <typename T>
ForwardRef forward(const lattr::ModelBundle<T>& b, const std::vector<lattr::TokenId>& ids) {
  const std::size_t t = ids.size(), d = b.config.d_model, H = b.config.n_head, dh = d / H;
  const double eps = b.config.ln_eps;
  ForwardRef ref;
  Mat x = zeros(t, d);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t c = 0; c < d; ++c)
      x[i][c] = static_cast<double>(b.token_embedding(ids[i], c)) + b.position_embedding(i, c);
  ref.embeddings = x;
  for (const auto& w : b.layers) {
    LayerRef lr;
    lr.input = x;
    const Mat wq = to_mat(w.w_q), wk = to_mat(w.w_k), wv = to_mat(w.w_v), wo = to_mat(w.w_o);
    Mat q(t), k(t), v(t);
    for (std::size_t i = 0; i < t; ++i) {
      lr.ln1_sigma.push_back(ln_sigma(x[i], eps));
      const auto y = ln(x[i], w.ln1_gamma, w.ln1_beta, eps);
      q[i] = vmul(y, wq);
      k[i] = vmul(y, wk);
      v[i] = vmul(y, wv);
      for (std::size_t c = 0; c < d; ++c) {
        q[i][c] += w.b_q[c];
        k[i][c] += w.b_k[c];
        v[i][c] += w.b_v[c];
      }
    }
    Mat z = zeros(t, d);
    for (std::size_t h = 0; h < H; ++h) {
      Mat a = zeros(t, t);
      for (std::size_t i = 0; i < t; ++i) {
        std::vector<double> s(i + 1);
        for (std::size_t j = 0; j <= i; ++j) {
          for (std::size_t c = 0; c < dh; ++c) s[j] += q[i][h * dh + c] * k[j][h * dh + c];
          s[j] /= std::sqrt(static_cast<double>(dh));
        }
        const double mx = *std::max_element(s.begin(), s.end());
        double tot = 0.0;
        for (double& e : s) tot += (e = std::exp(e - mx));
        for (std::size_t j = 0; j <= i; ++j) a[i][j] = s[j] / tot;
        for (std::size_t j = 0; j <= i; ++j)
          for (std::size_t c = 0; c < dh; ++c) z[i][h * dh + c] += a[i][j] * v[j][h * dh + c];
      }
      lr.attention.push_back(a);
    }
    lr.attn_out = zeros(t, d);
    for (std::size_t i = 0; i < t; ++i) {
      lr.attn_out[i] = vmul(z[i], wo);
      for (std::size_t c = 0; c < d; ++c) lr.attn_out[i][c] += w.b_o[c];
    }
    const Mat w1 = to_mat(w.w_1), w2 = to_mat(w.w_2);
    for (std::size_t i = 0; i < t; ++i) {
      std::vector<double> mid(d);
      for (std::size_t c = 0; c < d; ++c) mid[c] = x[i][c] + lr.attn_out[i][c];
      auto hdn = vmul(ln(mid, w.ln2_gamma, w.ln2_beta, eps), w1);
      for (std::size_t c = 0; c < hdn.size(); ++c) hdn[c] = gelu(hdn[c] + w.b_1[c]);
      const auto o = vmul(hdn, w2);
      for (std::size_t c = 0; c < d; ++c) x[i][c] = mid[c] + o[c] + w.b_2[c];
    }
    lr.output = x;
    ref.layers.push_back(std::move(lr));
  }
  ref.lnf_sigma_last = ln_sigma(x[t - 1], eps);
  const auto y = ln(x[t - 1], b.lnf_gamma, b.lnf_beta, eps);
  for (std::size_t wv = 0; wv < b.config.vocab_size; ++wv) {
    const auto u = b.unembedding_column(static_cast<lattr::TokenId>(wv));
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) acc += y[c] * u[c];
    ref.last_logits.push_back(acc);
  }
  return ref;
}

// T_{t,j} summed over heads, with the layer norm materialized as a dense d x d
// matrix and every head's W_V^h W_O^h multiplied out. Returns (t+1) x d rows
// for sources 0..t plus per-head rows in `per_head` (H x (t+1) x d).
template <typename T>
Mat brute_force_vectors(const lattr::ModelBundle<T>& b, const ForwardRef& ref, std::size_t l,
                        std::size_t t, std::vector<Mat>* per_head = nullptr) {
  const auto& w = b.layers[l];
  const std::size_t d = b.config.d_model, H = b.config.n_head, dh = d / H;
  const Mat wv = to_mat(w.w_v), wo = to_mat(w.w_o);
  Mat out = zeros(t + 1, d);
  if (per_head) per_head->assign(H, zeros(t + 1, d));
  for (std::size_t h = 0; h < H; ++h) {
    Mat wvh = zeros(d, dh), woh = zeros(dh, d);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < dh; ++c) wvh[r][c] = wv[r][h * dh + c];
    for (std::size_t r = 0; r < dh; ++r)
      for (std::size_t c = 0; c < d; ++c) woh[r][c] = wo[h * dh + r][c];
    const Mat ov = mul(wvh, woh);
    std::vector<double> bv(dh), beta(w.ln1_beta.begin(), w.ln1_beta.end());
    for (std::size_t c = 0; c < dh; ++c) bv[c] = w.b_v[h * dh + c];
    auto vb = vmul(beta, wvh);
    for (std::size_t c = 0; c < dh; ++c) vb[c] += bv[c];
    const auto theta = vmul(vb, woh);
    for (std::size_t j = 0; j <= t; ++j) {
      const double sigma = ref.layers[l].ln1_sigma[j];
      Mat L = zeros(d, d);
      for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c)
          L[r][c] = ((r == c ? 1.0 : 0.0) - 1.0 / d) * w.ln1_gamma[c] / sigma;
      const auto xl = vmul(ref.layers[l].input[j], L);
      const auto img = vmul(xl, ov);
      const double a = ref.layers[l].attention[h][t][j];
      for (std::size_t c = 0; c < d; ++c) {
        const double v = a * img[c] + a * theta[c];
        out[j][c] += v;
        if (per_head) (*per_head)[h][j][c] = v;
      }
    }
  }
  return out;
}

// Expected 1/rank of the first evidence item over all permutations.
inline double enumerate_random_mrr(std::size_t t, const std::vector<bool>& evidence) {
  std::vector<std::size_t> perm(t);
  std::iota(perm.begin(), perm.end(), 0);
  double total = 0.0;
  std::size_t count = 0;
  do {
    for (std::size_t r = 0; r < t; ++r) {
      if (evidence[perm[r]]) {
        total += 1.0 / (r + 1);
        break;
      }
    }
    ++count;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return total / count;
}

// Synthetic model directory with the real GPT-2 tokenizer and a tiny random
// network. Built once per name; staged and renamed so parallel tests can share it.
inline std::filesystem::path synthetic_model_dir(const std::string& name, std::uint64_t seed = 11,
                                                 std::size_t n_positions = 64) {
  namespace fs = std::filesystem;
#ifdef LATTR_TEST_TMP
  const fs::path root(LATTR_TEST_TMP);
#else
  const fs::path root = fs::temp_directory_path();
#endif
  const auto dir = root / ("model_" + name);
  if (fs::exists(dir / "merges.txt")) return dir;
  std::random_device rd;
  const auto stage = root / ("stage_" + name + "_" + std::to_string(rd()));
  auto cfg = lattr::small_config(50257);
  cfg.n_layer = 2;
  cfg.n_positions = n_positions;
  lattr::save_bundle(lattr::random_bundle<double>(cfg, {seed}), stage);
  fs::copy_file(fixture("gpt2_tokenizer/vocab.json"), stage / "vocab.json");
  fs::copy_file(fixture("gpt2_tokenizer/merges.txt"), stage / "merges.txt");
  std::error_code ec;
  fs::rename(stage, dir, ec);
  if (ec) fs::remove_all(stage);
  return dir;
}

}  // namespace oracle
