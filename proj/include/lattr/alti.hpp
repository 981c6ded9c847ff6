#pragma once

// Contextual mixing across layers. C^l[i][j] is the share of x^{l-1}_j in x^l_i;
// M^l = C^l M^{l-1} (M^0 = I) maps each stream back to the model inputs.

#include <algorithm>
#include <cmath>
#include <vector>

#include "lattr/decomposition.hpp"
#include "lattr/error.hpp"
#include "lattr/tensor.hpp"
#include "lattr/trace.hpp"

namespace lattr {

enum class MixEstimator { alti, identity };

struct MixMatrices {
  std::vector<Matrix<double>> coefficients;  // C^1..C^L, stored at index l-1
  std::vector<Matrix<double>> rollout;       // M^0..M^L

  std::size_t n_layers() const { return coefficients.size(); }
};

// ALTI contributions of candidate vectors v_j to their sum r = sum_j v_j + bias:
//   s_j = max(0, |r|_1 - |r - v_j|_1),  c_j = s_j / sum s
// falling back to a uniform row when every score clips to zero.
template <std::floating_point T>
std::vector<double> alti_row(const Matrix<T>& candidates, std::span<const T> bias) {
  const std::size_t n = candidates.rows(), d = candidates.cols();
  if (n == 0) return {};
  if (bias.size() != d) throw ShapeError("alti_row: bias width mismatch");
  std::vector<double> r(bias.begin(), bias.end());
  for (std::size_t j = 0; j < n; ++j) {
    const auto v = candidates.row(j);
    for (std::size_t k = 0; k < d; ++k) r[k] += v[k];
  }
  double r_l1 = 0.0;
  for (double x : r) r_l1 += std::abs(x);
  std::vector<double> s(n);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const auto v = candidates.row(j);
    double dist = 0.0;
    for (std::size_t k = 0; k < d; ++k) dist += std::abs(r[k] - v[k]);
    s[j] = std::max(0.0, r_l1 - dist);
    total += s[j];
  }
  if (total <= 0.0) {
    std::fill(s.begin(), s.end(), 1.0 / static_cast<double>(n));
  } else {
    for (double& x : s) x /= total;
  }
  return s;
}

// Rows of C^l for one traced layer. The residual path is folded into the
// diagonal candidate: v_{i,i} = T_{i,i}(x_i) + x_i.
template <std::floating_point T>
Matrix<double> layer_coefficients(const LayerDecomposer<T>& decomp, const ForwardTrace<T>& trace,
                                  MixEstimator estimator = MixEstimator::alti) {
  const std::size_t t = trace.length();
  if (estimator == MixEstimator::identity) return Matrix<double>::identity(t);
  const auto& input = trace.layers[decomp.layer()].input;
  Matrix<double> c(t, t);
  for (std::size_t i = 0; i < t; ++i) {
    auto tv = decomp.at(i);
    auto diag = tv.vectors.row(i);
    const auto x = input.row(i);
    for (std::size_t k = 0; k < diag.size(); ++k) diag[k] += x[k];
    const auto row = alti_row(tv.vectors, std::span<const T>(tv.bias));
    for (std::size_t j = 0; j <= i; ++j) c(i, j) = row[j];
  }
  return c;
}

inline std::vector<Matrix<double>> rollout(const std::vector<Matrix<double>>& coefficients) {
  std::vector<Matrix<double>> m;
  if (coefficients.empty()) return m;
  const std::size_t t = coefficients.front().rows();
  for (const auto& c : coefficients) {
    if (c.rows() != t || c.cols() != t) {
      throw ShapeError("rollout: coefficient matrices must all be " + std::to_string(t) + "x" +
                       std::to_string(t) + ", got " + c.shape());
    }
  }
  m.push_back(Matrix<double>::identity(t));
  for (const auto& c : coefficients) m.push_back(matmul(c, m.back()));
  return m;
}

template <std::floating_point T>
MixMatrices compute_mix(const ModelBundle<T>& bundle, const ForwardTrace<T>& trace,
                        MixEstimator estimator = MixEstimator::alti) {
  MixMatrices mix;
  for (std::size_t l = 0; l < trace.n_layers(); ++l) {
    if (estimator == MixEstimator::identity) {
      mix.coefficients.push_back(Matrix<double>::identity(trace.length()));
    } else {
      mix.coefficients.push_back(layer_coefficients(LayerDecomposer<T>(bundle, trace, l), trace));
    }
  }
  mix.rollout = rollout(mix.coefficients);
  return mix;
}

inline MixMatrices identity_mix(std::size_t n_layers, std::size_t length) {
  MixMatrices mix;
  mix.coefficients.assign(n_layers, Matrix<double>::identity(length));
  mix.rollout.assign(n_layers + 1, Matrix<double>::identity(length));
  return mix;
}

}  // namespace lattr
