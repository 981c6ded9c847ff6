#include <gtest/gtest.h>

#include "lattr/alti.hpp"
#include "lattr/synthetic.hpp"

using lattr::Matrix;
using lattr::TokenId;

namespace {

std::vector<double> row_of(std::vector<double> flat, std::size_t n, std::vector<double> bias) {
  const Matrix<double> c(n, bias.size(), std::move(flat));
  return lattr::alti_row(c, std::span<const double>(bias));
}

}  // namespace

TEST(AltiRow, OrthogonalEqualParts) {
  const auto r = row_of({1, 0, 0, 1}, 2, {0, 0});
  EXPECT_DOUBLE_EQ(r[0], 0.5);
  EXPECT_DOUBLE_EQ(r[1], 0.5);
}

TEST(AltiRow, HandComputed) {
  // r = (2,2), |r|=4; |r-v1| = 2 -> 2; |r-v2| = 4 -> 0
  const auto r = row_of({3, 1, -1, 1}, 2, {0, 0});
  EXPECT_DOUBLE_EQ(r[0], 1.0);
  EXPECT_DOUBLE_EQ(r[1], 0.0);
  // bias counts towards r: v=(1,0), b=(0,1) -> r=(1,1), score 1
  const auto single = row_of({1, 0}, 1, {0, 1});
  EXPECT_DOUBLE_EQ(single[0], 1.0);
  // three parts: r = (1,2,1), |r|=4; scores 4-3=1, 4-2=2, 4-3=1
  const auto three = row_of({1, 0, 0, 0, 2, 0, 0, 0, 1}, 3, {0, 0, 0});
  EXPECT_DOUBLE_EQ(three[0], 0.25);
  EXPECT_DOUBLE_EQ(three[1], 0.5);
  EXPECT_DOUBLE_EQ(three[2], 0.25);
}

TEST(AltiRow, UniformWhenAllScoresClip) {
  // r = (1,0); |r-v1| = 1 -> 0, |r-v2| = 2 -> 0
  const auto r = row_of({2, 0, -1, 0}, 2, {0, 0});
  EXPECT_DOUBLE_EQ(r[0], 0.5);
  EXPECT_DOUBLE_EQ(r[1], 0.5);
  const auto z = row_of({0, 0, 0, 0, 0, 0}, 3, {0, 0});
  for (double v : z) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(AltiRow, BiasWidthChecked) {
  EXPECT_THROW(row_of({1, 0}, 1, {0, 0, 0}), lattr::ShapeError);
}

TEST(Rollout, ComposesLayers) {
  const Matrix<double> c1(2, 2, std::vector<double>{1, 0, 0.5, 0.5});
  const Matrix<double> c2(2, 2, std::vector<double>{1, 0, 0.2, 0.8});
  const auto m = lattr::rollout({c1, c2});
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m[0], Matrix<double>::identity(2));
  EXPECT_EQ(m[1], c1);
  // row 1 of c2 * c1: 0.2*(1,0) + 0.8*(0.5,0.5)
  EXPECT_DOUBLE_EQ(m[2](1, 0), 0.6);
  EXPECT_DOUBLE_EQ(m[2](1, 1), 0.4);
  EXPECT_TRUE(lattr::rollout({}).empty());
  EXPECT_THROW(lattr::rollout({c1, Matrix<double>(3, 3)}), lattr::ShapeError);
}

class MixProperties : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(MixProperties, RowsAreCausalDistributions) {
  const auto b = lattr::random_bundle<double>(lattr::small_config(), {GetParam()});
  std::vector<TokenId> ids;
  for (std::uint64_t i = 0; i < 12; ++i) ids.push_back(static_cast<TokenId>((GetParam() * 7 + i * 13) % 64));
  const auto r = lattr::run_forward(b, ids);
  const auto mix = lattr::compute_mix(b, r.trace);
  ASSERT_EQ(mix.n_layers(), 3u);
  ASSERT_EQ(mix.rollout.size(), 4u);
  for (const auto* set : {&mix.coefficients, &mix.rollout})
    for (const auto& c : *set)
      for (std::size_t i = 0; i < 12; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 12; ++j) {
          EXPECT_GE(c(i, j), 0.0);
          if (j > i) {
            EXPECT_EQ(c(i, j), 0.0);
          }
          s += c(i, j);
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
  // first position only has itself
  for (const auto& c : mix.coefficients) EXPECT_DOUBLE_EQ(c(0, 0), 1.0);
}

INSTANTIATE_TEST_SUITE_P(Seeds, MixProperties, ::testing::Values(51, 52, 53, 54, 55));

TEST(Mix, LayerCoefficientsUseResidualInDiagonal) {
  const auto b = lattr::random_bundle<double>(lattr::small_config(), {56});
  const std::vector<TokenId> ids{1, 2, 3, 4};
  const auto r = lattr::run_forward(b, ids);
  const lattr::LayerDecomposer<double> dec(b, r.trace, 1);
  const auto c = lattr::layer_coefficients(dec, r.trace);
  auto tv = dec.at(3);
  for (std::size_t k = 0; k < 16; ++k) tv.vectors(3, k) += r.trace.layers[1].input(3, k);
  const auto expect = lattr::alti_row(tv.vectors, std::span<const double>(tv.bias));
  for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(c(3, j), expect[j]);
}

TEST(Mix, IdentityEstimator) {
  const auto b = lattr::random_bundle<float>(lattr::small_config(), {57});
  const auto r = lattr::run_forward(b, std::vector<TokenId>{9, 8, 7});
  const auto mix = lattr::compute_mix(b, r.trace, lattr::MixEstimator::identity);
  const auto id = lattr::identity_mix(3, 3);
  ASSERT_EQ(mix.rollout.size(), id.rollout.size());
  for (std::size_t l = 0; l < mix.rollout.size(); ++l) EXPECT_EQ(mix.rollout[l], id.rollout[l]);
  for (const auto& c : mix.coefficients) EXPECT_EQ(c, Matrix<double>::identity(3));
}
