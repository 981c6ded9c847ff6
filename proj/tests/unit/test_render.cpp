#include <gtest/gtest.h>

#include <regex>

#include "lattr/render.hpp"
#include "lattr/serialize.hpp"

namespace {

lattr::Explanation toy_explanation() {
  lattr::Explanation e;
  e.method = lattr::Method::alti_logit;
  e.target = 468;
  e.foil = 423;
  e.tokens = {"A", " report", " <b>&"};
  e.per_layer = lattr::Matrix<double>(2, 3, std::vector<double>{0.5, -1.0, 0.25, 2.0, 0.0, -0.5});
  e.scores = {2.5, -1.0, -0.25};
  e.attn_bias = {0.1, -0.2};
  e.mlp = {1.5, -0.75};
  e.embedding = 0.3;
  e.final_ln_bias = -0.05;
  return e;
}

std::vector<std::string> backgrounds(const std::string& html) {
  std::vector<std::string> out;
  const std::regex re("background:(rgb\\([0-9]+,[0-9]+,[0-9]+\\))");
  for (std::sregex_iterator it(html.begin(), html.end(), re), end; it != end; ++it) out.push_back((*it)[1]);
  return out;
}

}  // namespace

TEST(Color, Endpoints) {
  EXPECT_EQ(lattr::diverging_color(0.0), (lattr::Rgb{255, 255, 255}));
  EXPECT_EQ(lattr::diverging_color(1.0), (lattr::Rgb{255, 0, 0}));
  EXPECT_EQ(lattr::diverging_color(-1.0), (lattr::Rgb{0, 0, 255}));
  EXPECT_EQ(lattr::diverging_color(7.0), (lattr::Rgb{255, 0, 0}));
  EXPECT_EQ(lattr::diverging_color(std::nan("")), (lattr::Rgb{255, 255, 255}));
  EXPECT_EQ(lattr::ansi256({255, 255, 255}), 231);
  EXPECT_EQ(lattr::ansi256({255, 0, 0}), 196);
  EXPECT_EQ(lattr::ansi256({0, 0, 255}), 21);
}

TEST(Heatmap, ZeroGridIsUniformWhite) {
  lattr::HeatmapSpec s{"zeros", {"L2", "L1"}, {"a", "b", "c"}, lattr::Matrix<double>(2, 3)};
  const auto bg = backgrounds(lattr::render_heatmap(s, lattr::RenderFormat::html));
  ASSERT_EQ(bg.size(), 6u);
  for (const auto& c : bg) EXPECT_EQ(c, "rgb(255,255,255)");
}

TEST(Heatmap, ExtremesGetFullColor) {
  lattr::HeatmapSpec s{"x", {"r"}, {"a", "b"}, lattr::Matrix<double>(1, 2, std::vector<double>{-1, 1})};
  const auto bg = backgrounds(lattr::render_heatmap(s, lattr::RenderFormat::html));
  EXPECT_EQ(bg, (std::vector<std::string>{"rgb(0,0,255)", "rgb(255,0,0)"}));
  const auto ansi = lattr::render_heatmap(s, lattr::RenderFormat::ansi);
  EXPECT_NE(ansi.find("\x1b[48;5;21m"), std::string::npos);
  EXPECT_NE(ansi.find("\x1b[48;5;196m"), std::string::npos);
}

TEST(Heatmap, LayerRowsTopDownThenSum) {
  const auto s = lattr::layer_heatmap(toy_explanation());
  EXPECT_EQ(s.row_labels, (std::vector<std::string>{"L2", "L1", "\xce\xa3"}));
  EXPECT_EQ(s.values(0, 0), 2.0);
  EXPECT_EQ(s.values(1, 1), -1.0);
  EXPECT_EQ(s.values(2, 0), 2.5);
  EXPECT_EQ(s.title, "alti-logit (contrastive)");
  auto e = toy_explanation();
  e.tokens.clear();
  EXPECT_EQ(lattr::layer_heatmap(e).column_tokens, (std::vector<std::string>{"#0", "#1", "#2"}));
}

TEST(Heatmap, NormalizationModes) {
  lattr::HeatmapSpec s{"n", {"a", "b"}, {"x", "y"}, lattr::Matrix<double>(2, 2, std::vector<double>{1, 0, 0.5, 0})};
  auto bg = backgrounds(lattr::render_heatmap(s, lattr::RenderFormat::html));
  EXPECT_EQ(bg[2], "rgb(255,0,0)");  // per row: 0.5 is its row's maximum
  s.normalization = lattr::Normalization::global;
  bg = backgrounds(lattr::render_heatmap(s, lattr::RenderFormat::html));
  EXPECT_EQ(bg[2], "rgb(255,128,128)");
}

TEST(Heatmap, PureAndSelfContained) {
  const auto s = lattr::layer_heatmap(toy_explanation());
  const auto a = lattr::render_heatmap(s, lattr::RenderFormat::html);
  EXPECT_EQ(a, lattr::render_heatmap(s, lattr::RenderFormat::html));
  EXPECT_EQ(lattr::render_heatmap(s, lattr::RenderFormat::ansi), lattr::render_heatmap(s, lattr::RenderFormat::ansi));
  EXPECT_EQ(a.find("<script"), std::string::npos);
  EXPECT_EQ(a.find("http"), std::string::npos);
  EXPECT_EQ(a.find("<link"), std::string::npos);
  EXPECT_NE(a.find("&lt;b&gt;&amp;"), std::string::npos);
  EXPECT_NE(a.find("title=\"-0.25\""), std::string::npos);
}

TEST(Heatmap, ShapeChecked) {
  lattr::HeatmapSpec s{"bad", {"a"}, {"x", "y"}, lattr::Matrix<double>(2, 2)};
  EXPECT_THROW(lattr::render_heatmap(s, lattr::RenderFormat::ansi), lattr::ShapeError);
}

TEST(Serialize, JsonRoundTrip) {
  const auto e = toy_explanation();
  const auto j = lattr::to_json(e);
  EXPECT_EQ(j["method"], "alti-logit");
  EXPECT_EQ(j["foil"], 423);
  const auto back = lattr::explanation_from_json(nlohmann::json::parse(lattr::dump_json(j)));
  EXPECT_EQ(back.scores, e.scores);
  EXPECT_EQ(back.per_layer, e.per_layer);
  EXPECT_EQ(back.tokens, e.tokens);
  EXPECT_EQ(back.foil, e.foil);
  EXPECT_EQ(back.mlp, e.mlp);
  EXPECT_DOUBLE_EQ(back.total(), e.total());
  auto no_foil = e;
  no_foil.foil.reset();
  EXPECT_TRUE(lattr::to_json(no_foil)["foil"].is_null());
  EXPECT_FALSE(lattr::explanation_from_json(lattr::to_json(no_foil)).foil.has_value());
  EXPECT_THROW(lattr::explanation_from_json(nlohmann::json{{"method", "logit"}}), lattr::DataError);
}
