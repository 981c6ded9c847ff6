#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "lattr/cli.hpp"
#include "oracle.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "lattr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = lattr::cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string model() { return oracle::synthetic_model_dir("cli").string(); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  const auto r = run({"explain", "--text", "hi"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--target"), std::string::npos);
  EXPECT_EQ(run({"explain", "--text", "a", "--target", " b", "--method", "saliency"}).code, 1);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, MissingModelDirectory) {
  const auto r = run({"explain", "--model-dir", "/nonexistent/gpt2", "--text", "a", "--target", " b"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("/nonexistent/gpt2"), std::string::npos) << r.err;
  ::unsetenv("MODEL_DIR");
  const auto none = run({"trace", "--text", "a"});
  EXPECT_EQ(none.code, 3);
  EXPECT_NE(none.err.find("MODEL_DIR"), std::string::npos);
}

TEST(Cli, ExplainJson) {
  const auto r = run({"explain", "--model-dir", model(), "--text", "A report about the Impressionists",
                      "--target", " has", "--foil", " have"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto e = lattr::explanation_from_json(nlohmann::json::parse(r.out));
  EXPECT_EQ(e.method, lattr::Method::alti_logit);
  EXPECT_EQ(e.target, 468);
  EXPECT_EQ(e.foil, lattr::TokenId{423});
  EXPECT_EQ(e.tokens, (std::vector<std::string>{"A", " report", " about", " the", " Imp", "ression", "ists"}));
  EXPECT_EQ(e.n_layers(), 2u);

  const auto loaded = lattr::load_model_dir<lattr::real>(model());
  const auto ids = loaded.tokenizer.encode("A report about the Impressionists");
  const auto fwd = lattr::run_forward(loaded.bundle, ids);
  EXPECT_NEAR(e.total(), fwd.head.logits[468] - fwd.head.logits[423], 1e-4);
}

TEST(Cli, ExplainRejectsMultiTokenTarget) {
  const auto r = run({"explain", "--model-dir", model(), "--text", "x", "--target", " Impressionists"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("single token"), std::string::npos);
}

TEST(Cli, ExplainHtmlAndAnsi) {
  const auto html = fs::path(LATTR_TEST_TMP) / "cli_explain.html";
  auto r = run({"explain", "--model-dir", model(), "--text", "The keys to the cabinet", "--target", " are",
                "--foil", " is", "--method", "logit", "--out", "html", "-o", html.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.out.empty());
  const auto page = slurp(html);
  EXPECT_EQ(page.rfind("<!DOCTYPE html>", 0), 0u);
  EXPECT_NE(page.find("cabinet"), std::string::npos);
  r = run({"explain", "--model-dir", model(), "--text", "The keys", "--target", " are", "--out", "ansi",
           "--method", "erasure"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("\x1b[48;5;"), std::string::npos);
}

TEST(Cli, EvalMrrMatchesHandComputation) {
  const auto data = oracle::fixture("data/darn3.jsonl").string();
  const auto r = run({"eval-mrr", "--model-dir", model(), "--dataset", data, "--method", "logit", "--per-layer"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  ASSERT_EQ(j["examples"], 3);
  EXPECT_EQ(j["rejected"], 0);
  EXPECT_EQ(j["per_layer"].size(), 2u);

  // Rank the evidence pieces by hand for each example.
  const auto loaded = lattr::load_model_dir<lattr::real>(model());
  const auto examples = lattr::load_dataset(data);
  double sum = 0.0, rnd = 0.0;
  for (const auto& ex : examples) {
    std::vector<lattr::TokenId> ids;
    std::vector<bool> ev;
    for (std::size_t i = 0; i < ex.context.size(); ++i)
      for (auto id : loaded.tokenizer.encode(ex.context[i])) {
        ids.push_back(id);
        ev.push_back(ex.evidence[i]);
      }
    lattr::ExplainRequest req;
    req.method = lattr::Method::logit;
    const auto e = lattr::explain_ids(loaded.bundle, ids, loaded.tokenizer.encode(ex.target)[0],
                                      loaded.tokenizer.encode(ex.foil)[0], req);
    // best rank over evidence pieces; a piece's rank counts higher scores and earlier ties
    std::size_t rank = ids.size();
    for (std::size_t p = 0; p < ids.size(); ++p) {
      if (!ev[p]) continue;
      std::size_t r = 1;
      for (std::size_t s = 0; s < ids.size(); ++s)
        if (e.scores[s] > e.scores[p] || (e.scores[s] == e.scores[p] && s < p)) ++r;
      rank = std::min(rank, r);
    }
    sum += 1.0 / static_cast<double>(rank);
    rnd += oracle::enumerate_random_mrr(ids.size(), ev);
  }
  EXPECT_NEAR(j["mrr"].get<double>(), sum / 3.0, 1e-12);
  EXPECT_NEAR(j["random_mrr"].get<double>(), rnd / 3.0, 1e-12);
}

TEST(Cli, EvalMrrCsvAndDataErrors) {
  const auto csv = fs::path(LATTR_TEST_TMP) / "cli_layers.csv";
  const auto out = fs::path(LATTR_TEST_TMP) / "cli_eval.json";
  auto r = run({"eval-mrr", "--model-dir", model(), "--dataset", oracle::fixture("data/darn3.jsonl").string(),
                "--per-layer", "--csv", csv.string(), "-o", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto text = slurp(csv);
  EXPECT_EQ(text.rfind("layer,mrr,random_mrr\n1,", 0), 0u) << text;
  EXPECT_EQ(nlohmann::json::parse(slurp(out))["method"], "alti-logit");

  const auto bad = fs::path(LATTR_TEST_TMP) / "cli_bad.jsonl";
  std::ofstream(bad) << "{\"context\": [\"a\"]}\n";
  r = run({"eval-mrr", "--model-dir", model(), "--dataset", bad.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line 1"), std::string::npos) << r.err;
}

TEST(Cli, AlignSynthetic) {
  const auto r = run({"align", "--mode", "synthetic", "--pairs", "10"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["aer"].get<double>(), 0.0);
  EXPECT_EQ(j["layer"], 2);
  EXPECT_LE(j["max_reconstruction_error"].get<double>(), 1e-5);
  EXPECT_EQ(run({"align", "--layer", "3"}).code, 2);
}

TEST(Cli, AlignFiles) {
  const auto r = run({"align", "--mode", "files", "--alignments", oracle::fixture("data/alignments_toy.jsonl").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_DOUBLE_EQ(j["aer"].get<double>(), 0.375);
  EXPECT_EQ(j["pairs_skipped"], 1);
  EXPECT_EQ(run({"align", "--mode", "files"}).code, 2);
}

TEST(Cli, Trace) {
  const auto r = run({"trace", "--model-dir", model(), "--text", "Hello world", "--top", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["tokens"], (std::vector<std::string>{"Hello", " world"}));
  EXPECT_EQ(j["layers"].size(), 2u);
  ASSERT_EQ(j["top"].size(), 3u);
  EXPECT_GE(j["top"][0]["prob"].get<double>(), j["top"][1]["prob"].get<double>());
}
