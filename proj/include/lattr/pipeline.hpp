#pragma once

// Text-level entry points: tokenize, trace, explain, and score datasets.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lattr/alti.hpp"
#include "lattr/explain.hpp"
#include "lattr/metrics.hpp"
#include "lattr/model.hpp"
#include "lattr/tokenizer.hpp"
#include "lattr/trace.hpp"

namespace lattr {

template <std::floating_point T>
struct LoadedModel {
  ModelBundle<T> bundle;
  Tokenizer tokenizer;
};

// A model directory holds config.json, model.safetensors, vocab.json and merges.txt.
template <std::floating_point T>
LoadedModel<T> load_model_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ModelError("model directory not found: " + dir.string());
  for (const char* f : {"config.json", "model.safetensors", "vocab.json", "merges.txt"}) {
    if (!std::filesystem::exists(dir / f)) {
      throw ModelError("model directory " + dir.string() + " lacks " + f);
    }
  }
  auto bundle = load_bundle<T>(dir / "model.safetensors", dir / "config.json");
  auto tok = Tokenizer::from_files(dir / "vocab.json", dir / "merges.txt");
  if (tok.vocab_size() > bundle.config.vocab_size) {
    throw ModelError("tokenizer has " + std::to_string(tok.vocab_size()) +
                     " entries but the model only " + std::to_string(bundle.config.vocab_size));
  }
  return {std::move(bundle), std::move(tok)};
}

// Encodes a string that must map to exactly one token.
inline std::optional<TokenId> single_token(const Tokenizer& tok, const std::string& s) {
  const auto ids = tok.encode(s);
  if (ids.size() != 1) return std::nullopt;
  return ids.front();
}

struct ExplainRequest {
  Method method = Method::alti_logit;
  FinalLnMode final_ln = FinalLnMode::linearized;
  ErasureMeasure erasure = ErasureMeasure::probability;
};

// Contrastive when `foil` is set. Erasure ignores `final_ln`.
template <std::floating_point T>
Explanation explain_ids(const ModelBundle<T>& bundle, const std::vector<TokenId>& ids, TokenId target,
                        std::optional<TokenId> foil, const ExplainRequest& req) {
  if (req.method == Method::erasure) return contrastive_erasure(bundle, std::span<const TokenId>(ids), target, foil, req.erasure);
  const auto fwd = run_forward(bundle, ids);
  const AttributionContext<T> ctx(bundle, fwd.trace, std::nullopt, req.final_ln);
  if (req.method == Method::logit) return logit_explanation(ctx, target, foil);
  return alti_logit_explanation(ctx, ctx.mix(), target, foil);
}

template <std::floating_point T>
Explanation explain_text(const LoadedModel<T>& model, const std::string& text, const std::string& target,
                         const std::optional<std::string>& foil, const ExplainRequest& req) {
  const auto ids = model.tokenizer.encode(text);
  if (ids.empty()) throw DataError("explain: text encodes to no tokens");
  const auto w = single_token(model.tokenizer, target);
  if (!w) throw DataError("explain: target '" + target + "' is not a single token");
  std::optional<TokenId> f;
  if (foil) {
    f = single_token(model.tokenizer, *foil);
    if (!f) throw DataError("explain: foil '" + *foil + "' is not a single token");
  }
  auto e = explain_ids(model.bundle, ids, *w, f, req);
  for (TokenId id : ids) e.tokens.push_back(model.tokenizer.token_bytes(id));
  return e;
}

struct PreparedExample {
  std::vector<TokenId> ids;
  std::vector<bool> evidence;  // per token piece
  TokenId target = 0;
  TokenId foil = 0;
  std::string dataset;
};

struct PreparedSet {
  std::vector<PreparedExample> examples;
  std::size_t rejected = 0;  // target or foil not a single token
};

// Context entries are concatenated verbatim and tokenized one by one; every
// piece of an evidence entry counts as evidence.
inline PreparedSet prepare_examples(const Tokenizer& tok, const std::vector<EvidenceExample>& examples) {
  PreparedSet out;
  for (const auto& ex : examples) {
    const auto w = single_token(tok, ex.target);
    const auto f = single_token(tok, ex.foil);
    if (!w || !f) {
      ++out.rejected;
      continue;
    }
    PreparedExample p;
    p.target = *w;
    p.foil = *f;
    p.dataset = ex.dataset;
    for (std::size_t i = 0; i < ex.context.size(); ++i) {
      for (TokenId id : tok.encode(ex.context[i])) {
        p.ids.push_back(id);
        p.evidence.push_back(ex.evidence[i]);
      }
    }
    if (p.ids.empty()) {
      ++out.rejected;
      continue;
    }
    out.examples.push_back(std::move(p));
  }
  return out;
}

struct MrrReport {
  std::vector<double> per_example;
  double mean = 0.0;
  double random_mean = 0.0;
  std::vector<double> per_layer_mean;  // filled when requested (logit methods only)
  std::size_t rejected = 0;
};

template <std::floating_point T>
MrrReport evaluate_mrr(const ModelBundle<T>& bundle, const PreparedSet& set, const ExplainRequest& req,
                       bool per_layer = false) {
  MrrReport rep;
  rep.rejected = set.rejected;
  for (const auto& ex : set.examples) {
    const auto e = explain_ids(bundle, ex.ids, ex.target, ex.foil, req);
    rep.per_example.push_back(mrr(e.scores, ex.evidence));
    rep.random_mean += random_baseline_mrr(ex.evidence);
    if (per_layer && e.n_layers() > 0) {
      if (rep.per_layer_mean.empty()) rep.per_layer_mean.assign(e.n_layers(), 0.0);
      for (std::size_t l = 0; l < e.n_layers(); ++l) {
        const auto row = e.per_layer.row(l);
        rep.per_layer_mean[l] += mrr(row, ex.evidence);
      }
    }
  }
  const double n = static_cast<double>(rep.per_example.size());
  if (n > 0) {
    for (double v : rep.per_example) rep.mean += v;
    rep.mean /= n;
    rep.random_mean /= n;
    for (double& v : rep.per_layer_mean) v /= n;
  }
  return rep;
}

}  // namespace lattr
