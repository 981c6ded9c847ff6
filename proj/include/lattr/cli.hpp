#pragma once

// `lattr` command line: explain, eval-mrr, align, trace.
// Exit codes: 0 ok, 1 usage, 2 data error, 3 model error.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lattr/error.hpp"
#include "lattr/metrics.hpp"
#include "lattr/pipeline.hpp"
#include "lattr/render.hpp"
#include "lattr/seq2seq.hpp"
#include "lattr/serialize.hpp"

namespace lattr {

enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_data = 2, exit_model = 3 };

namespace detail {

inline std::string resolve_model_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("MODEL_DIR"); env && *env) return env;
  throw ModelError("no model directory: pass --model-dir or set MODEL_DIR");
}

inline void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << text;
}

struct ExplainArgs {
  std::string model_dir, text, target, foil, method = "alti-logit", format = "json", output;
  std::string final_ln = "linearized", erasure_measure = "probability";
  bool global_scale = false;
};

inline int run_explain(const ExplainArgs& a, std::ostream& out) {
  ExplainRequest req;
  req.method = method_from_string(a.method);
  req.final_ln = a.final_ln == "ignore" ? FinalLnMode::ignore : FinalLnMode::linearized;
  req.erasure = a.erasure_measure == "logit" ? ErasureMeasure::logit : ErasureMeasure::probability;
  const auto model = load_model_dir<real>(resolve_model_dir(a.model_dir));
  const std::optional<std::string> foil = a.foil.empty() ? std::nullopt : std::optional(a.foil);
  const auto e = explain_text(model, a.text, a.target, foil, req);
  std::string text;
  if (a.format == "json") {
    text = dump_json(to_json(e)) + "\n";
  } else {
    auto spec = layer_heatmap(e, a.global_scale ? Normalization::global : Normalization::per_row);
    spec.title = a.text + " -> '" + a.target + "'" + (foil ? " vs '" + *foil + "'" : "") + " [" + a.method + "]";
    text = render_heatmap(spec, a.format == "html" ? RenderFormat::html : RenderFormat::ansi);
  }
  emit(text, a.output, out);
  return exit_ok;
}

struct EvalArgs {
  std::string model_dir, dataset, method = "alti-logit", output, csv;
  bool per_layer = false;
};

inline int run_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  ExplainRequest req;
  req.method = method_from_string(a.method);
  const auto examples = load_dataset(a.dataset);
  const auto model = load_model_dir<real>(resolve_model_dir(a.model_dir));
  const auto set = prepare_examples(model.tokenizer, examples);
  if (set.rejected > 0) {
    err << "eval-mrr: rejected " << set.rejected << " example(s) whose target or foil is not a single token\n";
  }
  if (set.examples.empty()) throw DataError("eval-mrr: no usable examples in " + a.dataset);
  const auto rep = evaluate_mrr(model.bundle, set, req, a.per_layer && req.method != Method::erasure);
  nlohmann::json j{{"dataset", a.dataset},
                   {"method", a.method},
                   {"examples", rep.per_example.size()},
                   {"rejected", rep.rejected},
                   {"mrr", rep.mean},
                   {"random_mrr", rep.random_mean},
                   {"per_example", rep.per_example}};
  if (!rep.per_layer_mean.empty()) j["per_layer"] = rep.per_layer_mean;
  emit(dump_json(j) + "\n", a.output, out);
  if (!a.csv.empty()) {
    std::string csv = "layer,mrr,random_mrr\n";
    for (std::size_t l = 0; l < rep.per_layer_mean.size(); ++l) {
      csv += std::to_string(l + 1) + "," + detail::fmt(rep.per_layer_mean[l], "%.6f") + "," +
             detail::fmt(rep.random_mean, "%.6f") + "\n";
    }
    emit(csv, a.csv, out);
  }
  return exit_ok;
}

struct AlignArgs {
  std::string mode = "synthetic", alignments, output;
  int layer = 0;  // 1-based; 0 selects the last layer
  int pairs = 20;
  std::uint64_t seed = 1;
};

inline int run_align(const AlignArgs& a, std::ostream& out) {
  nlohmann::json j{{"mode", a.mode}};
  std::vector<AlignmentSet> sets;
  if (a.mode == "files") {
    if (a.alignments.empty()) throw DataError("align --mode files needs --alignments");
    sets = load_alignments(a.alignments);
  } else {
    const auto model = diagonal_seq2seq<double>();
    const auto& c = model.config;
    const std::size_t layer = a.layer == 0 ? c.n_dec_layer - 1 : static_cast<std::size_t>(a.layer - 1);
    if (layer >= c.n_dec_layer) throw DataError("align: --layer must be in 1.." + std::to_string(c.n_dec_layer));
    std::mt19937_64 rng(a.seed);
    std::uniform_int_distribution<std::size_t> len(2, c.n_positions);
    std::uniform_int_distribution<TokenId> tok(0, static_cast<TokenId>(c.src_vocab) - 1);
    double worst = 0.0;
    for (int p = 0; p < a.pairs; ++p) {
      std::vector<TokenId> src(len(rng)), tgt;
      for (auto& s : src) s = tok(rng);
      for (auto s : src) tgt.push_back(diagonal_translation(s));
      AlignmentSet set;
      for (std::size_t i = 0; i < src.size(); ++i) set.sure.emplace(static_cast<int>(i), static_cast<int>(i));
      set.possible = set.sure;
      set.hypothesis = extract_alignment(model, std::span<const TokenId>(src), std::span<const TokenId>(tgt), layer);
      sets.push_back(std::move(set));

      std::vector<TokenId> tgt_in{c.bos};
      tgt_in.insert(tgt_in.end(), tgt.begin(), tgt.end() - 1);
      const auto tr = run_seq2seq(model, std::span<const TokenId>(src), std::span<const TokenId>(tgt_in));
      for (std::size_t l = 0; l < c.n_dec_layer; ++l) {
        for (std::size_t t = 0; t < tr.length(); ++t) {
          const auto tv = cross_vectors(model, tr, l, t);
          for (std::size_t k = 0; k < c.d_model; ++k) {
            double s = tv.bias[k];
            for (std::size_t i = 0; i < tv.n_sources(); ++i) s += tv.vectors(i, k);
            worst = std::max(worst, std::abs(s - tr.layers[l].cross.output(t, k)));
          }
        }
      }
    }
    j["layer"] = layer + 1;
    j["max_reconstruction_error"] = worst;
  }
  const auto res = aer(sets);
  j["pairs_used"] = res.pairs_used;
  j["pairs_skipped"] = res.pairs_skipped;
  j["aer"] = res.value;
  emit(dump_json(j) + "\n", a.output, out);
  return exit_ok;
}

struct TraceArgs {
  std::string model_dir, text, output;
  int top = 5;
};

inline int run_trace(const TraceArgs& a, std::ostream& out) {
  const auto model = load_model_dir<real>(resolve_model_dir(a.model_dir));
  const auto ids = model.tokenizer.encode(a.text);
  if (ids.empty()) throw DataError("trace: text encodes to no tokens");
  const auto fwd = run_forward(model.bundle, ids);
  const auto& tr = fwd.trace;
  const std::size_t last = tr.length() - 1;
  auto norm = [](std::span<const real> v) {
    double s = 0.0;
    for (real x : v) s += static_cast<double>(x) * x;
    return std::sqrt(s);
  };
  nlohmann::json j;
  j["ids"] = ids;
  std::vector<std::string> toks;
  for (TokenId id : ids) toks.push_back(model.tokenizer.token_bytes(id));
  j["tokens"] = toks;
  j["config"] = model.bundle.config.to_json();
  auto layers = nlohmann::json::array();
  for (std::size_t l = 0; l < tr.n_layers(); ++l) {
    const auto& lt = tr.layers[l];
    layers.push_back({{"layer", l + 1},
                      {"input_norm", norm(lt.input.row(last))},
                      {"attn_out_norm", norm(lt.attn_out.row(last))},
                      {"mlp_out_norm", norm(lt.mlp_out.row(last))},
                      {"ln1_sigma", static_cast<double>(lt.ln1[last].std)},
                      {"ln2_sigma", static_cast<double>(lt.ln2[last].std)}});
  }
  j["layers"] = std::move(layers);
  j["final_ln_sigma"] = static_cast<double>(tr.lnf[last].std);
  std::vector<std::size_t> order(fwd.head.probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(std::max(a.top, 0)), order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t x, std::size_t y) { return fwd.head.probs[x] > fwd.head.probs[y]; });
  auto top = nlohmann::json::array();
  for (std::size_t i = 0; i < k; ++i) {
    const auto id = static_cast<TokenId>(order[i]);
    top.push_back({{"id", id},
                   {"token", id < static_cast<TokenId>(model.tokenizer.vocab_size()) ? model.tokenizer.token_bytes(id) : ""},
                   {"logit", static_cast<double>(fwd.head.logits[order[i]])},
                   {"prob", static_cast<double>(fwd.head.probs[order[i]])}});
  }
  j["top"] = std::move(top);
  emit(dump_json(j) + "\n", a.output, out);
  return exit_ok;
}

}  // namespace detail

inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Token-level logit attribution for GPT-2-class models", "lattr"};
  app.require_subcommand(1);

  detail::ExplainArgs ex;
  auto* explain = app.add_subcommand("explain", "Attribute one next-token prediction to the input tokens");
  explain->add_option("--model-dir", ex.model_dir, "Model directory (default: $MODEL_DIR)");
  explain->add_option("--text", ex.text, "Context text")->required();
  explain->add_option("--target", ex.target, "Target token, e.g. \" has\"")->required();
  explain->add_option("--foil", ex.foil, "Foil token for a contrastive explanation");
  explain->add_option("--method", ex.method)->check(CLI::IsMember({"logit", "alti-logit", "erasure"}));
  explain->add_option("--out", ex.format, "Output format")->check(CLI::IsMember({"json", "html", "ansi"}));
  explain->add_option("--output,-o", ex.output, "Output path (default: stdout)");
  explain->add_option("--final-ln", ex.final_ln)->check(CLI::IsMember({"linearized", "ignore"}));
  explain->add_option("--erasure-measure", ex.erasure_measure)->check(CLI::IsMember({"probability", "logit"}));
  explain->add_flag("--global-scale", ex.global_scale, "Scale colors over the whole grid instead of per row");

  detail::EvalArgs ev;
  auto* eval = app.add_subcommand("eval-mrr", "Mean reciprocal rank of explanations against evidence");
  eval->add_option("--model-dir", ev.model_dir, "Model directory (default: $MODEL_DIR)");
  eval->add_option("--dataset", ev.dataset, "Evidence JSONL")->required();
  eval->add_option("--method", ev.method)->check(CLI::IsMember({"logit", "alti-logit", "erasure"}));
  eval->add_flag("--per-layer", ev.per_layer, "Also score each layer's updates");
  eval->add_option("--csv", ev.csv, "Write per-layer MRR line data as CSV");
  eval->add_option("--output,-o", ev.output, "Output path (default: stdout)");

  detail::AlignArgs al;
  auto* align = app.add_subcommand("align", "Cross-attention alignments and AER");
  align->add_option("--mode", al.mode)->check(CLI::IsMember({"synthetic", "files"}));
  align->add_option("--layer", al.layer, "Decoder layer, 1-based (default: last)")->check(CLI::NonNegativeNumber);
  align->add_option("--alignments", al.alignments, "Alignment JSONL (files mode)");
  align->add_option("--pairs", al.pairs, "Sentence pairs (synthetic mode)")->check(CLI::PositiveNumber);
  align->add_option("--seed", al.seed);
  align->add_option("--output,-o", al.output, "Output path (default: stdout)");

  detail::TraceArgs tr;
  auto* trace = app.add_subcommand("trace", "Summarize a forward pass");
  trace->add_option("--model-dir", tr.model_dir, "Model directory (default: $MODEL_DIR)");
  trace->add_option("--text", tr.text, "Input text")->required();
  trace->add_option("--top", tr.top, "Top next tokens to list");
  trace->add_option("--output,-o", tr.output, "Output path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return exit_usage;
  }

  try {
    if (*explain) return detail::run_explain(ex, out);
    if (*eval) return detail::run_eval(ev, out, err);
    if (*align) return detail::run_align(al, out);
    if (*trace) return detail::run_trace(tr, out);
  } catch (const ModelError& e) {
    err << "model error: " << e.what() << "\n";
    return exit_model;
  } catch (const ParseError& e) {
    err << "model error: " << e.what() << "\n";
    return exit_model;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_data;
  }
  err << app.help();
  return exit_usage;
}

}  // namespace lattr
