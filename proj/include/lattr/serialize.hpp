#pragma once

// JSON form of an Explanation.
//
// {"method": "alti-logit", "target": 468, "foil": 423 | null,
//  "tokens": [...], "scores": [...], "per_layer": [[...] x L],
//  "buckets": {"attn_bias": [...], "mlp": [...], "embedding": x, "final_ln_bias": x},
//  "total": x}

#include <string>

#include <nlohmann/json.hpp>

#include "lattr/error.hpp"
#include "lattr/explain.hpp"

namespace lattr {

inline nlohmann::json to_json(const Explanation& e) {
  nlohmann::json j;
  j["method"] = to_string(e.method);
  j["target"] = e.target;
  j["foil"] = e.foil ? nlohmann::json(*e.foil) : nlohmann::json(nullptr);
  j["tokens"] = e.tokens;
  j["scores"] = e.scores;
  auto rows = nlohmann::json::array();
  for (std::size_t l = 0; l < e.per_layer.rows(); ++l) {
    const auto r = e.per_layer.row(l);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  j["per_layer"] = std::move(rows);
  j["buckets"] = {{"attn_bias", e.attn_bias},
                  {"mlp", e.mlp},
                  {"embedding", e.embedding},
                  {"final_ln_bias", e.final_ln_bias}};
  j["total"] = e.total();
  return j;
}

inline Explanation explanation_from_json(const nlohmann::json& j) {
  try {
    Explanation e;
    e.method = method_from_string(j.at("method").get<std::string>());
    e.target = j.at("target").get<TokenId>();
    if (!j.at("foil").is_null()) e.foil = j.at("foil").get<TokenId>();
    e.tokens = j.at("tokens").get<std::vector<std::string>>();
    e.scores = j.at("scores").get<std::vector<double>>();
    const auto& rows = j.at("per_layer");
    e.per_layer = Matrix<double>(rows.size(), rows.empty() ? e.scores.size() : rows[0].size());
    for (std::size_t l = 0; l < rows.size(); ++l) {
      const auto r = rows[l].get<std::vector<double>>();
      if (r.size() != e.per_layer.cols()) throw DataError("explanation: ragged per_layer rows");
      std::copy(r.begin(), r.end(), e.per_layer.row(l).begin());
    }
    const auto& b = j.at("buckets");
    e.attn_bias = b.at("attn_bias").get<std::vector<double>>();
    e.mlp = b.at("mlp").get<std::vector<double>>();
    e.embedding = b.at("embedding").get<double>();
    e.final_ln_bias = b.at("final_ln_bias").get<double>();
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("explanation: ") + ex.what());
  }
}

// Token strings may hold partial UTF-8 sequences; those bytes are replaced on output.
inline std::string dump_json(const nlohmann::json& j, int indent = 2) {
  return j.dump(indent, ' ', false, nlohmann::json::error_handler_t::replace);
}

}  // namespace lattr
