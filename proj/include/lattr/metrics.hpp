#pragma once

// Alignment metrics: MRR of explanations against evidence masks, and AER of
// source-target alignments.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lattr/error.hpp"

namespace lattr {

// 1 / rank of the first evidence token when tokens are sorted by descending
// score; ties go to the lower index.
inline double mrr(std::span<const double> scores, const std::vector<bool>& evidence) {
  if (scores.size() != evidence.size()) {
    throw DataError("mrr: " + std::to_string(scores.size()) + " scores for an evidence mask of " +
                    std::to_string(evidence.size()));
  }
  if (std::find(evidence.begin(), evidence.end(), true) == evidence.end()) {
    throw DataError("mrr: evidence mask is empty");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  for (std::size_t r = 0; r < order.size(); ++r)
    if (evidence[order[r]]) return 1.0 / static_cast<double>(r + 1);
  return 0.0;  // unreachable
}

// Expected MRR of a uniformly random ranking of `length` tokens, `n_evidence` of
// them evidence: sum_r P(first hit at r) / r with
// P(first hit at r) = C(length - r, n_evidence - 1) / C(length, n_evidence).
inline double random_baseline_mrr(std::size_t length, std::size_t n_evidence) {
  if (n_evidence == 0 || n_evidence > length) {
    throw DataError("random_baseline_mrr: need 1..length evidence tokens");
  }
  // Ratio of binomials built incrementally to stay in double range.
  double expected = 0.0;
  double p = static_cast<double>(n_evidence) / static_cast<double>(length);  // r = 1
  for (std::size_t r = 1; r <= length - n_evidence + 1; ++r) {
    expected += p / static_cast<double>(r);
    // P(r+1) / P(r) = (length - r - n_evidence + 1) / (length - r)
    const double num = static_cast<double>(length - r) - static_cast<double>(n_evidence) + 1.0;
    const double den = static_cast<double>(length - r);
    p = den > 0 ? p * num / den : 0.0;
  }
  return expected;
}

inline double random_baseline_mrr(const std::vector<bool>& evidence) {
  return random_baseline_mrr(evidence.size(),
                             static_cast<std::size_t>(std::count(evidence.begin(), evidence.end(), true)));
}

using Link = std::pair<int, int>;  // (source index, target index)

struct AlignmentSet {
  std::set<Link> sure;
  std::set<Link> possible;
  std::set<Link> hypothesis;
};

struct AerResult {
  double value = 0.0;
  std::size_t pairs_used = 0;
  std::size_t pairs_skipped = 0;  // A and S both empty
};

// Micro-averaged AER = 1 - (|A & S| + |A & P|) / (|A| + |S|), counts pooled over pairs.
inline AerResult aer(const std::vector<AlignmentSet>& sets) {
  std::size_t a_and_s = 0, a_and_p = 0, a = 0, s = 0;
  AerResult res;
  for (const auto& p : sets) {
    if (!std::includes(p.possible.begin(), p.possible.end(), p.sure.begin(), p.sure.end())) {
      throw DataError("aer: sure links must be a subset of possible links");
    }
    if (p.hypothesis.empty() && p.sure.empty()) {
      ++res.pairs_skipped;
      continue;
    }
    ++res.pairs_used;
    for (const auto& l : p.hypothesis) {
      a_and_s += p.sure.count(l);
      a_and_p += p.possible.count(l);
    }
    a += p.hypothesis.size();
    s += p.sure.size();
  }
  res.value = (a + s) == 0 ? 0.0
                           : 1.0 - static_cast<double>(a_and_s + a_and_p) / static_cast<double>(a + s);
  return res;
}

struct EvidenceExample {
  std::vector<std::string> context;
  std::string target;
  std::string foil;
  std::vector<bool> evidence;  // one bit per context entry
  std::string dataset;
};

namespace detail {

template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("invalid JSON: ") + e.what(), no);
    }
    if (!j.is_object()) throw DataError("expected a JSON object", no);
    fn(j, no);
  }
}

inline std::set<Link> parse_links(const nlohmann::json& j, const char* key, std::size_t line) {
  std::set<Link> out;
  if (!j.contains(key)) return out;
  if (!j[key].is_array()) throw DataError(std::string("'") + key + "' must be an array", line);
  for (const auto& l : j[key]) {
    if (!l.is_array() || l.size() != 2 || !l[0].is_number_integer() || !l[1].is_number_integer() ||
        l[0].get<int>() < 0 || l[1].get<int>() < 0) {
      throw DataError(std::string("'") + key + "' entries must be [source, target] index pairs", line);
    }
    out.emplace(l[0].get<int>(), l[1].get<int>());
  }
  return out;
}

}  // namespace detail

// JSONL: {"context": [str...], "target": str, "foil": str, "evidence": [int...], "dataset": str}
inline std::vector<EvidenceExample> load_dataset(const std::filesystem::path& path) {
  std::vector<EvidenceExample> out;
  detail::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t no) {
    EvidenceExample ex;
    if (!j.contains("context") || !j["context"].is_array() || j["context"].empty()) {
      throw DataError("'context' must be a non-empty array of strings", no);
    }
    for (const auto& c : j["context"]) {
      if (!c.is_string()) throw DataError("'context' must be a non-empty array of strings", no);
      ex.context.push_back(c.get<std::string>());
    }
    for (const char* key : {"target", "foil", "dataset"}) {
      if (!j.contains(key) || !j[key].is_string()) {
        throw DataError(std::string("missing string field '") + key + "'", no);
      }
    }
    ex.target = j["target"].get<std::string>();
    ex.foil = j["foil"].get<std::string>();
    ex.dataset = j["dataset"].get<std::string>();
    if (ex.target.empty() || ex.foil.empty()) throw DataError("target and foil must be non-empty", no);
    if (ex.target == ex.foil) throw DataError("target and foil must differ", no);
    if (!j.contains("evidence") || !j["evidence"].is_array() || j["evidence"].empty()) {
      throw DataError("'evidence' must be a non-empty array of context indices", no);
    }
    ex.evidence.assign(ex.context.size(), false);
    for (const auto& e : j["evidence"]) {
      if (!e.is_number_integer() || e.get<long long>() < 0 ||
          static_cast<std::size_t>(e.get<long long>()) >= ex.context.size()) {
        throw DataError("evidence index outside the context of " + std::to_string(ex.context.size()) +
                            " tokens",
                        no);
      }
      ex.evidence[static_cast<std::size_t>(e.get<long long>())] = true;
    }
    out.push_back(std::move(ex));
  });
  return out;
}

// JSONL: {"sure": [[s,t]...], "possible": [[s,t]...], "hypothesis": [[s,t]...]}.
// Sure links are always counted as possible.
inline std::vector<AlignmentSet> load_alignments(const std::filesystem::path& path) {
  std::vector<AlignmentSet> out;
  detail::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t no) {
    if (!j.contains("sure")) throw DataError("missing 'sure' links", no);
    AlignmentSet s;
    s.sure = detail::parse_links(j, "sure", no);
    s.possible = detail::parse_links(j, "possible", no);
    s.hypothesis = detail::parse_links(j, "hypothesis", no);
    s.possible.insert(s.sure.begin(), s.sure.end());
    out.push_back(std::move(s));
  });
  return out;
}

}  // namespace lattr
