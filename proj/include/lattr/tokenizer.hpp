#pragma once

// Byte-level BPE compatible with the GPT-2 vocabulary files (vocab.json + merges.txt).

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>
#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include "lattr/error.hpp"
#include "lattr/model.hpp"

namespace lattr {

namespace detail {

inline void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

enum class CharClass { letter, number, space, other };

inline CharClass classify(UChar32 c) {
  if (c < 0) return CharClass::other;
  if (u_isUWhiteSpace(c)) return CharClass::space;
  switch (u_charType(c)) {
    case U_UPPERCASE_LETTER:
    case U_LOWERCASE_LETTER:
    case U_TITLECASE_LETTER:
    case U_MODIFIER_LETTER:
    case U_OTHER_LETTER:
      return CharClass::letter;
    case U_DECIMAL_DIGIT_NUMBER:
    case U_LETTER_NUMBER:
    case U_OTHER_NUMBER:
      return CharClass::number;
    default:
      return CharClass::other;
  }
}

struct CodePoint {
  UChar32 value;
  std::size_t begin;  // byte offsets into the source text
  std::size_t end;
};

inline std::vector<CodePoint> decode_utf8(std::string_view text) {
  std::vector<CodePoint> cps;
  const auto* s = reinterpret_cast<const std::uint8_t*>(text.data());
  const auto n = static_cast<std::int32_t>(text.size());
  std::int32_t i = 0;
  while (i < n) {
    const std::int32_t start = i;
    UChar32 c;
    U8_NEXT(s, i, n, c);
    cps.push_back({c, static_cast<std::size_t>(start), static_cast<std::size_t>(i)});
  }
  return cps;
}

}  // namespace detail

// Splits text the way GPT-2's pre-tokenization pattern does:
//   's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
inline std::vector<std::string_view> pretokenize(std::string_view text) {
  using detail::CharClass;
  const auto cps = detail::decode_utf8(text);
  const std::size_t n = cps.size();
  std::vector<CharClass> cls(n);
  for (std::size_t i = 0; i < n; ++i) cls[i] = detail::classify(cps[i].value);

  std::vector<std::string_view> out;
  auto emit = [&](std::size_t a, std::size_t b) {
    out.push_back(text.substr(cps[a].begin, cps[b - 1].end - cps[a].begin));
  };
  auto run = [&](std::size_t from, CharClass c) {
    while (from < n && cls[from] == c) ++from;
    return from;
  };

  std::size_t i = 0;
  while (i < n) {
    if (cps[i].value == '\'' && i + 1 < n) {
      const UChar32 a = cps[i + 1].value;
      const UChar32 b = i + 2 < n ? cps[i + 2].value : 0;
      std::size_t len = 0;
      if (a == 's' || a == 't' || a == 'm' || a == 'd') {
        len = 2;
      } else if ((a == 'r' && b == 'e') || (a == 'v' && b == 'e') || (a == 'l' && b == 'l')) {
        len = 3;
      }
      if (len) {
        emit(i, i + len);
        i += len;
        continue;
      }
    }
    const bool lead_space = cps[i].value == ' ' && i + 1 < n;
    const std::size_t body = lead_space ? i + 1 : i;
    const CharClass c = cls[body];
    if (c != CharClass::space && (lead_space || body == i)) {
      std::size_t end = body;
      if (c == CharClass::other) {
        while (end < n && cls[end] == CharClass::other) ++end;
      } else {
        end = run(body, c);
      }
      emit(i, end);
      i = end;
      continue;
    }
    // Whitespace run; leave its last character for the next token when one follows.
    const std::size_t end = run(i, CharClass::space);
    if (end < n && end - i >= 2) {
      emit(i, end - 1);
      i = end - 1;
    } else {
      emit(i, end);
      i = end;
    }
  }
  return out;
}

class Tokenizer {
 public:
  static Tokenizer from_files(const std::filesystem::path& vocab_path,
                              const std::filesystem::path& merges_path) {
    std::ifstream vin(vocab_path);
    if (!vin) throw ModelError("cannot open vocabulary " + vocab_path.string());
    std::ifstream min(merges_path);
    if (!min) throw ModelError("cannot open merges " + merges_path.string());
    std::stringstream vs, ms;
    vs << vin.rdbuf();
    ms << min.rdbuf();
    return from_strings(vs.str(), ms.str());
  }

  static Tokenizer from_strings(const std::string& vocab_json, const std::string& merges_text) {
    Tokenizer t;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(vocab_json);
    } catch (const nlohmann::json::exception& e) {
      throw ModelError(std::string("vocabulary: ") + e.what());
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto id = it->get<TokenId>();
      if (id < 0) throw ModelError("vocabulary: negative id for '" + it.key() + "'");
      t.encoder_.emplace(it.key(), id);
      if (static_cast<std::size_t>(id) >= t.decoder_.size()) t.decoder_.resize(id + 1);
      t.decoder_[id] = it.key();
    }
    std::istringstream ms(merges_text);
    std::string line;
    int rank = 0;
    while (std::getline(ms, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line.rfind("#version", 0) == 0) continue;
      const auto sp = line.find(' ');
      if (sp == std::string::npos || line.find(' ', sp + 1) != std::string::npos) {
        throw ModelError("merges: malformed line '" + line + "'");
      }
      t.ranks_.emplace(line, rank++);
    }
    t.build_byte_tables();
    return t;
  }

  std::size_t vocab_size() const { return decoder_.size(); }
  std::size_t merge_count() const { return ranks_.size(); }

  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> ids;
    for (std::string_view piece : pretokenize(text)) {
      for (const auto& sym : bpe(piece)) {
        auto it = encoder_.find(sym);
        if (it == encoder_.end()) throw Error("tokenizer: symbol '" + sym + "' missing from vocabulary");
        ids.push_back(it->second);
      }
    }
    return ids;
  }

  std::string decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) out += token_bytes(id);
    return out;
  }

  // Raw bytes a single token stands for (e.g. " report").
  std::string token_bytes(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= decoder_.size() || decoder_[id].empty()) {
      throw RangeError("tokenizer: unknown token id " + std::to_string(id));
    }
    std::string out;
    for (const auto& cp : detail::decode_utf8(decoder_[id])) {
      auto it = unicode_to_byte_.find(cp.value);
      if (it == unicode_to_byte_.end()) {
        throw Error("tokenizer: vocabulary entry " + std::to_string(id) + " is not byte-level");
      }
      out.push_back(static_cast<char>(it->second));
    }
    return out;
  }

 private:
  void build_byte_tables() {
    int extra = 0;
    for (int b = 0; b < 256; ++b) {
      const bool printable = (b >= '!' && b <= '~') || (b >= 0xA1 && b <= 0xAC) || (b >= 0xAE);
      const std::uint32_t cp = printable ? static_cast<std::uint32_t>(b) : 256u + extra++;
      byte_to_unicode_[b].clear();
      detail::append_utf8(byte_to_unicode_[b], cp);
      unicode_to_byte_[static_cast<UChar32>(cp)] = static_cast<std::uint8_t>(b);
    }
  }

  std::vector<std::string> bpe(std::string_view piece) const {
    std::vector<std::string> word;
    word.reserve(piece.size());
    for (unsigned char c : piece) word.push_back(byte_to_unicode_[c]);
    while (word.size() > 1) {
      int best = std::numeric_limits<int>::max();
      std::size_t best_at = 0;
      for (std::size_t i = 0; i + 1 < word.size(); ++i) {
        auto it = ranks_.find(word[i] + ' ' + word[i + 1]);
        if (it != ranks_.end() && it->second < best) {
          best = it->second;
          best_at = i;
        }
      }
      if (best == std::numeric_limits<int>::max()) break;
      const std::string first = word[best_at], second = word[best_at + 1];
      std::vector<std::string> merged;
      merged.reserve(word.size());
      for (std::size_t i = 0; i < word.size();) {
        if (i + 1 < word.size() && word[i] == first && word[i + 1] == second) {
          merged.push_back(first + second);
          i += 2;
        } else {
          merged.push_back(word[i]);
          ++i;
        }
      }
      word = std::move(merged);
    }
    return word;
  }

  std::unordered_map<std::string, TokenId> encoder_;
  std::vector<std::string> decoder_;
  std::unordered_map<std::string, int> ranks_;
  std::array<std::string, 256> byte_to_unicode_;
  std::unordered_map<UChar32, std::uint8_t> unicode_to_byte_;
};

}  // namespace lattr
