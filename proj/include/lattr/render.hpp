#pragma once

// Static heatmaps of per-layer contributions: self-contained HTML or ANSI
// 256-color terminal output. Red marks positive values, blue negative.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "lattr/error.hpp"
#include "lattr/explain.hpp"
#include "lattr/tensor.hpp"

namespace lattr {

enum class Normalization { per_row, global };
enum class RenderFormat { html, ansi };

struct HeatmapSpec {
  std::string title;
  std::vector<std::string> row_labels;
  std::vector<std::string> column_tokens;
  Matrix<double> values;  // rows x columns
  Normalization normalization = Normalization::per_row;

  void validate() const {
    if (values.rows() != row_labels.size() || values.cols() != column_tokens.size()) {
      throw ShapeError("heatmap: " + values.shape() + " grid for " + std::to_string(row_labels.size()) +
                       " labels and " + std::to_string(column_tokens.size()) + " tokens");
    }
  }
};

struct Rgb {
  int r = 255, g = 255, b = 255;
  bool operator==(const Rgb&) const = default;
};

// x in [-1, 1]; 0 is white, +1 full red, -1 full blue.
inline Rgb diverging_color(double x) {
  x = std::clamp(std::isfinite(x) ? x : 0.0, -1.0, 1.0);
  const int fade = static_cast<int>(std::lround(255.0 * (1.0 - std::abs(x))));
  if (x >= 0) return {255, fade, fade};
  return {fade, fade, 255};
}

// Nearest cell of the 6x6x6 color cube.
inline int ansi256(const Rgb& c) {
  auto q = [](int v) { return static_cast<int>(std::lround(v / 255.0 * 5.0)); };
  return 16 + 36 * q(c.r) + 6 * q(c.g) + q(c.b);
}

// Rows L..1 from the top, then the summed row.
inline HeatmapSpec layer_heatmap(const Explanation& e, Normalization norm = Normalization::per_row) {
  HeatmapSpec s;
  const std::size_t L = e.n_layers(), n = e.scores.size();
  s.title = to_string(e.method) + (e.foil ? " (contrastive)" : "");
  s.column_tokens = e.tokens;
  if (s.column_tokens.size() != n) {
    s.column_tokens.clear();
    for (std::size_t j = 0; j < n; ++j) s.column_tokens.push_back("#" + std::to_string(j));
  }
  s.values = Matrix<double>(L + 1, n);
  for (std::size_t r = 0; r < L; ++r) {
    const std::size_t l = L - 1 - r;
    s.row_labels.push_back("L" + std::to_string(l + 1));
    for (std::size_t j = 0; j < n; ++j) s.values(r, j) = e.per_layer(l, j);
  }
  s.row_labels.push_back("\xce\xa3");  // Σ
  for (std::size_t j = 0; j < n; ++j) s.values(L, j) = e.scores[j];
  s.normalization = norm;
  return s;
}

namespace detail {

inline std::vector<double> row_scales(const HeatmapSpec& s) {
  std::vector<double> scale(s.values.rows(), 0.0);
  double global = 0.0;
  for (std::size_t r = 0; r < s.values.rows(); ++r) {
    for (double v : s.values.row(r))
      if (std::isfinite(v)) scale[r] = std::max(scale[r], std::abs(v));
    global = std::max(global, scale[r]);
  }
  if (s.normalization == Normalization::global) std::fill(scale.begin(), scale.end(), global);
  return scale;
}

inline std::string fmt(double v, const char* spec = "%.3f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

inline std::string html_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case ' ': out += "&nbsp;"; break;
      default: out += c;
    }
  }
  return out;
}

// Makes control characters visible in a terminal cell.
inline std::string printable(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '\n') out += "\\n";
    else if (c == '\t') out += "\\t";
    else if (static_cast<unsigned char>(c) < 0x20) out += '?';
    else out += c;
  }
  return out;
}

// Display width, counting UTF-8 lead bytes only.
inline std::size_t text_width(const std::string& s) {
  std::size_t w = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++w;
  return w;
}

inline std::string pad(const std::string& s, std::size_t width) {
  const std::size_t w = text_width(s);
  return w >= width ? s : s + std::string(width - w, ' ');
}

inline std::string render_html(const HeatmapSpec& s) {
  const auto scale = row_scales(s);
  std::string out;
  out += "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>" + html_escape(s.title) +
         "</title>\n<style>\n"
         "body{font-family:monospace;margin:1em}\n"
         "table{border-collapse:collapse}\n"
         "td,th{padding:2px 6px;border:1px solid #ddd;text-align:center;font-size:12px}\n"
         "th.row{text-align:right;font-weight:normal}\n"
         "tr.sum td,tr.sum th{border-top:2px solid #333}\n"
         "</style>\n</head>\n<body>\n";
  out += "<h3>" + html_escape(s.title) + "</h3>\n<table>\n<tr><th></th>";
  for (const auto& t : s.column_tokens) out += "<th>" + html_escape(t) + "</th>";
  out += "</tr>\n";
  for (std::size_t r = 0; r < s.values.rows(); ++r) {
    const bool last = r + 1 == s.values.rows() && s.row_labels[r] == "\xce\xa3";
    out += last ? "<tr class=\"sum\">" : "<tr>";
    out += "<th class=\"row\">" + html_escape(s.row_labels[r]) + "</th>";
    for (std::size_t j = 0; j < s.values.cols(); ++j) {
      const double v = s.values(r, j);
      const Rgb c = diverging_color(scale[r] > 0 ? v / scale[r] : 0.0);
      out += "<td style=\"background:rgb(" + std::to_string(c.r) + "," + std::to_string(c.g) + "," +
             std::to_string(c.b) + ")\" title=\"" + fmt(v, "%.6g") + "\">" + fmt(v, "%.2f") + "</td>";
    }
    out += "</tr>\n";
  }
  out += "</table>\n</body>\n</html>\n";
  return out;
}

inline std::string render_ansi(const HeatmapSpec& s) {
  const auto scale = row_scales(s);
  std::size_t label_w = 0;
  for (const auto& l : s.row_labels) label_w = std::max(label_w, text_width(l));
  std::vector<std::size_t> col_w;
  for (const auto& t : s.column_tokens) col_w.push_back(std::max<std::size_t>(8, text_width(printable(t)) + 1));

  std::string out;
  if (!s.title.empty()) out += s.title + "\n";
  out += std::string(label_w + 1, ' ');
  for (std::size_t j = 0; j < s.column_tokens.size(); ++j) out += pad(printable(s.column_tokens[j]), col_w[j]);
  out += "\n";
  for (std::size_t r = 0; r < s.values.rows(); ++r) {
    out += pad(s.row_labels[r], label_w) + " ";
    for (std::size_t j = 0; j < s.values.cols(); ++j) {
      const double v = s.values(r, j);
      const Rgb c = diverging_color(scale[r] > 0 ? v / scale[r] : 0.0);
      out += "\x1b[48;5;" + std::to_string(ansi256(c)) + "m\x1b[38;5;16m" + pad(fmt(v, "%+.2f"), col_w[j]) +
             "\x1b[0m";
    }
    out += "\n";
  }
  return out;
}

}  // namespace detail

inline std::string render_heatmap(const HeatmapSpec& spec, RenderFormat format) {
  spec.validate();
  return format == RenderFormat::html ? detail::render_html(spec) : detail::render_ansi(spec);
}

}  // namespace lattr
