#pragma once

// GPT-2-class Pre-LN decoder weights. All linear maps are stored (in x out),
// so a layer applies as `x * W + b` on row vectors.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lattr/error.hpp"
#include "lattr/safetensors.hpp"
#include "lattr/tensor.hpp"

namespace lattr {

using TokenId = std::int32_t;

struct ModelConfig {
  std::size_t n_layer = 0;
  std::size_t n_head = 0;
  std::size_t d_model = 0;
  std::size_t d_mlp = 0;
  std::size_t vocab_size = 0;
  std::size_t n_positions = 0;
  double ln_eps = 1e-5;

  std::size_t d_head() const { return d_model / n_head; }

  void validate() const {
    if (n_layer < 1 || n_head < 1 || d_model < 1 || d_mlp < 1 || vocab_size < 1 ||
        n_positions < 1) {
      throw ModelError("model config: all counts must be >= 1");
    }
    if (d_model % n_head != 0) {
      throw ModelError("model config: n_embd " + std::to_string(d_model) +
                       " is not divisible by n_head " + std::to_string(n_head));
    }
    if (!(ln_eps > 0.0)) throw ModelError("model config: layer_norm_epsilon must be positive");
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    auto need = [&](const char* key) -> const nlohmann::json& {
      if (!j.contains(key) || j[key].is_null()) {
        throw ModelError(std::string("model config: missing key '") + key + "'");
      }
      return j[key];
    };
    ModelConfig c;
    try {
      c.n_layer = need("n_layer").get<std::size_t>();
      c.n_head = need("n_head").get<std::size_t>();
      c.d_model = need("n_embd").get<std::size_t>();
      c.n_positions = need("n_positions").get<std::size_t>();
      c.vocab_size = need("vocab_size").get<std::size_t>();
      c.ln_eps = need("layer_norm_epsilon").get<double>();
      c.d_mlp = (j.contains("n_inner") && !j["n_inner"].is_null())
                    ? j["n_inner"].get<std::size_t>()
                    : 4 * c.d_model;
    } catch (const nlohmann::json::exception& e) {
      throw ModelError(std::string("model config: ") + e.what());
    }
    if (j.contains("activation_function")) {
      const auto act = j["activation_function"].get<std::string>();
      if (act != "gelu_new" && act != "gelu_pytorch_tanh" && act != "gelu_fast") {
        throw ModelError("model config: unsupported activation '" + act + "'");
      }
    }
    auto flag = [&](const char* key, bool fallback) {
      return j.contains(key) && j[key].is_boolean() ? j[key].get<bool>() : fallback;
    };
    if (!flag("scale_attn_weights", true) || flag("scale_attn_by_inverse_layer_idx", false)) {
      throw ModelError("model config: only 1/sqrt(d_head) attention scaling is supported");
    }
    c.validate();
    return c;
  }

  nlohmann::json to_json() const {
    return {{"model_type", "gpt2"},
            {"n_layer", n_layer},
            {"n_head", n_head},
            {"n_embd", d_model},
            {"n_inner", d_mlp},
            {"n_positions", n_positions},
            {"vocab_size", vocab_size},
            {"layer_norm_epsilon", ln_eps},
            {"activation_function", "gelu_new"}};
  }

  static ModelConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ModelError("cannot open model config " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ModelError("model config " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }
};

template <std::floating_point T>
struct LayerWeights {
  Vector<T> ln1_gamma, ln1_beta;
  Matrix<T> w_q, w_k, w_v, w_o;  // d x d
  Vector<T> b_q, b_k, b_v, b_o;
  Vector<T> ln2_gamma, ln2_beta;
  Matrix<T> w_1;  // d x d_mlp
  Vector<T> b_1;
  Matrix<T> w_2;  // d_mlp x d; row i is the value vector of key i
  Vector<T> b_2;

  Matrix<T> head_w_v(std::size_t h, std::size_t d_head) const {
    return w_v.column_block(h * d_head, d_head);
  }
  Matrix<T> head_w_o(std::size_t h, std::size_t d_head) const {
    return w_o.row_block(h * d_head, d_head);
  }
};

template <std::floating_point T>
struct ModelBundle {
  ModelConfig config;
  Matrix<T> token_embedding;     // |V| x d
  Matrix<T> position_embedding;  // n_positions x d
  std::vector<LayerWeights<T>> layers;
  Vector<T> lnf_gamma, lnf_beta;
  // Separate output projection stored as |V| x d rows; empty when tied to the embedding.
  std::optional<Matrix<T>> lm_head;

  bool tied() const { return !lm_head.has_value(); }

  // Column w of the unembedding U (d x |V|).
  std::span<const T> unembedding_column(TokenId w) const {
    if (w < 0 || static_cast<std::size_t>(w) >= config.vocab_size) {
      throw RangeError("token id " + std::to_string(w) + " outside vocabulary of " +
                       std::to_string(config.vocab_size));
    }
    return lm_head ? lm_head->row(static_cast<std::size_t>(w))
                   : token_embedding.row(static_cast<std::size_t>(w));
  }
};

// Where each GPT-2 parameter lives in a checkpoint. `{}` is replaced by the layer index.
// Entries flagged `linear_layout` are stored (out x in) and transposed on load.
struct CheckpointNaming {
  struct Entry {
    std::string pattern;
    bool linear_layout = false;
  };
  std::vector<std::string> prefixes{"", "transformer.", "model."};
  Entry wte{"wte.weight"}, wpe{"wpe.weight"};
  Entry ln1_w{"h.{}.ln_1.weight"}, ln1_b{"h.{}.ln_1.bias"};
  Entry qkv_w{"h.{}.attn.c_attn.weight"}, qkv_b{"h.{}.attn.c_attn.bias"};
  Entry proj_w{"h.{}.attn.c_proj.weight"}, proj_b{"h.{}.attn.c_proj.bias"};
  Entry ln2_w{"h.{}.ln_2.weight"}, ln2_b{"h.{}.ln_2.bias"};
  Entry fc_w{"h.{}.mlp.c_fc.weight"}, fc_b{"h.{}.mlp.c_fc.bias"};
  Entry out_w{"h.{}.mlp.c_proj.weight"}, out_b{"h.{}.mlp.c_proj.bias"};
  Entry lnf_w{"ln_f.weight"}, lnf_b{"ln_f.bias"};
  Entry lm_head{"lm_head.weight", true};

  static std::string expand(const std::string& pattern, std::size_t layer) {
    std::string s = pattern;
    if (auto pos = s.find("{}"); pos != std::string::npos) s.replace(pos, 2, std::to_string(layer));
    return s;
  }
};

namespace detail {

template <std::floating_point T>
class BundleReader {
 public:
  BundleReader(const SafetensorsFile& file, const CheckpointNaming& naming)
      : file_(file), naming_(naming) {
    for (const auto& p : naming_.prefixes) {
      if (file_.contains(p + naming_.wte.pattern)) {
        prefix_ = p;
        return;
      }
    }
    throw MissingTensorError(naming_.wte.pattern);
  }

  std::string resolve(const std::string& name) const {
    if (file_.contains(prefix_ + name)) return prefix_ + name;
    if (file_.contains(name)) return name;
    throw MissingTensorError(prefix_ + name);
  }

  bool has(const CheckpointNaming::Entry& e, std::size_t layer = 0) const {
    const auto n = CheckpointNaming::expand(e.pattern, layer);
    return file_.contains(prefix_ + n) || file_.contains(n);
  }

  std::vector<T> raw(const std::string& full, std::vector<std::size_t> expected) const {
    const TensorInfo& ti = file_.info(full);
    if (ti.shape != expected) {
      throw TensorShapeError("tensor '" + full + "' has shape " + shape_str(ti.shape) +
                             ", expected " + shape_str(expected));
    }
    auto v = file_.read<T>(full);
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!std::isfinite(v[i])) {
        throw NonFiniteWeightError("tensor '" + full + "' has a non-finite value at flat index " +
                                   std::to_string(i));
      }
    }
    return v;
  }

  Vector<T> vector(const CheckpointNaming::Entry& e, std::size_t n, std::size_t layer = 0) const {
    return raw(resolve(CheckpointNaming::expand(e.pattern, layer)), {n});
  }

  // Returns an (in x out) matrix.
  Matrix<T> matrix(const CheckpointNaming::Entry& e, std::size_t in, std::size_t out,
                   std::size_t layer = 0) const {
    const auto full = resolve(CheckpointNaming::expand(e.pattern, layer));
    if (e.linear_layout) return Matrix<T>(out, in, raw(full, {out, in})).transposed();
    return Matrix<T>(in, out, raw(full, {in, out}));
  }

 private:
  static std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
  }

  const SafetensorsFile& file_;
  const CheckpointNaming& naming_;
  std::string prefix_;
};

}  // namespace detail

template <std::floating_point T>
ModelBundle<T> load_bundle(const SafetensorsFile& file, const ModelConfig& config,
                           const CheckpointNaming& naming = {}) {
  config.validate();
  detail::BundleReader<T> rd(file, naming);
  const std::size_t d = config.d_model, V = config.vocab_size, F = config.d_mlp;
  ModelBundle<T> b;
  b.config = config;
  b.token_embedding = Matrix<T>(V, d, rd.raw(rd.resolve(naming.wte.pattern), {V, d}));
  b.position_embedding =
      Matrix<T>(config.n_positions, d, rd.raw(rd.resolve(naming.wpe.pattern), {config.n_positions, d}));
  b.layers.resize(config.n_layer);
  for (std::size_t l = 0; l < config.n_layer; ++l) {
    auto& L = b.layers[l];
    L.ln1_gamma = rd.vector(naming.ln1_w, d, l);
    L.ln1_beta = rd.vector(naming.ln1_b, d, l);
    const Matrix<T> qkv = rd.matrix(naming.qkv_w, d, 3 * d, l);
    const Vector<T> qkv_b = rd.vector(naming.qkv_b, 3 * d, l);
    L.w_q = qkv.column_block(0, d);
    L.w_k = qkv.column_block(d, d);
    L.w_v = qkv.column_block(2 * d, d);
    L.b_q.assign(qkv_b.begin(), qkv_b.begin() + d);
    L.b_k.assign(qkv_b.begin() + d, qkv_b.begin() + 2 * d);
    L.b_v.assign(qkv_b.begin() + 2 * d, qkv_b.end());
    L.w_o = rd.matrix(naming.proj_w, d, d, l);
    L.b_o = rd.vector(naming.proj_b, d, l);
    L.ln2_gamma = rd.vector(naming.ln2_w, d, l);
    L.ln2_beta = rd.vector(naming.ln2_b, d, l);
    L.w_1 = rd.matrix(naming.fc_w, d, F, l);
    L.b_1 = rd.vector(naming.fc_b, F, l);
    L.w_2 = rd.matrix(naming.out_w, F, d, l);
    L.b_2 = rd.vector(naming.out_b, d, l);
  }
  b.lnf_gamma = rd.vector(naming.lnf_w, d);
  b.lnf_beta = rd.vector(naming.lnf_b, d);
  if (rd.has(naming.lm_head)) {
    // Stored (|V| x d), which is already the row-per-token layout of U^T.
    Matrix<T> head(V, d, rd.raw(rd.resolve(naming.lm_head.pattern), {V, d}));
    if (!(head == b.token_embedding)) b.lm_head = std::move(head);
  }
  return b;
}

template <std::floating_point T>
ModelBundle<T> load_bundle(const std::filesystem::path& weights_path,
                           const std::filesystem::path& config_path,
                           const CheckpointNaming& naming = {}) {
  if (!std::filesystem::exists(weights_path)) {
    throw ModelError("weight file not found: " + weights_path.string());
  }
  const auto config = ModelConfig::load(config_path);
  const auto file = SafetensorsFile::open(weights_path);
  return load_bundle<T>(file, config, naming);
}

// Writes `config.json` and `model.safetensors` with GPT-2 tensor names.
template <std::floating_point T>
void save_bundle(const ModelBundle<T>& b, const std::filesystem::path& dir, bool f64 = false) {
  std::filesystem::create_directories(dir);
  const std::size_t d = b.config.d_model;
  auto vec = [](std::span<const T> s) { return std::vector<double>(s.begin(), s.end()); };
  auto mat = [&](const Matrix<T>& m) -> NamedTensor {
    return {"", {m.rows(), m.cols()}, vec(m.data())};
  };
  std::vector<NamedTensor> ts;
  auto add_mat = [&](std::string name, const Matrix<T>& m) {
    auto t = mat(m);
    t.name = std::move(name);
    ts.push_back(std::move(t));
  };
  auto add_vec = [&](std::string name, const Vector<T>& v) {
    ts.push_back({std::move(name), {v.size()}, vec(v)});
  };
  add_mat("wte.weight", b.token_embedding);
  add_mat("wpe.weight", b.position_embedding);
  for (std::size_t l = 0; l < b.layers.size(); ++l) {
    const auto& L = b.layers[l];
    const auto p = "h." + std::to_string(l) + ".";
    add_vec(p + "ln_1.weight", L.ln1_gamma);
    add_vec(p + "ln_1.bias", L.ln1_beta);
    Matrix<T> qkv(d, 3 * d);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        qkv(r, c) = L.w_q(r, c);
        qkv(r, d + c) = L.w_k(r, c);
        qkv(r, 2 * d + c) = L.w_v(r, c);
      }
    add_mat(p + "attn.c_attn.weight", qkv);
    Vector<T> qkv_b(L.b_q);
    qkv_b.insert(qkv_b.end(), L.b_k.begin(), L.b_k.end());
    qkv_b.insert(qkv_b.end(), L.b_v.begin(), L.b_v.end());
    add_vec(p + "attn.c_attn.bias", qkv_b);
    add_mat(p + "attn.c_proj.weight", L.w_o);
    add_vec(p + "attn.c_proj.bias", L.b_o);
    add_vec(p + "ln_2.weight", L.ln2_gamma);
    add_vec(p + "ln_2.bias", L.ln2_beta);
    add_mat(p + "mlp.c_fc.weight", L.w_1);
    add_vec(p + "mlp.c_fc.bias", L.b_1);
    add_mat(p + "mlp.c_proj.weight", L.w_2);
    add_vec(p + "mlp.c_proj.bias", L.b_2);
  }
  add_vec("ln_f.weight", b.lnf_gamma);
  add_vec("ln_f.bias", b.lnf_beta);
  if (b.lm_head) add_mat("lm_head.weight", *b.lm_head);
  write_safetensors(dir / "model.safetensors", ts, f64);
  std::ofstream(dir / "config.json") << b.config.to_json().dump(2) << "\n";
}

}  // namespace lattr
