#include "interp/model/transformer.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

#include "interp/error.hpp"
#include "interp/model/safetensors.hpp"
#include "interp/util/random.hpp"

namespace interp::model {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

Vector to_vector(const HostTensor& t) {
  return Eigen::Map<const Vector>(t.data.data(), static_cast<Eigen::Index>(t.data.size()));
}

Matrix to_matrix(const HostTensor& t) {
  if (t.shape.size() != 2) throw ConfigError("expected a 2-d tensor");
  return Eigen::Map<const Matrix>(t.data.data(), t.shape[0], t.shape[1]);
}

class TensorSource {
 public:
  TensorSource(const fs::path& dir, std::vector<std::string> prefixes)
      : ckpt_(dir), prefixes_(std::move(prefixes)) {}

  bool has(const std::string& name) const {
    for (const auto& p : prefixes_) {
      if (ckpt_.contains(p + name)) return true;
    }
    return false;
  }
  HostTensor get(const std::string& name) const {
    for (const auto& p : prefixes_) {
      if (ckpt_.contains(p + name)) return ckpt_.read(p + name);
    }
    throw NotFoundError("checkpoint is missing tensor " + name);
  }
  Matrix matrix(const std::string& name) const { return to_matrix(get(name)); }
  Vector vector(const std::string& name) const { return to_vector(get(name)); }
  Vector vector_or_empty(const std::string& name) const { return has(name) ? vector(name) : Vector(); }

 private:
  SafetensorsCheckpoint ckpt_;
  std::vector<std::string> prefixes_;
};

template <class T>
T value_or(const json& j, std::initializer_list<const char*> keys, T fallback) {
  for (const char* k : keys) {
    if (j.contains(k) && !j[k].is_null()) return j[k].get<T>();
  }
  return fallback;
}

ModelConfig parse_config(const json& j) {
  ModelConfig c;
  c.architecture = j.at("model_type").get<std::string>();
  if (c.architecture == "gpt2") {
    c.n_layers = j.at("n_layer").get<int>();
    c.n_heads = j.at("n_head").get<int>();
    c.d_model = j.at("n_embd").get<int>();
    c.n_ctx = value_or<int>(j, {"n_positions", "n_ctx"}, 1024);
    c.d_mlp = value_or<int>(j, {"n_inner"}, 4 * c.d_model);
    c.norm_eps = value_or<float>(j, {"layer_norm_epsilon"}, 1e-5f);
    const auto act = value_or<std::string>(j, {"activation_function"}, "gelu_new");
    c.mlp = act == "gelu" ? MlpKind::kGeluExact : MlpKind::kGeluTanh;
    c.positional = PositionalKind::kLearned;
  } else if (c.architecture == "gpt_neox") {
    c.n_layers = j.at("num_hidden_layers").get<int>();
    c.n_heads = j.at("num_attention_heads").get<int>();
    c.d_model = j.at("hidden_size").get<int>();
    c.d_mlp = j.at("intermediate_size").get<int>();
    c.n_ctx = value_or<int>(j, {"max_position_embeddings"}, 2048);
    c.norm_eps = value_or<float>(j, {"layer_norm_eps"}, 1e-5f);
    c.parallel_residual = value_or<bool>(j, {"use_parallel_residual"}, true);
    const auto act = value_or<std::string>(j, {"hidden_act"}, "gelu");
    c.mlp = (act == "gelu_new" || act == "gelu_fast") ? MlpKind::kGeluTanh : MlpKind::kGeluExact;
    c.positional = PositionalKind::kRotary;
    double pct = value_or<double>(j, {"rotary_pct", "partial_rotary_factor"}, -1.0);
    double base = value_or<double>(j, {"rotary_emb_base", "rope_theta"}, -1.0);
    if (j.contains("rope_parameters") && j["rope_parameters"].is_object()) {
      const auto& rp = j["rope_parameters"];
      if (pct < 0) pct = value_or<double>(rp, {"partial_rotary_factor"}, -1.0);
      if (base < 0) base = value_or<double>(rp, {"rope_theta"}, -1.0);
    }
    if (pct < 0) pct = 0.25;
    if (base < 0) base = 10000.0;
    c.d_head = c.d_model / c.n_heads;
    c.rotary_dim = static_cast<int>(c.d_head * pct);
    c.rotary_base = static_cast<float>(base);
  } else if (c.architecture == "llama") {
    c.n_layers = j.at("num_hidden_layers").get<int>();
    c.n_heads = j.at("num_attention_heads").get<int>();
    c.d_model = j.at("hidden_size").get<int>();
    c.d_mlp = j.at("intermediate_size").get<int>();
    c.n_ctx = value_or<int>(j, {"max_position_embeddings"}, 2048);
    c.norm = NormKind::kRmsNorm;
    c.norm_eps = value_or<float>(j, {"rms_norm_eps"}, 1e-6f);
    c.mlp = MlpKind::kSwiGlu;
    c.positional = PositionalKind::kRotary;
    const int kv = value_or<int>(j, {"num_key_value_heads"}, c.n_heads);
    if (kv != c.n_heads) throw ConfigError("grouped-query attention checkpoints are not supported");
    double base = value_or<double>(j, {"rope_theta"}, -1.0);
    if (base < 0 && j.contains("rope_parameters") && j["rope_parameters"].is_object()) {
      base = value_or<double>(j["rope_parameters"], {"rope_theta"}, -1.0);
    }
    c.rotary_base = static_cast<float>(base < 0 ? 10000.0 : base);
    c.d_head = value_or<int>(j, {"head_dim"}, c.d_model / c.n_heads);
    c.rotary_dim = c.d_head;
  } else {
    throw ConfigError("unsupported model_type '" + c.architecture + "'");
  }
  c.vocab_size = j.at("vocab_size").get<int>();
  if (c.d_head == 0) c.d_head = c.d_model / c.n_heads;
  return c;
}

// HF GPT-2 uses Conv1D weights laid out [in, out].
void load_gpt2(const TensorSource& src, const ModelConfig& c, ModelWeights& w) {
  w.embed = src.matrix("wte.weight");
  w.pos_embed = src.matrix("wpe.weight");
  const int d = c.d_model, dh = c.d_head;
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "h." + std::to_string(l) + ".";
    LayerWeights lw;
    lw.ln_attn = {src.vector(p + "ln_1.weight"), src.vector(p + "ln_1.bias")};
    lw.ln_mlp = {src.vector(p + "ln_2.weight"), src.vector(p + "ln_2.bias")};
    const Matrix qkv = src.matrix(p + "attn.c_attn.weight");
    const Vector qkv_b = src.vector(p + "attn.c_attn.bias");
    const Matrix proj = src.matrix(p + "attn.c_proj.weight");
    for (int h = 0; h < c.n_heads; ++h) {
      HeadWeights hw;
      hw.w_q = qkv.block(0, 0 * d + h * dh, d, dh);
      hw.w_k = qkv.block(0, 1 * d + h * dh, d, dh);
      hw.w_v = qkv.block(0, 2 * d + h * dh, d, dh);
      hw.b_q = qkv_b.segment(0 * d + h * dh, dh);
      hw.b_k = qkv_b.segment(1 * d + h * dh, dh);
      hw.b_v = qkv_b.segment(2 * d + h * dh, dh);
      hw.w_o = proj.block(h * dh, 0, dh, d);
      lw.heads.push_back(std::move(hw));
    }
    lw.b_o = src.vector(p + "attn.c_proj.bias");
    lw.w_in = src.matrix(p + "mlp.c_fc.weight");
    lw.b_in = src.vector(p + "mlp.c_fc.bias");
    lw.w_out = src.matrix(p + "mlp.c_proj.weight");
    lw.b_out = src.vector(p + "mlp.c_proj.bias");
    w.layers.push_back(std::move(lw));
  }
  w.ln_final = {src.vector("ln_f.weight"), src.vector("ln_f.bias")};
  if (src.has("lm_head.weight")) {
    Matrix lm = src.matrix("lm_head.weight");
    if (lm.rows() != w.embed.rows() || lm != w.embed) w.unembed = std::move(lm);
  }
}

// GPT-NeoX: Linear weights [out, in]; fused QKV rows are grouped per head.
void load_neox(const TensorSource& src, const ModelConfig& c, ModelWeights& w) {
  w.embed = src.matrix("embed_in.weight");
  const int dh = c.d_head;
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    LayerWeights lw;
    lw.ln_attn = {src.vector(p + "input_layernorm.weight"), src.vector(p + "input_layernorm.bias")};
    lw.ln_mlp = {src.vector(p + "post_attention_layernorm.weight"), src.vector(p + "post_attention_layernorm.bias")};
    const Matrix qkv = src.matrix(p + "attention.query_key_value.weight");
    const Vector qkv_b = src.vector_or_empty(p + "attention.query_key_value.bias");
    const Matrix dense = src.matrix(p + "attention.dense.weight");
    for (int h = 0; h < c.n_heads; ++h) {
      HeadWeights hw;
      const int base = h * 3 * dh;
      hw.w_q = qkv.block(base, 0, dh, c.d_model).transpose();
      hw.w_k = qkv.block(base + dh, 0, dh, c.d_model).transpose();
      hw.w_v = qkv.block(base + 2 * dh, 0, dh, c.d_model).transpose();
      if (qkv_b.size()) {
        hw.b_q = qkv_b.segment(base, dh);
        hw.b_k = qkv_b.segment(base + dh, dh);
        hw.b_v = qkv_b.segment(base + 2 * dh, dh);
      }
      hw.w_o = dense.block(0, h * dh, c.d_model, dh).transpose();
      lw.heads.push_back(std::move(hw));
    }
    lw.b_o = src.vector_or_empty(p + "attention.dense.bias");
    lw.w_in = src.matrix(p + "mlp.dense_h_to_4h.weight").transpose();
    lw.b_in = src.vector_or_empty(p + "mlp.dense_h_to_4h.bias");
    lw.w_out = src.matrix(p + "mlp.dense_4h_to_h.weight").transpose();
    lw.b_out = src.vector_or_empty(p + "mlp.dense_4h_to_h.bias");
    w.layers.push_back(std::move(lw));
  }
  w.ln_final = {src.vector("final_layer_norm.weight"), src.vector("final_layer_norm.bias")};
  w.unembed = src.matrix("embed_out.weight");
}

void load_llama(const TensorSource& src, const ModelConfig& c, ModelWeights& w) {
  w.embed = src.matrix("embed_tokens.weight");
  const int dh = c.d_head;
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    LayerWeights lw;
    lw.ln_attn = {src.vector(p + "input_layernorm.weight"), Vector()};
    lw.ln_mlp = {src.vector(p + "post_attention_layernorm.weight"), Vector()};
    const Matrix q = src.matrix(p + "self_attn.q_proj.weight");
    const Matrix k = src.matrix(p + "self_attn.k_proj.weight");
    const Matrix v = src.matrix(p + "self_attn.v_proj.weight");
    const Matrix o = src.matrix(p + "self_attn.o_proj.weight");
    for (int h = 0; h < c.n_heads; ++h) {
      HeadWeights hw;
      hw.w_q = q.block(h * dh, 0, dh, c.d_model).transpose();
      hw.w_k = k.block(h * dh, 0, dh, c.d_model).transpose();
      hw.w_v = v.block(h * dh, 0, dh, c.d_model).transpose();
      hw.w_o = o.block(0, h * dh, c.d_model, dh).transpose();
      lw.heads.push_back(std::move(hw));
    }
    lw.w_gate = src.matrix(p + "mlp.gate_proj.weight").transpose();
    lw.w_in = src.matrix(p + "mlp.up_proj.weight").transpose();
    lw.w_out = src.matrix(p + "mlp.down_proj.weight").transpose();
    w.layers.push_back(std::move(lw));
  }
  w.ln_final = {src.vector("norm.weight"), Vector()};
  if (src.has("lm_head.weight")) w.unembed = src.matrix("lm_head.weight");
}

std::shared_ptr<const Tokenizer> load_tokenizer(const fs::path& dir, const ModelConfig& c, const LoadOptions& opt) {
  if (opt.tokenizer) return opt.tokenizer;
  const std::optional<std::string> bos =
      c.architecture == "llama" ? std::optional<std::string>("<s>") : std::optional<std::string>("<|endoftext|>");
  if (fs::exists(dir / "vocab.json") && fs::exists(dir / "merges.txt")) {
    return BpeTokenizer::from_vocab_merges(dir / "vocab.json", dir / "merges.txt", bos);
  }
  if (fs::exists(dir / "tokenizer.json")) return BpeTokenizer::from_tokenizer_json(dir / "tokenizer.json", bos);
  if (opt.fallback_tokenizer_dir) {
    const auto& fb = *opt.fallback_tokenizer_dir;
    return BpeTokenizer::from_vocab_merges(fb / "vocab.json", fb / "merges.txt", bos);
  }
  throw NotFoundError("no tokenizer files in " + dir.string());
}

}  // namespace

std::shared_ptr<const Checkpoint> load_hf_checkpoint(const fs::path& dir, std::string id, const LoadOptions& options) {
  const auto config_path = dir / "config.json";
  std::ifstream in(config_path);
  if (!in) throw NotFoundError("missing " + config_path.string());
  const json j = json::parse(in);

  auto ckpt = std::make_shared<Checkpoint>();
  ckpt->id = std::move(id);
  ckpt->config = parse_config(j);
  const auto& c = ckpt->config;
  if (c.architecture == "gpt2") {
    load_gpt2(TensorSource(dir, {"transformer.", ""}), c, ckpt->weights);
  } else if (c.architecture == "gpt_neox") {
    load_neox(TensorSource(dir, {"gpt_neox.", ""}), c, ckpt->weights);
  } else {
    load_llama(TensorSource(dir, {"model.", ""}), c, ckpt->weights);
  }
  ckpt->tokenizer = load_tokenizer(dir, c, options);
  return ckpt;
}

void save_gpt2_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  const auto& c = ckpt.config;
  if (c.architecture != "gpt2") throw ConfigError("save_gpt2_checkpoint needs a gpt2 checkpoint");
  const auto& w = ckpt.weights;
  fs::create_directories(dir);
  auto mat = [](const Matrix& m) {
    HostTensor t;
    t.shape = {m.rows(), m.cols()};
    t.data.assign(m.data(), m.data() + m.size());
    return t;
  };
  auto vec = [](const Vector& v) {
    HostTensor t;
    t.shape = {v.size()};
    t.data.assign(v.data(), v.data() + v.size());
    return t;
  };
  std::map<std::string, HostTensor> out;
  out["transformer.wte.weight"] = mat(w.embed);
  out["transformer.wpe.weight"] = mat(w.pos_embed);
  const int d = c.d_model, dh = c.d_head;
  for (int l = 0; l < c.n_layers; ++l) {
    const auto& lw = w.layers[l];
    const std::string p = "transformer.h." + std::to_string(l) + ".";
    out[p + "ln_1.weight"] = vec(lw.ln_attn.weight);
    out[p + "ln_1.bias"] = vec(lw.ln_attn.bias);
    out[p + "ln_2.weight"] = vec(lw.ln_mlp.weight);
    out[p + "ln_2.bias"] = vec(lw.ln_mlp.bias);
    Matrix qkv(d, 3 * d);
    Vector qkv_b(3 * d);
    Matrix proj(d, d);
    for (int h = 0; h < c.n_heads; ++h) {
      const auto& hw = lw.heads[h];
      qkv.block(0, 0 * d + h * dh, d, dh) = hw.w_q;
      qkv.block(0, 1 * d + h * dh, d, dh) = hw.w_k;
      qkv.block(0, 2 * d + h * dh, d, dh) = hw.w_v;
      qkv_b.segment(0 * d + h * dh, dh) = hw.b_q;
      qkv_b.segment(1 * d + h * dh, dh) = hw.b_k;
      qkv_b.segment(2 * d + h * dh, dh) = hw.b_v;
      proj.block(h * dh, 0, dh, d) = hw.w_o;
    }
    out[p + "attn.c_attn.weight"] = mat(qkv);
    out[p + "attn.c_attn.bias"] = vec(qkv_b);
    out[p + "attn.c_proj.weight"] = mat(proj);
    out[p + "attn.c_proj.bias"] = vec(lw.b_o);
    out[p + "mlp.c_fc.weight"] = mat(lw.w_in);
    out[p + "mlp.c_fc.bias"] = vec(lw.b_in);
    out[p + "mlp.c_proj.weight"] = mat(lw.w_out);
    out[p + "mlp.c_proj.bias"] = vec(lw.b_out);
  }
  out["transformer.ln_f.weight"] = vec(w.ln_final.weight);
  out["transformer.ln_f.bias"] = vec(w.ln_final.bias);
  if (w.unembed.size()) out["lm_head.weight"] = mat(w.unembed);
  write_safetensors(dir / "model.safetensors", out);

  json cfg = {{"model_type", "gpt2"},
              {"n_layer", c.n_layers},
              {"n_head", c.n_heads},
              {"n_embd", c.d_model},
              {"n_positions", c.n_ctx},
              {"n_inner", c.d_mlp},
              {"vocab_size", c.vocab_size},
              {"layer_norm_epsilon", c.norm_eps},
              {"activation_function", c.mlp == MlpKind::kGeluExact ? "gelu" : "gelu_new"}};
  std::ofstream(dir / "config.json") << cfg.dump(2) << '\n';
}

std::shared_ptr<const Checkpoint> make_synthetic_gpt2(std::string id, const ModelConfig& config,
                                                      std::shared_ptr<const Tokenizer> tokenizer, std::uint64_t seed) {
  auto ckpt = std::make_shared<Checkpoint>();
  ckpt->id = std::move(id);
  ckpt->config = config;
  ckpt->config.architecture = "gpt2";
  ckpt->config.vocab_size = tokenizer->vocab_size();
  ckpt->tokenizer = std::move(tokenizer);
  auto& c = ckpt->config;
  if (c.d_head == 0) c.d_head = c.d_model / c.n_heads;

  util::Rng rng(seed);
  auto fill_m = [&](int r, int cols, double scale) {
    Matrix m(r, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.uniform(-scale, scale));
    return m;
  };
  auto fill_v = [&](int n, double center, double scale) {
    Vector v(n);
    for (int i = 0; i < n; ++i) v[i] = static_cast<float>(center + rng.uniform(-scale, scale));
    return v;
  };

  auto& w = ckpt->weights;
  const int d = c.d_model, dh = c.d_head;
  w.embed = fill_m(c.vocab_size, d, 0.5);
  w.pos_embed = fill_m(c.n_ctx, d, 0.2);
  for (int l = 0; l < c.n_layers; ++l) {
    LayerWeights lw;
    lw.ln_attn = {fill_v(d, 1.0, 0.2), fill_v(d, 0.0, 0.05)};
    lw.ln_mlp = {fill_v(d, 1.0, 0.2), fill_v(d, 0.0, 0.05)};
    for (int h = 0; h < c.n_heads; ++h) {
      HeadWeights hw;
      hw.w_q = fill_m(d, dh, 0.6);
      hw.w_k = fill_m(d, dh, 0.6);
      hw.w_v = fill_m(d, dh, 0.4);
      hw.w_o = fill_m(dh, d, 0.4);
      hw.b_q = fill_v(dh, 0.0, 0.05);
      hw.b_k = fill_v(dh, 0.0, 0.05);
      hw.b_v = fill_v(dh, 0.0, 0.05);
      lw.heads.push_back(std::move(hw));
    }
    lw.b_o = fill_v(d, 0.0, 0.02);
    lw.w_in = fill_m(d, c.d_mlp, 0.3);
    lw.b_in = fill_v(c.d_mlp, 0.0, 0.05);
    lw.w_out = fill_m(c.d_mlp, d, 0.15);
    lw.b_out = fill_v(d, 0.0, 0.02);
    w.layers.push_back(std::move(lw));
  }
  w.ln_final = {fill_v(d, 1.0, 0.2), fill_v(d, 0.0, 0.05)};
  return ckpt;
}

}  // namespace interp::model
