#include "interp/model/registry.hpp"

#include <cstdlib>
#include <map>
#include <mutex>

#include "interp/error.hpp"

#ifndef INTERP_SOURCE_ASSET_DIR
#define INTERP_SOURCE_ASSET_DIR "assets"
#endif

namespace interp::model {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kToySeed = 0x7031BEEFull;
const char* const kToyId = "toy-gpt2-small";

std::mutex& cache_mutex() {
  static std::mutex m;
  return m;
}

std::map<std::string, std::weak_ptr<const Checkpoint>>& cache() {
  static std::map<std::string, std::weak_ptr<const Checkpoint>> c;
  return c;
}

bool looks_like_checkpoint(const fs::path& dir) {
  return fs::exists(dir / "config.json") &&
         (fs::exists(dir / "model.safetensors") || fs::exists(dir / "model.safetensors.index.json"));
}

std::shared_ptr<const Tokenizer> gpt2_tokenizer() {
  static std::shared_ptr<const Tokenizer> tok = [] {
    const auto dir = asset_dir() / "tokenizers" / "gpt2";
    return std::shared_ptr<const Tokenizer>(
        BpeTokenizer::from_vocab_merges(dir / "vocab.json", dir / "merges.txt", "<|endoftext|>"));
  }();
  return tok;
}

}  // namespace

fs::path model_root() {
  if (const char* env = std::getenv("INTERP_MODEL_DIR"); env && *env) return fs::path(env);
  const char* home = std::getenv("HOME");
  return fs::path(home ? home : ".") / ".cache" / "interp-workbench" / "models";
}

fs::path asset_dir() {
  if (const char* env = std::getenv("INTERP_ASSET_DIR"); env && *env) return fs::path(env);
  return fs::path(INTERP_SOURCE_ASSET_DIR);
}

std::vector<std::string> registered_models() {
  return {kToyId, "gpt2-small", "gpt2-medium", "pythia-160m", "llama-7b"};
}

ModelConfig toy_gpt2_config() {
  ModelConfig c;
  c.architecture = "gpt2";
  c.n_layers = 12;
  c.n_heads = 12;
  c.d_head = 4;
  c.d_model = 48;
  c.d_mlp = 192;
  c.n_ctx = 256;
  c.mlp = MlpKind::kGeluTanh;
  return c;
}

bool checkpoint_available(const std::string& id) {
  if (id == kToyId) return true;
  if (looks_like_checkpoint(fs::path(id))) return true;
  return looks_like_checkpoint(model_root() / id);
}

std::shared_ptr<const Checkpoint> load_checkpoint(const std::string& id) {
  std::lock_guard<std::mutex> lock(cache_mutex());
  if (auto it = cache().find(id); it != cache().end()) {
    if (auto live = it->second.lock()) return live;
  }
  std::shared_ptr<const Checkpoint> ckpt;
  if (id == kToyId) {
    ckpt = make_synthetic_gpt2(id, toy_gpt2_config(), gpt2_tokenizer(), kToySeed);
  } else {
    fs::path dir = looks_like_checkpoint(fs::path(id)) ? fs::path(id) : model_root() / id;
    if (!looks_like_checkpoint(dir)) {
      throw NotFoundError("checkpoint '" + id + "' not found under " + model_root().string() +
                          " (set INTERP_MODEL_DIR)");
    }
    LoadOptions opt;
    if (id.rfind("gpt2", 0) == 0) opt.fallback_tokenizer_dir = asset_dir() / "tokenizers" / "gpt2";
    ckpt = load_hf_checkpoint(dir, id, opt);
  }
  cache()[id] = ckpt;
  return ckpt;
}

}  // namespace interp::model
