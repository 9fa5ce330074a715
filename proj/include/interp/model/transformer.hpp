#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "interp/model/tokenizer.hpp"

namespace interp::model {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXf;

enum class NormKind { kLayerNorm, kRmsNorm };
enum class PositionalKind { kLearned, kRotary };
enum class MlpKind { kGeluTanh, kGeluExact, kSwiGlu };

struct ModelConfig {
  std::string architecture;  // "gpt2", "gpt_neox", "llama"
  int n_layers = 0;
  int n_heads = 0;
  int d_model = 0;
  int d_head = 0;
  int d_mlp = 0;
  int n_ctx = 0;
  int vocab_size = 0;
  NormKind norm = NormKind::kLayerNorm;
  float norm_eps = 1e-5f;
  PositionalKind positional = PositionalKind::kLearned;
  int rotary_dim = 0;
  float rotary_base = 10000.0f;
  bool parallel_residual = false;
  MlpKind mlp = MlpKind::kGeluTanh;
  bool prepend_bos = true;
};

struct NormWeights {
  Vector weight;
  Vector bias;  // empty for RMSNorm
};

/// Per-head projection matrices. Query/key/value map d_model -> d_head;
/// the output projection maps d_head -> d_model. Bias vectors are empty when
/// the architecture has none.
struct HeadWeights {
  Matrix w_q, w_k, w_v, w_o;
  Vector b_q, b_k, b_v;
};

struct LayerWeights {
  NormWeights ln_attn;
  NormWeights ln_mlp;
  std::vector<HeadWeights> heads;
  Vector b_o;  // shared attention output bias (may be empty)
  Matrix w_in;    // d_model x d_mlp (up projection for SwiGLU)
  Matrix w_gate;  // SwiGLU only
  Vector b_in;
  Matrix w_out;   // d_mlp x d_model
  Vector b_out;
};

struct ModelWeights {
  Matrix embed;      // vocab x d_model
  Matrix pos_embed;  // n_ctx x d_model, empty for rotary models
  std::vector<LayerWeights> layers;
  NormWeights ln_final;
  Matrix unembed;    // vocab x d_model; empty when tied to `embed`
  Vector b_unembed;  // may be empty

  const Matrix& unembedding() const { return unembed.size() ? unembed : embed; }
};

/// Immutable loaded model: configuration, weights and tokenizer. Shared by
/// every handle opened on the same checkpoint.
struct Checkpoint {
  std::string id;
  ModelConfig config;
  ModelWeights weights;
  std::shared_ptr<const Tokenizer> tokenizer;
};

struct LoadOptions {
  /// Supplies vocab.json/merges.txt when the checkpoint carries no tokenizer.
  std::optional<std::filesystem::path> fallback_tokenizer_dir;
  /// Used instead of any tokenizer files when set.
  std::shared_ptr<const Tokenizer> tokenizer;
};

/// Loads a Hugging Face style directory (config.json + safetensors). GPT-2,
/// GPT-NeoX and LLaMA layouts are recognised from `model_type`.
std::shared_ptr<const Checkpoint> load_hf_checkpoint(const std::filesystem::path& dir, std::string id,
                                                     const LoadOptions& options = {});

/// Writes `ckpt` back out as a GPT-2 layout Hugging Face directory. Only the
/// gpt2 architecture is supported.
void save_gpt2_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);

/// Deterministic synthetic GPT-2 style model: weights derive only from
/// `seed` through a platform-independent generator.
std::shared_ptr<const Checkpoint> make_synthetic_gpt2(std::string id, const ModelConfig& config,
                                                      std::shared_ptr<const Tokenizer> tokenizer,
                                                      std::uint64_t seed);

}  // namespace interp::model
