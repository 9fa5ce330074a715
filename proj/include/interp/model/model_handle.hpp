#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "interp/error.hpp"
#include "interp/model/component.hpp"
#include "interp/model/transformer.hpp"

namespace interp::model {

struct PromptToken {
  std::string text;
  int index = 0;
  int id = 0;
  std::size_t char_begin = 0;
  std::size_t char_end = 0;
};

/// Model-ready tokenization. Indices are model sequence positions, so when
/// `bos_prepended` is set the BOS token occupies index 0.
struct TokenizedPrompt {
  std::string text;
  std::vector<PromptToken> tokens;
  bool bos_prepended = false;

  int size() const noexcept { return static_cast<int>(tokens.size()); }
  std::vector<int> ids() const;
  /// First model position of a token overlapping bytes [begin, end).
  std::optional<int> position_of_span(std::size_t begin, std::size_t end) const;
};

struct NextTokenDistribution {
  std::vector<double> probabilities;
  int position = 0;  // source position index

  int argmax() const;
  double sum() const;
};

enum class ActivationKind { kHeadOutput, kAttentionPattern, kResidualState, kMlpOutput };

/// What to record during a forward pass. `token_position` may be negative to
/// count from the end. Residual captures use only `component.layer` and read
/// the residual stream after that layer.
struct CaptureSpec {
  ComponentRef component;
  int token_position = -1;
  ActivationKind what = ActivationKind::kHeadOutput;
};

/// Overwrites one activation at one position. When `what` is unset, heads
/// patch their per-head output and MLP refs patch the MLP output.
struct InterventionSpec {
  ComponentRef component;
  int token_position = -1;
  std::vector<float> replacement;
  std::optional<ActivationKind> what;
};

struct CaptureResult {
  NextTokenDistribution distribution;
  std::vector<std::vector<float>> activations;  // parallel to the capture specs
};

enum class SwapKind { kKQ, kOV };

/// Exclusive-access handle over a shared checkpoint. Weight swaps only rebind
/// which head's matrices a slot reads, so the checkpoint itself is never
/// mutated and many handles may share it.
class ModelHandle {
 public:
  explicit ModelHandle(std::shared_ptr<const Checkpoint> checkpoint);

  const ModelConfig& config() const noexcept { return ckpt_->config; }
  const Tokenizer& tokenizer() const noexcept { return *ckpt_->tokenizer; }
  const Checkpoint& checkpoint() const noexcept { return *ckpt_; }
  std::shared_ptr<const Checkpoint> shared_checkpoint() const noexcept { return ckpt_; }

  TokenizedPrompt tokenize(std::string_view prompt) const;
  int resolve_position(const TokenizedPrompt& prompt, int position) const;
  void validate(const ComponentRef& c) const;

  NextTokenDistribution forward(const TokenizedPrompt& prompt) const;
  NextTokenDistribution forward(std::string_view prompt) const { return forward(tokenize(prompt)); }

  CaptureResult forward_with_capture(const TokenizedPrompt& prompt, std::span<const CaptureSpec> captures) const;
  CaptureResult forward_with_capture(std::string_view prompt, std::span<const CaptureSpec> captures) const {
    return forward_with_capture(tokenize(prompt), captures);
  }

  NextTokenDistribution forward_with_intervention(const TokenizedPrompt& prompt,
                                                  std::span<const InterventionSpec> interventions) const;
  NextTokenDistribution forward_with_intervention(std::string_view prompt,
                                                  std::span<const InterventionSpec> interventions) const {
    return forward_with_intervention(tokenize(prompt), interventions);
  }

  /// Residual stream entering each layer (index n_layers is the final
  /// residual) for every position. Used to resume forwards mid-model.
  std::vector<Matrix> residual_cache(const TokenizedPrompt& prompt) const;

  /// Forward pass starting at `start_layer` from a cached residual input.
  NextTokenDistribution forward_from(const TokenizedPrompt& prompt, int start_layer, const Matrix& resid_in) const;

  /// Copy of the matrices currently bound to head `c` (KQ and OV may come
  /// from different heads while a swap is active).
  HeadWeights read_head_weights(const ComponentRef& c) const;

  /// Final norm, unembedding and softmax at temperature 1.
  NextTokenDistribution unembed(std::span<const float> hidden) const;

  /// Exchanges the named weight pair between h1 and h2 while `body` runs,
  /// restoring the previous bindings afterwards (also on exceptions).
  template <class Body>
  decltype(auto) with_swapped_heads(const ComponentRef& h1, const ComponentRef& h2, SwapKind kind, Body&& body) {
    SwapGuard guard(*this, h1, h2, kind, /*one_directional=*/false);
    return std::forward<Body>(body)();
  }

  /// Variant where h1 takes h2's weights and h2 keeps its own.
  template <class Body>
  decltype(auto) with_overwritten_head(const ComponentRef& target, const ComponentRef& source, SwapKind kind,
                                       Body&& body) {
    SwapGuard guard(*this, target, source, kind, /*one_directional=*/true);
    return std::forward<Body>(body)();
  }

 private:
  struct HeadBinding {
    const HeadWeights* kq = nullptr;
    const HeadWeights* ov = nullptr;
  };

  class SwapGuard {
   public:
    SwapGuard(ModelHandle& handle, const ComponentRef& a, const ComponentRef& b, SwapKind kind, bool one_directional);
    ~SwapGuard();
    SwapGuard(const SwapGuard&) = delete;
    SwapGuard& operator=(const SwapGuard&) = delete;

   private:
    ModelHandle& handle_;
    int la_, ha_, lb_, hb_;
    HeadBinding saved_a_, saved_b_;
  };

  struct Plan;
  struct RunOutput {
    NextTokenDistribution distribution;
    std::vector<std::vector<float>> activations;
    std::vector<Matrix> resid_inputs;
  };

  RunOutput run(const TokenizedPrompt& prompt, const Plan& plan, int start_layer, const Matrix* resid_in,
                bool keep_residuals) const;

  std::shared_ptr<const Checkpoint> ckpt_;
  std::vector<std::vector<HeadBinding>> bindings_;
};

}  // namespace interp::model
