#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "interp/model/component.hpp"
#include "interp/model/model_handle.hpp"

namespace interp::tasks {
struct TaskBundle;
struct TaskExample;
}  // namespace interp::tasks

namespace interp::tools {

using model::ComponentRef;

enum class Tool { kLogitLens, kAttentionMap, kRunPatching, kTokenPositions };

std::string to_string(Tool t);
Tool parse_tool(const std::string& s);

/// A caller-named token. `id` is unset when the string is not one token.
struct NamedToken {
  std::string text;
  std::optional<int> id;
};

/// Resolves a token string as a word continuation (with a leading space)
/// first, then as given.
NamedToken resolve_token(const model::Tokenizer& tok, const std::string& text);

/// What a lens entry projects.
struct LensTarget {
  enum class Kind { kHead, kMlp, kResidual };
  Kind kind = Kind::kHead;
  ComponentRef component;

  static LensTarget of(const ComponentRef& c) { return {c.is_head() ? Kind::kHead : Kind::kMlp, c}; }
  static LensTarget residual(int layer) { return {Kind::kResidual, ComponentRef::mlp(layer)}; }
  std::string describe() const;
};

struct LensEntry {
  int prompt = 0;
  int position = 0;  // resolved, non-negative
  std::string position_token;
  LensTarget target;
  std::vector<double> probabilities;  // full vocabulary
};

struct LogitLensPayload {
  int top_k = 20;
  std::vector<NamedToken> tokens;
  std::shared_ptr<const std::vector<std::string>> vocab;  // token strings, for rendering
  std::vector<LensEntry> entries;
};

struct AttentionEntry {
  int prompt = 0;
  int query = 0;
  std::string query_token;
  ComponentRef head;
  std::vector<int> keys;
  std::vector<std::string> key_tokens;
  std::vector<double> weights;  // renormalized over non-BOS keys
  int prompt_length = 0;
};

struct AttentionPayload {
  std::vector<AttentionEntry> entries;
};

struct PatchToken {
  std::string text;
  int id = 0;
  double clean = 0.0;
  double patched = 0.0;
  double delta = 0.0;
};

struct PatchEntry {
  int pair = 0;
  ComponentRef component;
  int source_position = 0;
  int counterfactual_position = 0;
  std::string source_token;
  std::string counterfactual_token;
  std::vector<PatchToken> tokens;  // named tokens, or the top-k movers
  std::vector<std::string> untokenizable;
  std::vector<double> clean_distribution;
  std::vector<double> patched_distribution;
  std::string error;  // set when the pair could not be run
};

struct PatchingPayload {
  int top_k = 10;
  bool named = false;
  std::vector<PatchEntry> entries;
};

struct TokenPositionsPayload {
  std::vector<model::TokenizedPrompt> prompts;
};

using Payload = std::variant<LogitLensPayload, AttentionPayload, PatchingPayload, TokenPositionsPayload>;

struct Provenance {
  std::vector<std::string> prompts;
  std::vector<std::string> counterfactual_prompts;
  std::vector<int> positions;
  std::vector<int> counterfactual_positions;
  std::vector<std::string> components;
  std::uint64_t seed = 0;
  double alpha = 0.0;
};

struct ExperimentResult {
  Tool tool = Tool::kTokenPositions;
  Payload payload;
  std::string canonical_text;
  Provenance provenance;
};

/// Rendering of a payload in the fixed text format read by LLMs.
std::string render(const Payload& payload);

nlohmann::json to_json(const ExperimentResult& r);

ExperimentResult token_positions(const model::ModelHandle& m, const std::vector<std::string>& prompts);

ExperimentResult logit_lens(const model::ModelHandle& m, const std::vector<std::string>& prompts,
                            const std::vector<int>& token_positions, const std::vector<LensTarget>& targets,
                            const std::vector<std::string>& tokens = {}, int top_k = 20);

ExperimentResult logit_lens(const model::ModelHandle& m, const std::vector<std::string>& prompts,
                            const std::vector<int>& token_positions, const std::vector<ComponentRef>& components,
                            const std::vector<std::string>& tokens = {}, int top_k = 20);

ExperimentResult attention_map(const model::ModelHandle& m, const std::vector<std::string>& prompts,
                               const std::vector<int>& query_positions, const std::vector<ComponentRef>& heads);

ExperimentResult run_patching(const model::ModelHandle& m, const std::vector<std::string>& source_prompts,
                              const std::vector<std::string>& counterfactual_prompts,
                              const std::vector<int>& positions_source, const std::vector<int>& positions_cf,
                              const std::vector<ComponentRef>& components, const std::vector<std::string>& tokens = {},
                              int top_k = 10);

/// (1 - alpha) * result + alpha * permuted(result), one permutation per
/// result vector drawn from `seed`.
ExperimentResult apply_noise(const ExperimentResult& result, double alpha, std::uint64_t seed);

struct HeadAudit {
  ComponentRef head;
  int n = 0;
  double correct_attention_rate = 0.0;
  double incorrect_object_top1_rate = 0.0;
  double cf_patch_uplift_rate = 0.0;
};

/// Per-example measurements behind one head's audit rates.
struct AuditObservation {
  std::vector<int> keys;  // non-BOS key positions
  std::vector<double> weights;
  int correct_position = 0;
  int lens_top1 = -1;
  std::vector<int> distractor_ids;
  double clean_correct = 0.0;
  double patched_correct = 0.0;
};

struct AuditOptions {
  int n_examples = 500;
  /// Span naming the correct object; empty picks the task default.
  std::string correct_span;
  double uplift = 0.01;  // absolute probability increase
  int threads = 1;
};

HeadAudit summarize_audit(const ComponentRef& head, const std::vector<AuditObservation>& obs, double uplift = 0.01);

/// Span holding the correct object for each task family.
std::string default_correct_span(const std::string& task_family);

/// Attention, logit-lens and counterfactual-patching audits at the final
/// position. `counterfactuals` pairs with `task.prompts`. With more than one
/// thread, prompts are sharded over fresh handles on the same checkpoint, so
/// swaps active on `m` do not apply.
std::vector<HeadAudit> audit_heads(const model::ModelHandle& m, const tasks::TaskBundle& task,
                                   const std::vector<tasks::TaskExample>& counterfactuals,
                                   const std::vector<ComponentRef>& heads, const AuditOptions& options = {});

}  // namespace interp::tools
