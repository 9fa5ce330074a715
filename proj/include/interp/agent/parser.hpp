#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "interp/model/component.hpp"
#include "interp/tools/tools.hpp"

namespace interp::agent {

using model::ComponentRef;

/// Argument expression accepted in agent tool calls: literals, lists,
/// tuples and `prompts[i]` / `token_positions[i]` references.
struct Expr {
  enum class Kind { kNone, kBool, kInt, kString, kList, kTuple, kPromptRef, kPositionRef };
  Kind kind = Kind::kNone;
  long long integer = 0;  // int value, bool as 0/1, or reference index
  std::string text;
  std::vector<Expr> items;

  friend bool operator==(const Expr&, const Expr&) = default;
};

struct Argument {
  std::string keyword;  // empty for positional
  Expr value;
  friend bool operator==(const Argument&, const Argument&) = default;
};

struct ToolCallRequest {
  std::string function;  // without the optional "mi." prefix
  bool mi_prefix = false;
  std::vector<Argument> arguments;

  /// Unset for an unknown function name.
  std::optional<tools::Tool> tool() const;
  friend bool operator==(const ToolCallRequest&, const ToolCallRequest&) = default;
};

/// Parses one call. Throws ValidationError on anything outside the grammar.
ToolCallRequest parse_call(std::string_view source);
/// Parses a block of calls separated by newlines or semicolons; `#` starts a
/// comment and code fences are ignored.
std::vector<ToolCallRequest> parse_calls(std::string_view block);

std::string render(const Expr& e);
std::string render_call(const ToolCallRequest& call);

struct ExperimentRequest {
  std::string description;
  std::string source;  // text of the <experiment> block, or of one call in it
  std::optional<ToolCallRequest> call;
  std::string error;  // parse failure or unknown function
};

struct FinalHypothesis {
  ComponentRef component;
  std::string text;  // contents of <final_hypothesis>
  std::string summarized_description;
  std::string evidence;  // text with the summarized description removed
};

struct AgentTurn {
  enum class Kind { kExperiments, kFinal };
  Kind kind = Kind::kExperiments;
  std::vector<ExperimentRequest> experiments;
  FinalHypothesis final;
};

/// Experiments take precedence when a turn has both tags with at least one
/// experiment. Throws ProtocolError when neither branch is present.
AgentTurn parse_agent_turn(std::string_view text);

std::optional<FinalHypothesis> parse_final(std::string_view text);

/// Contents of the first `<name>` element (any of `names`), up to its
/// closing tag or the end of the text.
std::optional<std::string> extract_tag(std::string_view text, const std::vector<std::string>& names);
std::vector<std::string> extract_all(std::string_view text, const std::string& name);

/// Arguments resolved against a run's prompt set.
struct CallContext {
  std::vector<std::string> prompts;
  std::vector<int> positions;
  ComponentRef component;  // default for omitted layer_head_pairs
};

struct BoundCall {
  tools::Tool tool = tools::Tool::kTokenPositions;
  std::vector<std::string> prompts;
  std::vector<int> positions;
  std::vector<std::string> counterfactual_prompts;
  std::vector<int> counterfactual_positions;
  std::vector<ComponentRef> components;
  std::vector<std::string> tokens;
  int top_k = 0;
};

/// Python-style positional/keyword binding against the tool signature.
/// Throws ValidationError with a message meant for the agent.
BoundCall bind(const ToolCallRequest& call, const CallContext& context);

tools::ExperimentResult execute(const model::ModelHandle& m, const BoundCall& call);

}  // namespace interp::agent
