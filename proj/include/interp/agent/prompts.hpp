#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "interp/model/component.hpp"
#include "interp/model/model_handle.hpp"

namespace interp::agent {

/// Contents of assets/prompts/<file>.
std::string load_prompt(const std::string& file);

/// Short fixed message from assets/prompts/messages.json.
std::string message(const std::string& key);

/// Replaces each `{key}` whose key is in `values`; other braces are kept and
/// substituted values are never rescanned.
std::string fill(std::string_view tmpl, const std::map<std::string, std::string>& values);

/// One line pair per prompt: `prompts[i] = "..."` and
/// `token_positions[i] = p ('tok')`.
std::string format_prompts_and_positions(const model::ModelHandle& m, const std::vector<std::string>& prompts,
                                         const std::vector<int>& positions);

std::string format_component(const model::ComponentRef& c);

/// Task description plus how positions are indexed.
std::string format_user_guidelines(const std::string& task_description, const std::string& position_name);

}  // namespace interp::agent
