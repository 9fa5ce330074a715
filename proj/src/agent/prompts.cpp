#include "interp/agent/prompts.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <mutex>
#include <sstream>

#include "interp/error.hpp"
#include "interp/model/registry.hpp"
#include "interp/util/text.hpp"

namespace interp::agent {

std::string load_prompt(const std::string& file) {
  const auto path = model::asset_dir() / "prompts" / file;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing prompt template " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string message(const std::string& key) {
  static std::once_flag once;
  static nlohmann::json messages;
  std::call_once(once, [] { messages = nlohmann::json::parse(load_prompt("messages.json")); });
  if (!messages.contains(key)) throw NotFoundError("no prompt message '" + key + "'");
  return messages[key].get<std::string>();
}

std::string fill(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const auto key = std::string(tmpl.substr(i + 1, close - i - 1));
        if (auto it = values.find(key); it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

std::string format_prompts_and_positions(const model::ModelHandle& m, const std::vector<std::string>& prompts,
                                         const std::vector<int>& positions) {
  if (prompts.size() != positions.size()) throw ValidationError("prompts and positions differ in length");
  std::string out;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto tp = m.tokenize(prompts[i]);
    const int pos = m.resolve_position(tp, positions[i]);
    if (i) out += "\n";
    out += "prompts[" + std::to_string(i) + "] = " + util::quote(prompts[i], '"') + "\n";
    out += "token_positions[" + std::to_string(i) + "] = " + std::to_string(pos) + " (" +
           util::quote(tp.tokens[static_cast<std::size_t>(pos)].text) + ")\n";
  }
  return out;
}

std::string format_component(const model::ComponentRef& c) {
  if (c.is_head()) {
    return "Attention head " + std::to_string(*c.head) + " of layer " + std::to_string(c.layer) +
           ", written (" + std::to_string(c.layer) + ", " + std::to_string(*c.head) + ") in layer_head_pairs.";
  }
  return "The MLP of layer " + std::to_string(c.layer) + ", written (" + std::to_string(c.layer) +
         ", None) in layer_head_pairs.";
}

std::string format_user_guidelines(const std::string& task_description, const std::string& position_name) {
  return "Task: " + task_description + "\n\nThe token position of interest is the " + position_name +
         " token of each prompt, listed in token_positions. Token indices count the beginning-of-sequence token as "
         "index 0.";
}

}  // namespace interp::agent
