#include "interp/model/component.hpp"

#include <cctype>
#include <regex>

namespace interp::model {

std::string to_string(const ComponentRef& c) {
  return "(" + std::to_string(c.layer) + ", " + (c.head ? std::to_string(*c.head) : std::string("None")) + ")";
}

std::string describe(const ComponentRef& c) {
  if (c.head) return "layer " + std::to_string(c.layer) + " head " + std::to_string(*c.head);
  return "mlp " + std::to_string(c.layer);
}

std::optional<ComponentRef> parse_component(std::string_view text) {
  std::string s(text);
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  static const std::regex pair(R"(^\s*\(?\s*(\d+)\s*,\s*(\d+|none)\s*\)?\s*$)");
  static const std::regex lh(R"(^\s*l(\d+)\s*h(\d+)\s*$)");
  static const std::regex words(R"(^\s*layer\s*(\d+)\s*,?\s*head\s*(\d+)\s*$)");
  static const std::regex mlp(R"(^\s*mlp\s*(\d+)\s*$)");
  std::smatch m;
  if (std::regex_match(s, m, pair)) {
    const int layer = std::stoi(m[1]);
    if (m[2] == "none") return ComponentRef::mlp(layer);
    return ComponentRef::attention_head(layer, std::stoi(m[2]));
  }
  if (std::regex_match(s, m, lh) || std::regex_match(s, m, words)) {
    return ComponentRef::attention_head(std::stoi(m[1]), std::stoi(m[2]));
  }
  if (std::regex_match(s, m, mlp)) return ComponentRef::mlp(std::stoi(m[1]));
  return std::nullopt;
}

}  // namespace interp::model
