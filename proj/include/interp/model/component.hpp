#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace interp::model {

/// Address of an attention head (layer, head) or, when `head` is empty, the
/// MLP of `layer`.
struct ComponentRef {
  int layer = 0;
  std::optional<int> head;

  static ComponentRef attention_head(int layer, int head) { return {layer, head}; }
  static ComponentRef mlp(int layer) { return {layer, std::nullopt}; }

  bool is_head() const noexcept { return head.has_value(); }
  bool is_mlp() const noexcept { return !head.has_value(); }

  friend bool operator==(const ComponentRef&, const ComponentRef&) = default;
  friend auto operator<=>(const ComponentRef& a, const ComponentRef& b) {
    if (auto c = a.layer <=> b.layer; c != 0) return c;
    // MLPs order after every head of the same layer.
    const int ah = a.head.value_or(1 << 30);
    const int bh = b.head.value_or(1 << 30);
    return ah <=> bh;
  }
};

/// "(9, 9)" or "(8, None)".
std::string to_string(const ComponentRef& c);

/// Human form used in prompts: "layer 9 head 9" / "mlp 8".
std::string describe(const ComponentRef& c);

/// Parses "(9, 9)", "9,9", "(8, None)", "L9H9", "layer 9 head 9", "mlp 8", "MLP8".
std::optional<ComponentRef> parse_component(std::string_view text);

}  // namespace interp::model

template <>
struct std::hash<interp::model::ComponentRef> {
  std::size_t operator()(const interp::model::ComponentRef& c) const noexcept {
    return std::hash<long long>{}(static_cast<long long>(c.layer) * 100003LL + c.head.value_or(-1));
  }
};
