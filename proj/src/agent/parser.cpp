#include "interp/agent/parser.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "interp/error.hpp"
#include "interp/util/text.hpp"

namespace interp::agent {

namespace {

constexpr int kMaxDepth = 32;
constexpr long long kMaxInt = 1'000'000'000'000LL;

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

void append_utf8(std::string& out, unsigned long cp) {
  if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) throw ValidationError("invalid unicode escape");
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

class CallParser {
 public:
  explicit CallParser(std::string_view s) : s_(s) {}

  bool at_end() {
    skip_separators();
    return i_ >= s_.size();
  }

  ToolCallRequest call() {
    skip_space();
    ToolCallRequest out;
    std::string name = ident();
    skip_space();
    if (peek() == '.') {
      if (name != "mi") throw ValidationError("unsupported object '" + name + "', only mi.<function> is allowed");
      ++i_;
      skip_space();
      out.mi_prefix = true;
      name = ident();
      skip_space();
    }
    out.function = name;
    expect('(');
    skip_space();
    bool keyword_seen = false;
    while (peek() != ')') {
      Argument arg;
      const auto save = i_;
      if (ident_start(peek())) {
        auto word = ident();
        skip_space();
        if (peek() == '=' && peek(1) != '=') {
          ++i_;
          arg.keyword = word;
        } else {
          i_ = save;
        }
      }
      if (arg.keyword.empty() && keyword_seen) throw ValidationError("positional argument follows keyword argument");
      if (!arg.keyword.empty()) keyword_seen = true;
      arg.value = expr(0);
      out.arguments.push_back(std::move(arg));
      skip_space();
      if (peek() == ',') {
        ++i_;
        skip_space();
        continue;
      }
      if (peek() != ')') throw error("expected ',' or ')'");
    }
    ++i_;
    return out;
  }

  void finish_statement() {
    skip_space_inline();
    if (i_ < s_.size() && s_[i_] != '\n' && s_[i_] != ';' && s_[i_] != '#' && s_[i_] != '\r') {
      throw error("unexpected text after call");
    }
  }

 private:
  char peek(std::size_t ahead = 0) const { return i_ + ahead < s_.size() ? s_[i_ + ahead] : '\0'; }

  ValidationError error(const std::string& what) const {
    return ValidationError(what + " at offset " + std::to_string(i_));
  }

  void skip_comment() {
    while (i_ < s_.size() && s_[i_] != '\n') ++i_;
  }

  void skip_space() {
    while (i_ < s_.size()) {
      if (std::isspace(static_cast<unsigned char>(s_[i_]))) {
        ++i_;
      } else if (s_[i_] == '#') {
        skip_comment();
      } else {
        break;
      }
    }
  }

  void skip_space_inline() {
    while (i_ < s_.size() && (s_[i_] == ' ' || s_[i_] == '\t')) ++i_;
    if (peek() == '#') skip_comment();
  }

  void skip_separators() {
    while (i_ < s_.size()) {
      skip_space();
      if (peek() == ';') {
        ++i_;
      } else if (s_.substr(i_, 3) == "```") {
        skip_comment();
      } else {
        break;
      }
    }
  }

  void expect(char c) {
    if (peek() != c) throw error(std::string("expected '") + c + "'");
    ++i_;
  }

  std::string ident() {
    if (!ident_start(peek())) throw error("expected a name");
    const auto b = i_;
    while (ident_char(peek())) ++i_;
    return std::string(s_.substr(b, i_ - b));
  }

  long long integer() {
    bool neg = false;
    if (peek() == '-') {
      neg = true;
      ++i_;
      skip_space();
    }
    if (!std::isdigit(static_cast<unsigned char>(peek()))) throw error("expected an integer");
    long long v = 0;
    while (std::isdigit(static_cast<unsigned char>(peek()))) {
      v = v * 10 + (s_[i_++] - '0');
      if (v > kMaxInt) throw error("integer out of range");
    }
    if (peek() == '.' || peek() == 'e' || peek() == 'E') throw error("only integer numbers are supported");
    if (ident_char(peek())) throw error("malformed number");
    return neg ? -v : v;
  }

  unsigned long hex(int digits) {
    unsigned long v = 0;
    for (int k = 0; k < digits; ++k) {
      const char c = peek();
      if (!std::isxdigit(static_cast<unsigned char>(c))) throw error("bad hex escape");
      v = v * 16 + static_cast<unsigned long>(std::isdigit(static_cast<unsigned char>(c)) ? c - '0'
                                                                                          : std::tolower(c) - 'a' + 10);
      ++i_;
    }
    return v;
  }

  std::string string_literal() {
    const char q = s_[i_++];
    if (peek() == q && peek(1) == q) throw error("triple-quoted strings are not supported");
    std::string out;
    while (true) {
      if (i_ >= s_.size()) throw error("unterminated string");
      const char c = s_[i_++];
      if (c == q) break;
      if (c == '\n') throw error("newline in string");
      if (c != '\\') {
        out += c;
        continue;
      }
      if (i_ >= s_.size()) throw error("unterminated string");
      const char e = s_[i_++];
      switch (e) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        case '0': out += '\0'; break;
        case 'a': out += '\a'; break;
        case 'b': out += '\b'; break;
        case 'f': out += '\f'; break;
        case 'v': out += '\v'; break;
        case '\\': out += '\\'; break;
        case '\'': out += '\''; break;
        case '"': out += '"'; break;
        case 'x': out += static_cast<char>(hex(2)); break;
        case 'u': append_utf8(out, hex(4)); break;
        case 'U': append_utf8(out, hex(8)); break;
        default:
          out += '\\';
          out += e;
      }
    }
    return out;
  }

  std::vector<Expr> sequence(char close, int depth, bool& saw_comma) {
    std::vector<Expr> items;
    skip_space();
    saw_comma = false;
    while (peek() != close) {
      items.push_back(expr(depth + 1));
      skip_space();
      if (peek() == ',') {
        saw_comma = true;
        ++i_;
        skip_space();
        continue;
      }
      if (peek() != close) throw error(std::string("expected ',' or '") + close + "'");
    }
    ++i_;
    return items;
  }

  Expr expr(int depth) {
    if (depth > kMaxDepth) throw error("expression nested too deeply");
    skip_space();
    Expr e;
    const char c = peek();
    if (c == '\'' || c == '"') {
      e.kind = Expr::Kind::kString;
      e.text = string_literal();
    } else if (c == '-' || std::isdigit(static_cast<unsigned char>(c))) {
      e.kind = Expr::Kind::kInt;
      e.integer = integer();
    } else if (c == '[') {
      ++i_;
      bool comma = false;
      e.kind = Expr::Kind::kList;
      e.items = sequence(']', depth, comma);
    } else if (c == '(') {
      ++i_;
      bool comma = false;
      auto items = sequence(')', depth, comma);
      if (items.size() == 1 && !comma) return std::move(items[0]);
      e.kind = Expr::Kind::kTuple;
      e.items = std::move(items);
    } else if (ident_start(c)) {
      const auto word = ident();
      if (word == "None") {
        e.kind = Expr::Kind::kNone;
      } else if (word == "True" || word == "False") {
        e.kind = Expr::Kind::kBool;
        e.integer = word == "True";
      } else if (word == "prompts" || word == "token_positions") {
        skip_space();
        expect('[');
        skip_space();
        e.kind = word == "prompts" ? Expr::Kind::kPromptRef : Expr::Kind::kPositionRef;
        e.integer = integer();
        if (e.integer < 0) throw error("negative " + word + " index");
        skip_space();
        expect(']');
      } else {
        throw error("unsupported name '" + word + "'");
      }
    } else {
      throw error(c ? std::string("unexpected character '") + c + "'" : std::string("unexpected end of input"));
    }
    return e;
  }

  std::string_view s_;
  std::size_t i_ = 0;
};

}  // namespace

std::optional<tools::Tool> ToolCallRequest::tool() const {
  if (function == "logit_lens") return tools::Tool::kLogitLens;
  if (function == "attention_map_generation") return tools::Tool::kAttentionMap;
  if (function == "run_patching") return tools::Tool::kRunPatching;
  if (function == "get_token_indices_in_prompt") return tools::Tool::kTokenPositions;
  return std::nullopt;
}

ToolCallRequest parse_call(std::string_view source) {
  CallParser p(source);
  if (p.at_end()) throw ValidationError("empty call");
  auto call = p.call();
  if (!p.at_end()) throw ValidationError("unexpected text after call");
  return call;
}

std::vector<ToolCallRequest> parse_calls(std::string_view block) {
  CallParser p(block);
  std::vector<ToolCallRequest> out;
  while (!p.at_end()) {
    out.push_back(p.call());
    p.finish_statement();
  }
  return out;
}

std::string render(const Expr& e) {
  auto join = [](const std::vector<Expr>& items) {
    std::string s;
    for (std::size_t i = 0; i < items.size(); ++i) s += (i ? ", " : "") + render(items[i]);
    return s;
  };
  switch (e.kind) {
    case Expr::Kind::kNone: return "None";
    case Expr::Kind::kBool: return e.integer ? "True" : "False";
    case Expr::Kind::kInt: return std::to_string(e.integer);
    case Expr::Kind::kString: return util::quote(e.text, '"');
    case Expr::Kind::kList: return "[" + join(e.items) + "]";
    case Expr::Kind::kTuple: return "(" + join(e.items) + (e.items.size() == 1 ? ",)" : ")");
    case Expr::Kind::kPromptRef: return "prompts[" + std::to_string(e.integer) + "]";
    case Expr::Kind::kPositionRef: return "token_positions[" + std::to_string(e.integer) + "]";
  }
  return "None";
}

std::string render_call(const ToolCallRequest& call) {
  std::string s = (call.mi_prefix ? "mi." : "") + call.function + "(";
  for (std::size_t i = 0; i < call.arguments.size(); ++i) {
    if (i) s += ", ";
    if (!call.arguments[i].keyword.empty()) s += call.arguments[i].keyword + "=";
    s += render(call.arguments[i].value);
  }
  return s + ")";
}

std::optional<std::string> extract_tag(std::string_view text, const std::vector<std::string>& names) {
  std::size_t best = std::string_view::npos;
  std::size_t content = 0;
  for (const auto& n : names) {
    const auto at = text.find("<" + n + ">");
    if (at < best) {
      best = at;
      content = at + n.size() + 2;
    }
  }
  if (best == std::string_view::npos) return std::nullopt;
  std::size_t end = text.size();
  for (const auto& n : names) end = std::min(end, text.find("</" + n + ">", content));
  return std::string(text.substr(content, end - content));
}

std::vector<std::string> extract_all(std::string_view text, const std::string& name) {
  std::vector<std::string> out;
  const std::string open = "<" + name + ">";
  const std::string close = "</" + name + ">";
  std::size_t at = 0;
  while ((at = text.find(open, at)) != std::string_view::npos) {
    const auto b = at + open.size();
    auto e = text.find(close, b);
    const auto next = text.find(open, b);
    if (e == std::string_view::npos || next < e) e = std::min(next, text.size());
    out.emplace_back(text.substr(b, e - b));
    at = e;
  }
  return out;
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

const std::vector<std::string> kCallsTags = {"experiment_calls", "experiments_calls"};
const std::vector<std::string> kFinalTags = {"final_hypothesis", "final hypothesis"};

std::vector<ExperimentRequest> parse_experiments(const std::string& block) {
  std::vector<ExperimentRequest> out;
  std::string description;
  std::size_t at = 0;
  while (true) {
    const auto d = block.find("<description>", at);
    const auto x = block.find("<experiment>", at);
    if (x == std::string::npos) break;
    if (d < x) {
      const auto dend = block.find("</description>", d);
      description = trim(block.substr(d + 13, (dend == std::string::npos ? x : std::min(dend, x)) - d - 13));
    }
    const auto b = x + 12;
    auto e = block.find("</experiment>", b);
    if (e == std::string::npos) e = block.size();
    const auto source = trim(block.substr(b, e - b));
    try {
      const auto calls = parse_calls(source);
      if (calls.empty()) throw ValidationError("no function call found");
      for (const auto& c : calls) {
        ExperimentRequest r{description, calls.size() == 1 ? source : render_call(c), c, ""};
        if (!c.tool()) {
          r.error = "unknown function '" + c.function +
                    "'; available functions are get_token_indices_in_prompt, attention_map_generation, run_patching "
                    "and logit_lens";
        }
        out.push_back(std::move(r));
      }
    } catch (const ValidationError& err) {
      out.push_back({description, source, std::nullopt, std::string("could not parse call: ") + err.what()});
    }
    description.clear();
    at = e;
  }
  return out;
}

}  // namespace

std::optional<FinalHypothesis> parse_final(std::string_view text) {
  auto body = extract_tag(text, kFinalTags);
  if (!body) return std::nullopt;
  FinalHypothesis f;
  f.text = trim(*body);
  auto summary = extract_tag(f.text, {"summarized_description"});
  if (!summary) summary = extract_tag(text, {"summarized_description"});
  f.summarized_description = summary ? trim(*summary) : f.text;
  std::string evidence = f.text;
  if (const auto b = evidence.find("<summarized_description>"); b != std::string::npos) {
    const auto close = evidence.find("</summarized_description>", b);
    evidence.erase(b, close == std::string::npos ? std::string::npos : close + 25 - b);
  }
  f.evidence = trim(evidence);
  return f;
}

AgentTurn parse_agent_turn(std::string_view text) {
  AgentTurn turn;
  const auto calls = extract_tag(text, kCallsTags);
  if (calls) {
    turn.experiments = parse_experiments(*calls);
    if (!turn.experiments.empty()) return turn;
  }
  if (auto f = parse_final(text)) {
    turn.kind = AgentTurn::Kind::kFinal;
    turn.final = std::move(*f);
    return turn;
  }
  if (calls) throw ProtocolError("<experiment_calls> contained no <experiment> blocks");
  throw ProtocolError("reply contains neither <experiment_calls> nor <final_hypothesis>");
}

namespace {

struct Signature {
  std::vector<std::string> params;
  std::map<std::string, std::string> aliases;
};

const Signature& signature(tools::Tool t) {
  static const std::map<tools::Tool, Signature> table = {
      {tools::Tool::kTokenPositions, {{"prompts"}, {{"prompt", "prompts"}}}},
      {tools::Tool::kAttentionMap,
       {{"prompts", "query_positions", "layer_head_pairs"},
        {{"token_positions", "query_positions"}, {"positions", "query_positions"}}}},
      {tools::Tool::kLogitLens,
       {{"prompts", "token_positions", "layer_head_pairs", "tokens", "top_k"}, {{"positions", "token_positions"}}}},
      {tools::Tool::kRunPatching,
       {{"source_prompts", "counterfactual_prompts", "token_positions_source", "token_positions_counterfactual",
         "layer_head_pairs", "tokens", "top_k"},
        {{"token_position_source", "token_positions_source"},
         {"token_position_counterfactual", "token_positions_counterfactual"}}}},
  };
  return table.at(t);
}

std::vector<Expr> elements(const Expr& e) {
  if (e.kind == Expr::Kind::kList || e.kind == Expr::Kind::kTuple) return e.items;
  return {e};
}

std::vector<std::string> as_prompts(const Expr& e, const CallContext& ctx, const std::string& param,
                                    bool* all_refs = nullptr, std::vector<int>* ref_positions = nullptr) {
  std::vector<std::string> out;
  if (all_refs) *all_refs = true;
  for (const auto& item : elements(e)) {
    if (item.kind == Expr::Kind::kString) {
      out.push_back(item.text);
      if (all_refs) *all_refs = false;
    } else if (item.kind == Expr::Kind::kPromptRef) {
      const auto i = static_cast<std::size_t>(item.integer);
      if (i >= ctx.prompts.size()) {
        throw ValidationError("prompts[" + std::to_string(i) + "] is out of range; there are " +
                              std::to_string(ctx.prompts.size()) + " prompts");
      }
      out.push_back(ctx.prompts[i]);
      if (ref_positions && i < ctx.positions.size()) ref_positions->push_back(ctx.positions[i]);
    } else {
      throw ValidationError(param + " must be a string, prompts[i], or a list of them");
    }
  }
  if (out.empty()) throw ValidationError(param + " is empty");
  return out;
}

std::vector<int> as_positions(const Expr& e, const CallContext& ctx, const std::string& param) {
  std::vector<int> out;
  for (const auto& item : elements(e)) {
    if (item.kind == Expr::Kind::kInt) {
      out.push_back(static_cast<int>(item.integer));
    } else if (item.kind == Expr::Kind::kPositionRef) {
      const auto i = static_cast<std::size_t>(item.integer);
      if (i >= ctx.positions.size()) {
        throw ValidationError("token_positions[" + std::to_string(i) + "] is out of range; there are " +
                              std::to_string(ctx.positions.size()) + " positions");
      }
      out.push_back(ctx.positions[i]);
    } else {
      throw ValidationError(param + " must be an integer, token_positions[i], or a list of them");
    }
  }
  return out;
}

std::optional<ComponentRef> as_pair(const Expr& e) {
  if ((e.kind != Expr::Kind::kTuple && e.kind != Expr::Kind::kList) || e.items.size() != 2) return std::nullopt;
  const auto& l = e.items[0];
  const auto& h = e.items[1];
  if (l.kind != Expr::Kind::kInt) return std::nullopt;
  if (h.kind == Expr::Kind::kNone) return ComponentRef::mlp(static_cast<int>(l.integer));
  if (h.kind == Expr::Kind::kInt) return ComponentRef::attention_head(static_cast<int>(l.integer), static_cast<int>(h.integer));
  return std::nullopt;
}

std::vector<ComponentRef> as_components(const Expr& e) {
  if (auto one = as_pair(e)) return {*one};
  std::vector<ComponentRef> out;
  if (e.kind == Expr::Kind::kList || e.kind == Expr::Kind::kTuple) {
    for (const auto& item : e.items) {
      auto c = as_pair(item);
      if (!c) break;
      out.push_back(*c);
    }
    if (out.size() == e.items.size() && !out.empty()) return out;
  }
  throw ValidationError("layer_head_pairs must be a (layer, head) tuple or a list of them, with None as head for an MLP");
}

std::vector<std::string> as_tokens(const Expr& e) {
  if (e.kind == Expr::Kind::kNone) return {};
  std::vector<std::string> out;
  for (const auto& item : elements(e)) {
    if (item.kind != Expr::Kind::kString) throw ValidationError("tokens must be a list of strings or None");
    out.push_back(item.text);
  }
  return out;
}

int as_top_k(const Expr& e) {
  if (e.kind == Expr::Kind::kNone) return 0;
  if (e.kind != Expr::Kind::kInt || e.integer < 1 || e.integer > 1000) {
    throw ValidationError("top_k must be an integer between 1 and 1000");
  }
  return static_cast<int>(e.integer);
}

void check_lengths(std::size_t prompts, std::size_t positions, const std::string& what) {
  if (prompts != positions) {
    throw ValidationError(what + " has " + std::to_string(positions) + " entries for " + std::to_string(prompts) +
                          " prompts; give one position per prompt");
  }
}

}  // namespace

BoundCall bind(const ToolCallRequest& call, const CallContext& ctx) {
  const auto tool = call.tool();
  if (!tool) throw ValidationError("unknown function '" + call.function + "'");
  const auto& sig = signature(*tool);
  std::map<std::string, const Expr*> args;
  std::size_t next = 0;
  for (const auto& a : call.arguments) {
    std::string name;
    if (a.keyword.empty()) {
      if (next >= sig.params.size()) {
        throw ValidationError(call.function + "() takes at most " + std::to_string(sig.params.size()) +
                              " arguments");
      }
      name = sig.params[next++];
    } else {
      name = a.keyword;
      if (auto al = sig.aliases.find(name); al != sig.aliases.end()) name = al->second;
      if (std::find(sig.params.begin(), sig.params.end(), name) == sig.params.end()) {
        throw ValidationError(call.function + "() got an unexpected keyword argument '" + a.keyword + "'");
      }
    }
    if (args.count(name)) throw ValidationError(call.function + "() got multiple values for argument '" + name + "'");
    args[name] = &a.value;
  }
  auto get = [&](const std::string& n) -> const Expr* {
    auto it = args.find(n);
    return it == args.end() ? nullptr : it->second;
  };
  auto require = [&](const std::string& n) -> const Expr& {
    const Expr* e = get(n);
    if (!e) throw ValidationError(call.function + "() missing required argument '" + n + "'");
    return *e;
  };

  BoundCall out;
  out.tool = *tool;
  auto components = [&] {
    const Expr* e = get("layer_head_pairs");
    return e && e->kind != Expr::Kind::kNone ? as_components(*e) : std::vector<ComponentRef>{ctx.component};
  };
  auto positions_or_refs = [&](const std::string& n, const std::vector<int>& ref_positions, bool all_refs,
                               std::size_t count) {
    if (const Expr* e = get(n)) return as_positions(*e, ctx, n);
    if (!all_refs || ref_positions.size() != count) {
      throw ValidationError(call.function + "() missing required argument '" + n + "'");
    }
    return ref_positions;
  };

  switch (*tool) {
    case tools::Tool::kTokenPositions:
      out.prompts = as_prompts(require("prompts"), ctx, "prompts");
      break;
    case tools::Tool::kAttentionMap:
    case tools::Tool::kLogitLens: {
      bool all_refs = false;
      std::vector<int> refs;
      out.prompts = as_prompts(require("prompts"), ctx, "prompts", &all_refs, &refs);
      const std::string pname = *tool == tools::Tool::kLogitLens ? "token_positions" : "query_positions";
      out.positions = positions_or_refs(pname, refs, all_refs, out.prompts.size());
      check_lengths(out.prompts.size(), out.positions.size(), pname);
      out.components = components();
      if (*tool == tools::Tool::kLogitLens) {
        if (const Expr* t = get("tokens")) out.tokens = as_tokens(*t);
        if (const Expr* k = get("top_k")) out.top_k = as_top_k(*k);
      }
      break;
    }
    case tools::Tool::kRunPatching: {
      bool src_refs = false, cf_refs = false;
      std::vector<int> src_pos, cf_pos;
      out.prompts = as_prompts(require("source_prompts"), ctx, "source_prompts", &src_refs, &src_pos);
      out.counterfactual_prompts =
          as_prompts(require("counterfactual_prompts"), ctx, "counterfactual_prompts", &cf_refs, &cf_pos);
      if (out.prompts.size() != out.counterfactual_prompts.size()) {
        throw ValidationError("source_prompts and counterfactual_prompts must have the same length");
      }
      out.positions = positions_or_refs("token_positions_source", src_pos, src_refs, out.prompts.size());
      out.counterfactual_positions =
          positions_or_refs("token_positions_counterfactual", cf_pos, cf_refs, out.prompts.size());
      check_lengths(out.prompts.size(), out.positions.size(), "token_positions_source");
      check_lengths(out.prompts.size(), out.counterfactual_positions.size(), "token_positions_counterfactual");
      out.components = components();
      if (const Expr* t = get("tokens")) out.tokens = as_tokens(*t);
      if (const Expr* k = get("top_k")) out.top_k = as_top_k(*k);
      break;
    }
  }
  return out;
}

tools::ExperimentResult execute(const model::ModelHandle& m, const BoundCall& c) {
  switch (c.tool) {
    case tools::Tool::kTokenPositions:
      return tools::token_positions(m, c.prompts);
    case tools::Tool::kAttentionMap:
      return tools::attention_map(m, c.prompts, c.positions, c.components);
    case tools::Tool::kLogitLens:
      return tools::logit_lens(m, c.prompts, c.positions, c.components, c.tokens, c.top_k ? c.top_k : 20);
    case tools::Tool::kRunPatching:
      return tools::run_patching(m, c.prompts, c.counterfactual_prompts, c.positions, c.counterfactual_positions,
                                 c.components, c.tokens, c.top_k ? c.top_k : 10);
  }
  throw ValidationError("unsupported tool");
}

}  // namespace interp::agent
