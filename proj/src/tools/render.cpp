#include <algorithm>
#include <numeric>
#include <sstream>

#include "interp/tools/tools.hpp"
#include "interp/util/text.hpp"

namespace interp::tools {

namespace {

using util::fixed4;
using util::quote;

constexpr int kFullAttentionLimit = 64;
constexpr int kAttentionTopK = 10;

// Indices of the k largest entries, ties broken by lower index.
std::vector<std::size_t> top_indices(const std::vector<double>& v, std::size_t k) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, v.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return v[a] != v[b] ? v[a] > v[b] : a < b; });
  idx.resize(k);
  return idx;
}

// Clip at zero and renormalize; display only.
std::vector<double> display_distribution(const std::vector<double>& p) {
  std::vector<double> out(p.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += out[i] = std::max(0.0, p[i]);
  if (total > 0.0) {
    for (auto& x : out) x /= total;
  }
  return out;
}

void render_tokens(std::ostringstream& os, const TokenPositionsPayload& p) {
  for (std::size_t i = 0; i < p.prompts.size(); ++i) {
    const auto& tp = p.prompts[i];
    if (i) os << "\n";
    os << "Prompt " << i + 1 << ": " << quote(tp.text, '"') << "\n";
    os << "Tokens: [";
    for (std::size_t k = 0; k < tp.tokens.size(); ++k) {
      if (k) os << ", ";
      os << "(" << quote(tp.tokens[k].text) << ", " << tp.tokens[k].index << ")";
    }
    os << "]\n";
  }
}

void render_lens(std::ostringstream& os, const LogitLensPayload& p) {
  os << "Logit lens results\n";
  for (const auto& e : p.entries) {
    const auto shown = display_distribution(e.probabilities);
    os << "\nPrompt " << e.prompt + 1 << " | position " << e.position << " " << quote(e.position_token) << " | "
       << e.target.describe() << "\n";
    os << "  top " << std::min<std::size_t>(static_cast<std::size_t>(p.top_k), shown.size()) << " tokens:\n";
    int rank = 1;
    for (auto id : top_indices(shown, static_cast<std::size_t>(p.top_k))) {
      const std::string tok = p.vocab && id < p.vocab->size() ? (*p.vocab)[id] : "<" + std::to_string(id) + ">";
      os << "    " << rank++ << ". " << quote(tok) << " " << fixed4(shown[id]) << "\n";
    }
    if (!p.tokens.empty()) {
      os << "  requested tokens:\n";
      for (const auto& t : p.tokens) {
        os << "    " << quote(t.text) << " ";
        if (t.id && static_cast<std::size_t>(*t.id) < shown.size()) {
          os << fixed4(shown[static_cast<std::size_t>(*t.id)]) << "\n";
        } else {
          os << "untokenizable\n";
        }
      }
    }
  }
}

void render_attention(std::ostringstream& os, const AttentionPayload& p) {
  os << "Attention patterns (BOS excluded, renormalized)\n";
  for (const auto& e : p.entries) {
    os << "\nPrompt " << e.prompt + 1 << " | query position " << e.query << " " << quote(e.query_token) << " | "
       << model::describe(e.head) << "\n";
    if (e.keys.empty()) {
      os << "  no non-BOS keys\n";
      continue;
    }
    std::vector<std::size_t> order(e.keys.size());
    std::iota(order.begin(), order.end(), 0);
    if (e.prompt_length > kFullAttentionLimit) {
      order = top_indices(e.weights, kAttentionTopK);
      os << "  top " << order.size() << " of " << e.keys.size() << " keys:\n";
    }
    for (auto k : order) {
      os << "  [" << e.keys[k] << "] " << quote(e.key_tokens[k]) << " " << fixed4(e.weights[k]) << "\n";
    }
  }
}

void render_patching(std::ostringstream& os, const PatchingPayload& p) {
  os << "Patching results (delta = patched - clean)\n";
  for (const auto& e : p.entries) {
    os << "\nPair " << e.pair + 1;
    if (!e.error.empty()) {
      os << " | error: " << e.error << "\n";
      continue;
    }
    os << " | source position " << e.source_position << " " << quote(e.source_token) << " <- counterfactual position "
       << e.counterfactual_position << " " << quote(e.counterfactual_token) << " | " << model::describe(e.component)
       << "\n";
    os << (p.named ? "  requested tokens:\n" : "  top " + std::to_string(e.tokens.size()) + " changed tokens:\n");
    for (const auto& t : e.tokens) {
      os << "    " << quote(t.text) << " clean " << fixed4(t.clean) << " patched " << fixed4(t.patched) << " delta "
         << fixed4(t.delta) << "\n";
    }
    for (const auto& t : e.untokenizable) os << "    " << quote(t) << " untokenizable\n";
  }
}

}  // namespace

std::string render(const Payload& payload) {
  std::ostringstream os;
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, TokenPositionsPayload>) {
          render_tokens(os, p);
        } else if constexpr (std::is_same_v<T, LogitLensPayload>) {
          render_lens(os, p);
        } else if constexpr (std::is_same_v<T, AttentionPayload>) {
          render_attention(os, p);
        } else {
          render_patching(os, p);
        }
      },
      payload);
  return os.str();
}

nlohmann::json to_json(const ExperimentResult& r) {
  using nlohmann::json;
  using util::printable;
  json j;
  j["tool"] = to_string(r.tool);
  j["canonical_text"] = printable(r.canonical_text);
  auto strings = [](const std::vector<std::string>& v) {
    json a = json::array();
    for (const auto& s : v) a.push_back(printable(s));
    return a;
  };
  j["provenance"] = {{"prompts", strings(r.provenance.prompts)},
                     {"counterfactual_prompts", strings(r.provenance.counterfactual_prompts)},
                     {"positions", r.provenance.positions},
                     {"counterfactual_positions", r.provenance.counterfactual_positions},
                     {"components", r.provenance.components},
                     {"seed", r.provenance.seed},
                     {"alpha", r.provenance.alpha}};
  json payload;
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, TokenPositionsPayload>) {
          payload["prompts"] = json::array();
          for (const auto& tp : p.prompts) {
            json toks = json::array();
            for (const auto& t : tp.tokens) toks.push_back({{"token", printable(t.text)}, {"index", t.index}, {"id", t.id}});
            payload["prompts"].push_back({{"text", printable(tp.text)}, {"bos_prepended", tp.bos_prepended}, {"tokens", toks}});
          }
        } else if constexpr (std::is_same_v<T, LogitLensPayload>) {
          payload["top_k"] = p.top_k;
          payload["entries"] = json::array();
          for (const auto& e : p.entries) {
            json top = json::array();
            for (auto id : top_indices(e.probabilities, static_cast<std::size_t>(p.top_k))) {
              const std::string tok = p.vocab && id < p.vocab->size() ? (*p.vocab)[id] : "";
              top.push_back({{"token", printable(tok)}, {"id", id}, {"probability", e.probabilities[id]}});
            }
            json named = json::array();
            for (const auto& t : p.tokens) {
              json n = {{"token", printable(t.text)}};
              if (t.id) {
                n["id"] = *t.id;
                n["probability"] = e.probabilities[static_cast<std::size_t>(*t.id)];
              } else {
                n["untokenizable"] = true;
              }
              named.push_back(n);
            }
            payload["entries"].push_back({{"prompt", e.prompt},
                                          {"position", e.position},
                                          {"target", e.target.describe()},
                                          {"top", top},
                                          {"tokens", named}});
          }
        } else if constexpr (std::is_same_v<T, AttentionPayload>) {
          payload["entries"] = json::array();
          for (const auto& e : p.entries) {
            payload["entries"].push_back({{"prompt", e.prompt},
                                          {"query", e.query},
                                          {"head", model::to_string(e.head)},
                                          {"keys", e.keys},
                                          {"key_tokens", strings(e.key_tokens)},
                                          {"weights", e.weights}});
          }
        } else {
          payload["top_k"] = p.top_k;
          payload["named"] = p.named;
          payload["entries"] = json::array();
          for (const auto& e : p.entries) {
            json ej = {{"pair", e.pair}};
            if (!e.error.empty()) {
              ej["error"] = printable(e.error);
            } else {
              ej["component"] = model::to_string(e.component);
              ej["source_position"] = e.source_position;
              ej["counterfactual_position"] = e.counterfactual_position;
              ej["tokens"] = json::array();
              for (const auto& t : e.tokens) {
                ej["tokens"].push_back({{"token", printable(t.text)},
                                        {"id", t.id},
                                        {"clean", t.clean},
                                        {"patched", t.patched},
                                        {"delta", t.delta}});
              }
              ej["untokenizable"] = strings(e.untokenizable);
            }
            payload["entries"].push_back(ej);
          }
        }
      },
      r.payload);
  j["payload"] = payload;
  return j;
}

}  // namespace interp::tools
