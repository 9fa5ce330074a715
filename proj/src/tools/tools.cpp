#include "interp/tools/tools.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "interp/error.hpp"

namespace interp::tools {

namespace {

using model::ActivationKind;
using model::CaptureSpec;
using model::InterventionSpec;

std::vector<std::string> component_strings(const std::vector<ComponentRef>& cs) {
  std::vector<std::string> out;
  for (const auto& c : cs) out.push_back(model::to_string(c));
  return out;
}

void check_paired(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ValidationError(std::string(what) + ": got " + std::to_string(a) + " prompts but " + std::to_string(b) +
                          " positions");
  }
}

ActivationKind output_kind(const ComponentRef& c) {
  return c.is_head() ? ActivationKind::kHeadOutput : ActivationKind::kMlpOutput;
}

std::shared_ptr<std::vector<std::string>> vocab_strings(const model::ModelHandle& m) {
  const auto& tok = m.tokenizer();
  const int n = m.config().vocab_size;
  auto out = std::make_shared<std::vector<std::string>>(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    (*out)[static_cast<std::size_t>(i)] = i < tok.vocab_size() ? tok.token_text(i) : "<" + std::to_string(i) + ">";
  }
  return out;
}

}  // namespace

std::string to_string(Tool t) {
  switch (t) {
    case Tool::kLogitLens: return "logit_lens";
    case Tool::kAttentionMap: return "attention_map";
    case Tool::kRunPatching: return "run_patching";
    case Tool::kTokenPositions: return "token_positions";
  }
  return "?";
}

Tool parse_tool(const std::string& s) {
  for (auto t : {Tool::kLogitLens, Tool::kAttentionMap, Tool::kRunPatching, Tool::kTokenPositions}) {
    if (to_string(t) == s) return t;
  }
  if (s == "attention_map_generation") return Tool::kAttentionMap;
  if (s == "get_token_indices_in_prompt") return Tool::kTokenPositions;
  throw ValidationError("unknown tool '" + s + "'");
}

NamedToken resolve_token(const model::Tokenizer& tok, const std::string& text) {
  NamedToken out{text, std::nullopt};
  if (!text.empty() && text[0] != ' ') out.id = tok.single_token(" " + text);
  if (!out.id) out.id = tok.single_token(text);
  return out;
}

std::string LensTarget::describe() const {
  if (kind == Kind::kResidual) return "residual after layer " + std::to_string(component.layer);
  return model::describe(component);
}

ExperimentResult token_positions(const model::ModelHandle& m, const std::vector<std::string>& prompts) {
  TokenPositionsPayload p;
  for (const auto& s : prompts) p.prompts.push_back(m.tokenize(s));
  ExperimentResult r;
  r.tool = Tool::kTokenPositions;
  r.provenance.prompts = prompts;
  r.payload = std::move(p);
  r.canonical_text = render(r.payload);
  return r;
}

ExperimentResult logit_lens(const model::ModelHandle& m, const std::vector<std::string>& prompts,
                            const std::vector<int>& token_positions, const std::vector<LensTarget>& targets,
                            const std::vector<std::string>& tokens, int top_k) {
  check_paired(prompts.size(), token_positions.size(), "logit_lens");
  if (top_k < 1) throw ValidationError("top_k must be positive");
  std::vector<CaptureSpec> specs;
  for (const auto& t : targets) {
    m.validate(t.component);
    specs.push_back({t.component, 0,
                     t.kind == LensTarget::Kind::kResidual ? ActivationKind::kResidualState
                                                           : output_kind(t.component)});
  }
  std::vector<model::TokenizedPrompt> tps;
  std::vector<int> resolved;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    tps.push_back(m.tokenize(prompts[i]));
    resolved.push_back(m.resolve_position(tps.back(), token_positions[i]));
  }

  LogitLensPayload p;
  p.top_k = top_k;
  for (const auto& t : tokens) p.tokens.push_back(resolve_token(m.tokenizer(), t));
  p.vocab = vocab_strings(m);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    for (auto& s : specs) s.token_position = resolved[i];
    const auto cap = m.forward_with_capture(tps[i], specs);
    for (std::size_t k = 0; k < targets.size(); ++k) {
      LensEntry e;
      e.prompt = static_cast<int>(i);
      e.position = resolved[i];
      e.position_token = tps[i].tokens[static_cast<std::size_t>(resolved[i])].text;
      e.target = targets[k];
      e.probabilities = m.unembed(cap.activations[k]).probabilities;
      p.entries.push_back(std::move(e));
    }
  }

  ExperimentResult r;
  r.tool = Tool::kLogitLens;
  r.provenance.prompts = prompts;
  r.provenance.positions = token_positions;
  for (const auto& t : targets) {
    r.provenance.components.push_back(t.kind == LensTarget::Kind::kResidual
                                          ? "resid_post." + std::to_string(t.component.layer)
                                          : model::to_string(t.component));
  }
  r.payload = std::move(p);
  r.canonical_text = render(r.payload);
  return r;
}

ExperimentResult logit_lens(const model::ModelHandle& m, const std::vector<std::string>& prompts,
                            const std::vector<int>& token_positions, const std::vector<ComponentRef>& components,
                            const std::vector<std::string>& tokens, int top_k) {
  std::vector<LensTarget> targets;
  for (const auto& c : components) targets.push_back(LensTarget::of(c));
  return logit_lens(m, prompts, token_positions, targets, tokens, top_k);
}

ExperimentResult attention_map(const model::ModelHandle& m, const std::vector<std::string>& prompts,
                               const std::vector<int>& query_positions, const std::vector<ComponentRef>& heads) {
  check_paired(prompts.size(), query_positions.size(), "attention_map");
  std::vector<CaptureSpec> specs;
  for (const auto& h : heads) {
    if (!h.is_head()) {
      throw UnsupportedComponentError("attention maps need an attention head, got " + model::to_string(h));
    }
    m.validate(h);
    specs.push_back({h, 0, ActivationKind::kAttentionPattern});
  }
  std::vector<model::TokenizedPrompt> tps;
  std::vector<int> resolved;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    tps.push_back(m.tokenize(prompts[i]));
    resolved.push_back(m.resolve_position(tps.back(), query_positions[i]));
  }

  AttentionPayload p;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    for (auto& s : specs) s.token_position = resolved[i];
    const auto cap = m.forward_with_capture(tps[i], specs);
    const int first = tps[i].bos_prepended ? 1 : 0;
    for (std::size_t k = 0; k < heads.size(); ++k) {
      AttentionEntry e;
      e.prompt = static_cast<int>(i);
      e.query = resolved[i];
      e.query_token = tps[i].tokens[static_cast<std::size_t>(resolved[i])].text;
      e.head = heads[k];
      e.prompt_length = tps[i].size();
      double total = 0.0;
      for (int j = first; j <= resolved[i]; ++j) total += cap.activations[k][static_cast<std::size_t>(j)];
      for (int j = first; j <= resolved[i]; ++j) {
        e.keys.push_back(j);
        e.key_tokens.push_back(tps[i].tokens[static_cast<std::size_t>(j)].text);
        const double w = cap.activations[k][static_cast<std::size_t>(j)];
        e.weights.push_back(total > 0.0 ? w / total : 0.0);
      }
      p.entries.push_back(std::move(e));
    }
  }

  ExperimentResult r;
  r.tool = Tool::kAttentionMap;
  r.provenance.prompts = prompts;
  r.provenance.positions = query_positions;
  r.provenance.components = component_strings(heads);
  r.payload = std::move(p);
  r.canonical_text = render(r.payload);
  return r;
}

ExperimentResult run_patching(const model::ModelHandle& m, const std::vector<std::string>& source_prompts,
                              const std::vector<std::string>& counterfactual_prompts,
                              const std::vector<int>& positions_source, const std::vector<int>& positions_cf,
                              const std::vector<ComponentRef>& components, const std::vector<std::string>& tokens,
                              int top_k) {
  if (source_prompts.size() != counterfactual_prompts.size()) {
    throw ValidationError("run_patching: source and counterfactual prompt lists differ in length");
  }
  check_paired(source_prompts.size(), positions_source.size(), "run_patching (source)");
  check_paired(counterfactual_prompts.size(), positions_cf.size(), "run_patching (counterfactual)");
  if (top_k < 1) throw ValidationError("top_k must be positive");
  for (const auto& c : components) m.validate(c);

  PatchingPayload p;
  p.top_k = top_k;
  p.named = !tokens.empty();
  std::vector<NamedToken> named;
  for (const auto& t : tokens) named.push_back(resolve_token(m.tokenizer(), t));

  for (std::size_t i = 0; i < source_prompts.size(); ++i) {
    model::TokenizedPrompt src, cf;
    int ps = 0, pc = 0;
    try {
      src = m.tokenize(source_prompts[i]);
      cf = m.tokenize(counterfactual_prompts[i]);
      ps = m.resolve_position(src, positions_source[i]);
      pc = m.resolve_position(cf, positions_cf[i]);
    } catch (const Error& e) {
      PatchEntry err;
      err.pair = static_cast<int>(i);
      err.error = e.what();
      p.entries.push_back(std::move(err));
      continue;
    }
    std::vector<CaptureSpec> specs;
    for (const auto& c : components) specs.push_back({c, pc, output_kind(c)});
    const auto clean = m.forward(src);
    const auto cf_cap = m.forward_with_capture(cf, specs);

    for (std::size_t k = 0; k < components.size(); ++k) {
      const InterventionSpec iv{components[k], ps, cf_cap.activations[k], std::nullopt};
      const auto patched = m.forward_with_intervention(src, std::span<const InterventionSpec>(&iv, 1));

      PatchEntry e;
      e.pair = static_cast<int>(i);
      e.component = components[k];
      e.source_position = ps;
      e.counterfactual_position = pc;
      e.source_token = src.tokens[static_cast<std::size_t>(ps)].text;
      e.counterfactual_token = cf.tokens[static_cast<std::size_t>(pc)].text;
      e.clean_distribution = clean.probabilities;
      e.patched_distribution = patched.probabilities;

      auto add = [&](const std::string& text, int id) {
        const auto c = clean.probabilities[static_cast<std::size_t>(id)];
        const auto q = patched.probabilities[static_cast<std::size_t>(id)];
        e.tokens.push_back({text, id, c, q, q - c});
      };
      if (p.named) {
        for (const auto& t : named) {
          if (t.id) {
            add(t.text, *t.id);
          } else {
            e.untokenizable.push_back(t.text);
          }
        }
      } else {
        const auto n = clean.probabilities.size();
        std::vector<int> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        const auto k_eff = std::min<std::size_t>(static_cast<std::size_t>(top_k), n);
        auto mag = [&](int id) {
          return std::fabs(patched.probabilities[static_cast<std::size_t>(id)] -
                           clean.probabilities[static_cast<std::size_t>(id)]);
        };
        std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k_eff), idx.end(),
                          [&](int a, int b) {
                            const double ma = mag(a), mb = mag(b);
                            return ma != mb ? ma > mb : a < b;
                          });
        const auto& tok = m.tokenizer();
        for (std::size_t j = 0; j < k_eff; ++j) {
          const int id = idx[j];
          add(id < tok.vocab_size() ? tok.token_text(id) : "<" + std::to_string(id) + ">", id);
        }
      }
      p.entries.push_back(std::move(e));
    }
  }

  ExperimentResult r;
  r.tool = Tool::kRunPatching;
  r.provenance.prompts = source_prompts;
  r.provenance.counterfactual_prompts = counterfactual_prompts;
  r.provenance.positions = positions_source;
  r.provenance.counterfactual_positions = positions_cf;
  r.provenance.components = component_strings(components);
  r.payload = std::move(p);
  r.canonical_text = render(r.payload);
  return r;
}

}  // namespace interp::tools
