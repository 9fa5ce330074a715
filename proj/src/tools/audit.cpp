#include <algorithm>
#include <thread>

#include "interp/error.hpp"
#include "interp/tasks/task.hpp"
#include "interp/tools/tools.hpp"

namespace interp::tools {

namespace {

using model::ActivationKind;
using model::CaptureSpec;
using model::InterventionSpec;

// Observations for prompts [begin, end), indexed [head][prompt - begin].
std::vector<std::vector<AuditObservation>> observe(const model::ModelHandle& m, const tasks::TaskBundle& task,
                                                   const std::vector<tasks::TaskExample>& cfs,
                                                   const std::vector<ComponentRef>& heads, const std::string& span,
                                                   std::size_t begin, std::size_t end) {
  std::vector<std::vector<AuditObservation>> out(heads.size());
  const auto& tok = m.tokenizer();
  for (std::size_t i = begin; i < end; ++i) {
    auto ex = task.prompts[i];
    if (ex.positions.empty()) tasks::resolve_positions(ex, m);
    const auto it = ex.positions.find(span);
    if (it == ex.positions.end()) throw ValidationError("prompt has no '" + span + "' position: " + ex.text);
    if (ex.answers.empty()) throw ValidationError("prompt has no answer: " + ex.text);
    const auto answer = tok.single_token(ex.answers[0]);
    if (!answer) throw ValidationError("answer is not a single token: " + ex.answers[0]);
    std::vector<int> distractors;
    for (const auto& d : ex.distractors) {
      if (auto id = tok.single_token(d)) distractors.push_back(*id);
    }

    const auto tp = m.tokenize(ex.text);
    const auto cf = m.tokenize(cfs[i].text);
    std::vector<CaptureSpec> specs;
    std::vector<CaptureSpec> cf_specs;
    for (const auto& h : heads) {
      specs.push_back({h, -1, ActivationKind::kAttentionPattern});
      specs.push_back({h, -1, ActivationKind::kHeadOutput});
      cf_specs.push_back({h, -1, ActivationKind::kHeadOutput});
    }
    const auto clean = m.forward_with_capture(tp, specs);
    const auto cf_cap = m.forward_with_capture(cf, cf_specs);
    const int first = tp.bos_prepended ? 1 : 0;
    const double clean_correct = clean.distribution.probabilities[static_cast<std::size_t>(*answer)];

    for (std::size_t k = 0; k < heads.size(); ++k) {
      AuditObservation o;
      const auto& row = clean.activations[2 * k];
      for (int j = first; j < static_cast<int>(row.size()); ++j) {
        o.keys.push_back(j);
        o.weights.push_back(row[static_cast<std::size_t>(j)]);
      }
      o.correct_position = it->second;
      o.lens_top1 = m.unembed(clean.activations[2 * k + 1]).argmax();
      o.distractor_ids = distractors;
      o.clean_correct = clean_correct;
      const InterventionSpec iv{heads[k], -1, cf_cap.activations[k], std::nullopt};
      o.patched_correct = m.forward_with_intervention(tp, std::span<const InterventionSpec>(&iv, 1))
                              .probabilities[static_cast<std::size_t>(*answer)];
      out[k].push_back(std::move(o));
    }
  }
  return out;
}

}  // namespace

HeadAudit summarize_audit(const ComponentRef& head, const std::vector<AuditObservation>& obs, double uplift) {
  HeadAudit a;
  a.head = head;
  a.n = static_cast<int>(obs.size());
  if (obs.empty()) return a;
  int attn = 0, wrong = 0, up = 0;
  for (const auto& o : obs) {
    if (!o.weights.empty()) {
      const auto best = std::max_element(o.weights.begin(), o.weights.end()) - o.weights.begin();
      if (o.keys[static_cast<std::size_t>(best)] == o.correct_position) ++attn;
    }
    if (std::find(o.distractor_ids.begin(), o.distractor_ids.end(), o.lens_top1) != o.distractor_ids.end()) ++wrong;
    if (o.patched_correct - o.clean_correct >= uplift) ++up;
  }
  const double n = static_cast<double>(obs.size());
  a.correct_attention_rate = attn / n;
  a.incorrect_object_top1_rate = wrong / n;
  a.cf_patch_uplift_rate = up / n;
  return a;
}

std::string default_correct_span(const std::string& task_family) {
  if (task_family == "entity-tracking") return "OBJECT";
  if (task_family == "ioi") return "IO";
  if (task_family == "colored-objects") return "COLOR";
  if (task_family == "greater-than") return "YY";
  if (task_family == "acronyms") return "W3";
  throw NotFoundError("no default audit span for task family '" + task_family + "'");
}

std::vector<HeadAudit> audit_heads(const model::ModelHandle& m, const tasks::TaskBundle& task,
                                   const std::vector<tasks::TaskExample>& counterfactuals,
                                   const std::vector<ComponentRef>& heads, const AuditOptions& options) {
  if (options.n_examples < 1) throw ValidationError("audit needs at least one example");
  const auto n = static_cast<std::size_t>(options.n_examples);
  if (task.prompts.size() < n) {
    throw ValidationError("audit wants " + std::to_string(n) + " examples but the task has " +
                          std::to_string(task.prompts.size()));
  }
  if (counterfactuals.size() < n) throw ValidationError("audit needs one counterfactual per example");
  for (const auto& h : heads) {
    if (!h.is_head()) throw UnsupportedComponentError("audits cover attention heads, got " + model::to_string(h));
    m.validate(h);
  }
  const auto span = options.correct_span.empty() ? default_correct_span(task.definition.task) : options.correct_span;

  const auto threads = static_cast<std::size_t>(std::clamp(options.threads, 1, static_cast<int>(n)));
  std::vector<std::vector<std::vector<AuditObservation>>> shards(threads);
  if (threads == 1) {
    shards[0] = observe(m, task, counterfactuals, heads, span, 0, n);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          model::ModelHandle local(m.shared_checkpoint());
          shards[t] = observe(local, task, counterfactuals, heads, span, n * t / threads, n * (t + 1) / threads);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  std::vector<HeadAudit> out;
  for (std::size_t k = 0; k < heads.size(); ++k) {
    std::vector<AuditObservation> all;
    for (auto& s : shards) all.insert(all.end(), s[k].begin(), s[k].end());
    out.push_back(summarize_audit(heads[k], all, options.uplift));
  }
  return out;
}

}  // namespace interp::tools
