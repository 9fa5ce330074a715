#include "interp/error.hpp"
#include "interp/tools/tools.hpp"
#include "interp/util/random.hpp"

namespace interp::tools {

namespace {

void mix(std::vector<double>& v, double alpha, util::Rng& rng) {
  const auto perm = rng.permutation(v.size());
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (1.0 - alpha) * v[i] + alpha * v[perm[i]];
  v = std::move(out);
}

}  // namespace

ExperimentResult apply_noise(const ExperimentResult& result, double alpha, std::uint64_t seed) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("noise alpha must lie in [0, 1]");
  if (result.tool == Tool::kTokenPositions) throw ValidationError("token_positions results cannot be noised");
  ExperimentResult out = result;
  util::Rng rng(seed);
  if (auto* p = std::get_if<LogitLensPayload>(&out.payload)) {
    for (auto& e : p->entries) mix(e.probabilities, alpha, rng);
  } else if (auto* p = std::get_if<AttentionPayload>(&out.payload)) {
    for (auto& e : p->entries) mix(e.weights, alpha, rng);
  } else if (auto* p = std::get_if<PatchingPayload>(&out.payload)) {
    for (auto& e : p->entries) {
      if (!e.error.empty()) continue;
      std::vector<double> d;
      for (const auto& t : e.tokens) d.push_back(t.delta);
      mix(d, alpha, rng);
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (d[i] == e.tokens[i].delta) continue;
        e.tokens[i].delta = d[i];
        e.tokens[i].patched = e.tokens[i].clean + d[i];
      }
    }
  }
  out.provenance.seed = seed;
  out.provenance.alpha = alpha;
  out.canonical_text = render(out.payload);
  return out;
}

}  // namespace interp::tools
