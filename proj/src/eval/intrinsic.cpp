#include "interp/eval/intrinsic.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "interp/error.hpp"
#include "interp/util/random.hpp"

namespace interp::intrinsic {

using json = nlohmann::json;

double js_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ValidationError("distributions differ in size");
  double kl_p = 0.0;
  double kl_q = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) kl_p += p[i] * std::log2(p[i] / m);
    if (q[i] > 0.0) kl_q += q[i] * std::log2(q[i] / m);
  }
  return std::clamp(0.5 * (kl_p + kl_q), 0.0, 1.0);
}

double js_distance(std::span<const double> p, std::span<const double> q) { return std::sqrt(js_divergence(p, q)); }

std::vector<PromptState> prepare_prompts(const model::ModelHandle& m, const std::vector<std::string>& prompts) {
  std::vector<PromptState> out;
  out.reserve(prompts.size());
  for (const auto& text : prompts) {
    PromptState s;
    s.text = text;
    s.tokens = m.tokenize(text);
    s.residuals = m.residual_cache(s.tokens);
    s.clean = m.forward(s.tokens);
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

double aggregate(const std::vector<double>& divergences, const SwapOptions& options) {
  if (divergences.empty()) return 0.0;
  double sum = 0.0;
  if (options.average_divergences) {
    for (double d : divergences) sum += d;
    return std::sqrt(sum / static_cast<double>(divergences.size()));
  }
  for (double d : divergences) sum += std::sqrt(d);
  return sum / static_cast<double>(divergences.size());
}

}  // namespace

PairDistance swap_distance(model::ModelHandle& m, const ComponentRef& h1, const ComponentRef& h2,
                           const std::vector<PromptState>& prompts, const SwapOptions& options) {
  if (!h1.is_head() || !h2.is_head()) {
    throw UnsupportedComponentError("swap distances need attention heads, got " + model::to_string(h1) + " and " +
                                    model::to_string(h2));
  }
  m.validate(h1);
  m.validate(h2);
  PairDistance out{h1, h2};
  if (prompts.empty()) throw ValidationError("swap distance needs at least one prompt");
  const int start = std::min(h1.layer, h2.layer);
  for (const auto kind : {model::SwapKind::kKQ, model::SwapKind::kOV}) {
    std::vector<double> divs(prompts.size(), 0.0);
    if (!(h1 == h2)) {
      for (std::size_t i = 0; i < prompts.size(); ++i) {
        const auto& p = prompts[i];
        auto run = [&] { return m.forward_from(p.tokens, start, p.residuals[static_cast<std::size_t>(start)]); };
        if (options.one_directional) {
          const auto a = m.with_overwritten_head(h1, h2, kind, run);
          const auto b = m.with_overwritten_head(h2, h1, kind, run);
          divs[i] = 0.5 * (js_divergence(p.clean.probabilities, a.probabilities) +
                           js_divergence(p.clean.probabilities, b.probabilities));
        } else {
          const auto s = m.with_swapped_heads(h1, h2, kind, run);
          divs[i] = js_divergence(p.clean.probabilities, s.probabilities);
        }
      }
    }
    std::vector<double> per_prompt(divs.size());
    std::transform(divs.begin(), divs.end(), per_prompt.begin(), [](double d) { return std::sqrt(d); });
    if (kind == model::SwapKind::kKQ) {
      out.kq = aggregate(divs, options);
      out.kq_per_prompt = std::move(per_prompt);
    } else {
      out.ov = aggregate(divs, options);
      out.ov_per_prompt = std::move(per_prompt);
    }
  }
  out.distance = 0.5 * (out.kq + out.ov);
  return out;
}

int DistanceMatrix::index_of(const ComponentRef& h) const {
  auto it = std::find(heads.begin(), heads.end(), h);
  return it == heads.end() ? -1 : static_cast<int>(it - heads.begin());
}

double DistanceMatrix::at(const ComponentRef& a, const ComponentRef& b) const {
  const int i = index_of(a);
  const int j = index_of(b);
  if (i < 0 || j < 0) throw NotFoundError("head not in distance matrix");
  return values[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
}

DistanceMatrix distance_matrix(std::shared_ptr<const model::Checkpoint> checkpoint, const std::string& task,
                               const std::vector<std::string>& prompts, std::uint64_t prompt_seed,
                               const std::vector<ComponentRef>& heads, const SwapOptions& options, int workers) {
  DistanceMatrix d;
  d.task = task;
  d.model = checkpoint->id;
  d.prompt_seed = prompt_seed;
  d.prompts = prompts;
  d.options = options;
  for (const auto& h : heads) {
    if (h.is_head() && std::find(d.heads.begin(), d.heads.end(), h) == d.heads.end()) d.heads.push_back(h);
  }
  std::sort(d.heads.begin(), d.heads.end());
  const std::size_t n = d.heads.size();
  if (n < 2) throw ValidationError("distance matrix needs at least two heads");

  model::ModelHandle base(checkpoint);
  for (const auto& h : d.heads) base.validate(h);
  const auto states = prepare_prompts(base, prompts);

  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) jobs.emplace_back(i, j);
  }
  std::vector<std::optional<PairDistance>> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto worker = [&] {
    model::ModelHandle m(checkpoint);
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= jobs.size()) return;
      try {
        results[k] = swap_distance(m, d.heads[jobs[k].first], d.heads[jobs[k].second], states, options);
      } catch (const IncompatibleSwapError&) {
        results[k].reset();
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
        return;
      }
    }
  };
  const int w = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < w; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  d.values.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    const auto [i, j] = jobs[k];
    if (!results[k]) {
      d.excluded.emplace_back(d.heads[i], d.heads[j]);
      d.values[i][j] = d.values[j][i] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    d.values[i][j] = d.values[j][i] = results[k]->distance;
    d.pairs.push_back(std::move(*results[k]));
  }
  return d;
}

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double number_from(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

ComponentRef component_from(const json& j) {
  const auto c = model::parse_component(j.get<std::string>());
  if (!c) throw ValidationError("unreadable component '" + j.get<std::string>() + "'");
  return *c;
}

}  // namespace

json to_json(const DistanceMatrix& d) {
  json heads = json::array();
  for (const auto& h : d.heads) heads.push_back(model::to_string(h));
  json values = json::array();
  for (const auto& row : d.values) {
    json r = json::array();
    for (double v : row) r.push_back(number(v));
    values.push_back(r);
  }
  json pairs = json::array();
  for (const auto& p : d.pairs) {
    pairs.push_back({{"a", model::to_string(p.a)},
                     {"b", model::to_string(p.b)},
                     {"kq", p.kq},
                     {"ov", p.ov},
                     {"distance", p.distance},
                     {"kq_per_prompt", p.kq_per_prompt},
                     {"ov_per_prompt", p.ov_per_prompt}});
  }
  json excluded = json::array();
  for (const auto& [a, b] : d.excluded) excluded.push_back({model::to_string(a), model::to_string(b)});
  return {{"schema", "interp.distance_matrix"},
          {"schema_version", DistanceMatrix::kSchemaVersion},
          {"task", d.task},
          {"model", d.model},
          {"prompt_seed", d.prompt_seed},
          {"prompts", d.prompts},
          {"options",
           {{"average_divergences", d.options.average_divergences}, {"one_directional", d.options.one_directional}}},
          {"heads", heads},
          {"values", values},
          {"pairs", pairs},
          {"excluded", excluded}};
}

DistanceMatrix distance_matrix_from_json(const json& j) {
  if (j.value("schema", "") != "interp.distance_matrix") throw ValidationError("not a distance matrix file");
  DistanceMatrix d;
  d.task = j.at("task");
  d.model = j.at("model");
  d.prompt_seed = j.at("prompt_seed");
  d.prompts = j.at("prompts").get<std::vector<std::string>>();
  d.options.average_divergences = j.at("options").at("average_divergences");
  d.options.one_directional = j.at("options").at("one_directional");
  for (const auto& h : j.at("heads")) d.heads.push_back(component_from(h));
  for (const auto& row : j.at("values")) {
    std::vector<double> r;
    for (const auto& v : row) r.push_back(number_from(v));
    d.values.push_back(std::move(r));
  }
  for (const auto& p : j.at("pairs")) {
    d.pairs.push_back({component_from(p.at("a")),
                       component_from(p.at("b")), p.at("kq"), p.at("ov"), p.at("distance"),
                       p.at("kq_per_prompt").get<std::vector<double>>(), p.at("ov_per_prompt").get<std::vector<double>>()});
  }
  for (const auto& e : j.at("excluded")) {
    d.excluded.emplace_back(component_from(e.at(0)),
                            component_from(e.at(1)));
  }
  if (d.values.size() != d.heads.size()) throw ValidationError("distance matrix shape mismatch");
  return d;
}

std::string to_csv(const DistanceMatrix& d) {
  std::ostringstream out;
  char buf[32];
  out << "head";
  for (const auto& h : d.heads) out << ",\"" << model::to_string(h) << "\"";
  out << "\n";
  for (std::size_t i = 0; i < d.heads.size(); ++i) {
    out << "\"" << model::to_string(d.heads[i]) << "\"";
    for (double v : d.values[i]) {
      if (std::isfinite(v)) {
        std::snprintf(buf, sizeof buf, "%.10f", v);
        out << "," << buf;
      } else {
        out << ",";
      }
    }
    out << "\n";
  }
  return out.str();
}

std::vector<double> silhouette_samples(const std::vector<std::vector<double>>& distances, const std::vector<int>& labels) {
  const std::size_t n = labels.size();
  if (distances.size() != n) throw ValidationError("distance matrix and labels differ in size");
  std::map<int, int> sizes;
  for (int l : labels) ++sizes[l];
  if (sizes.size() < 2) throw ValidationError("silhouette needs at least 2 clusters");
  std::vector<double> s(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (distances[i].size() != n) throw ValidationError("distance matrix is not square");
    if (sizes[labels[i]] == 1) continue;
    std::map<int, double> sum;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double v = distances[i][j];
      if (!std::isfinite(v)) throw ValidationError("distance matrix has a missing entry");
      sum[labels[j]] += v;
    }
    const double a = sum[labels[i]] / (sizes[labels[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [l, total] : sum) {
      if (l != labels[i]) b = std::min(b, total / sizes[l]);
    }
    const double denom = std::max(a, b);
    s[i] = denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return s;
}

std::vector<int> labels_for(const DistanceMatrix& d, const eval::Partition& clustering) {
  std::vector<int> labels(d.heads.size(), -1);
  for (std::size_t k = 0; k < clustering.clusters.size(); ++k) {
    for (const auto& c : clustering.clusters[k]) {
      const int i = d.index_of(c);
      if (i < 0) {
        if (c.is_head()) throw ValidationError("clustering names " + model::to_string(c) + ", which is not in the matrix");
        continue;
      }
      if (labels[static_cast<std::size_t>(i)] >= 0) {
        throw ValidationError("clustering assigns " + model::to_string(c) + " more than once");
      }
      labels[static_cast<std::size_t>(i)] = static_cast<int>(k);
    }
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) throw ValidationError("clustering leaves " + model::to_string(d.heads[i]) + " unassigned");
  }
  return labels;
}

ClusterQuality silhouette(const DistanceMatrix& d, const eval::Partition& clustering, const std::string& id) {
  ClusterQuality q;
  q.id = id;
  q.heads = d.heads;
  q.per_head = silhouette_samples(d.values, labels_for(d, clustering));
  double sum = 0.0;
  for (double v : q.per_head) sum += v;
  q.mean = sum / static_cast<double>(q.per_head.size());
  return q;
}

std::vector<std::vector<int>> random_clusterings(const std::vector<int>& reference, int n, std::uint64_t seed) {
  if (n < 0) throw ValidationError("negative clustering count");
  util::Rng rng(seed);
  std::vector<std::vector<int>> out;
  for (int k = 0; k < n; ++k) {
    auto labels = reference;
    rng.shuffle(labels);
    out.push_back(std::move(labels));
  }
  return out;
}

namespace {

// Tie-group statistics: sum t(t-1), sum t(t-1)(t-2), sum t(t-1)(2t+5).
struct Ties {
  double v0 = 0.0, v1 = 0.0, v2 = 0.0;
  bool any = false;
};

Ties tie_stats(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  Ties t;
  for (std::size_t i = 0; i < x.size();) {
    std::size_t j = i;
    while (j < x.size() && x[j] == x[i]) ++j;
    const double c = static_cast<double>(j - i);
    if (c > 1) {
      t.any = true;
      t.v0 += c * (c - 1);
      t.v1 += c * (c - 1) * (c - 2);
      t.v2 += c * (c - 1) * (2 * c + 5);
    }
    i = j;
  }
  return t;
}

// Number of permutations of n elements with each inversion count.
std::vector<double> mahonian(int n) {
  std::vector<double> counts{1.0};
  for (int k = 2; k <= n; ++k) {
    std::vector<double> next(counts.size() + static_cast<std::size_t>(k - 1), 0.0);
    for (std::size_t i = 0; i < counts.size(); ++i) {
      for (int s = 0; s < k; ++s) next[i + static_cast<std::size_t>(s)] += counts[i];
    }
    counts = std::move(next);
  }
  return counts;
}

}  // namespace

KendallResult kendall_tau(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ValidationError("kendall_tau inputs differ in length");
  const int n = static_cast<int>(x.size());
  if (n < 2) throw ValidationError("kendall_tau needs at least 2 observations");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw ValidationError("kendall_tau inputs must be finite");
  }
  double concordant = 0.0;
  double discordant = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double s = (x[static_cast<std::size_t>(i)] - x[static_cast<std::size_t>(j)]) *
                       (y[static_cast<std::size_t>(i)] - y[static_cast<std::size_t>(j)]);
      if (s > 0) concordant += 1;
      if (s < 0) discordant += 1;
    }
  }
  const auto tx = tie_stats(x);
  const auto ty = tie_stats(y);
  const double n0 = n * (n - 1) / 2.0;
  KendallResult r;
  r.n = n;
  const double denom = std::sqrt((n0 - tx.v0 / 2) * (n0 - ty.v0 / 2));
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (denom == 0.0) {
    r.tau = nan;
    r.p_value = nan;
    return r;
  }
  const double s = concordant - discordant;
  r.tau = std::clamp(s / denom, -1.0, 1.0);
  if (n <= 10 && !tx.any && !ty.any) {
    const auto counts = mahonian(n);
    double total = 0.0;
    for (double c : counts) total += c;
    const auto c = static_cast<std::size_t>(std::min(discordant, n0 - discordant));
    double tail = 0.0;
    for (std::size_t k = 0; k <= c; ++k) tail += counts[k];
    r.p_value = std::min(1.0, 2.0 * tail / total);
    r.exact = true;
    return r;
  }
  const double nn = static_cast<double>(n);
  double var = (nn * (nn - 1) * (2 * nn + 5) - tx.v2 - ty.v2) / 18.0;
  var += tx.v0 * ty.v0 / (2 * nn * (nn - 1));
  if (n > 2) var += tx.v1 * ty.v1 / (9 * nn * (nn - 1) * (nn - 2));
  if (var <= 0.0) {
    r.p_value = nan;
    return r;
  }
  const double z = s / std::sqrt(var);
  r.p_value = std::erfc(std::abs(z) / std::sqrt(2.0));
  return r;
}

std::vector<ProfileEntry> head_profile(const DistanceMatrix& d, const ComponentRef& head,
                                       const eval::Partition& clustering) {
  const int i = d.index_of(head);
  if (i < 0) throw NotFoundError(model::to_string(head) + " is not in the distance matrix");
  std::vector<ProfileEntry> out;
  for (std::size_t k = 0; k < clustering.clusters.size(); ++k) {
    ProfileEntry e;
    e.cluster = clustering.names[k];
    for (const auto& c : clustering.clusters[k]) {
      const int j = d.index_of(c);
      if (j < 0 || j == i) continue;
      e.heads.push_back(c);
      e.distances.push_back(d.values[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
    }
    if (e.distances.empty()) continue;
    double sum = 0.0;
    for (double v : e.distances) sum += v;
    e.mean = sum / static_cast<double>(e.distances.size());
    e.min = *std::min_element(e.distances.begin(), e.distances.end());
    e.max = *std::max_element(e.distances.begin(), e.distances.end());
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace interp::intrinsic
