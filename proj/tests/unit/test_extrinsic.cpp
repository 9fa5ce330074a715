#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "interp/error.hpp"
#include "interp/eval/extrinsic.hpp"
#include "interp/util/random.hpp"

using namespace interp;
using namespace interp::eval;
using model::ComponentRef;

namespace {

const tasks::TaskDefinition& ioi() {
  static const auto t = tasks::load_task_definition("ioi-gpt2");
  return t;
}

ComponentRef h(int l, int hd) { return {l, hd}; }

Partition make(std::vector<std::pair<std::string, std::vector<ComponentRef>>> cs) {
  Partition p;
  for (auto& [n, c] : cs) {
    p.names.push_back(n);
    p.clusters.push_back(c);
  }
  return p;
}

// Exhaustive oracle: pad to square and try every permutation.
int brute_force(const Partition& a, const Partition& b) {
  const std::size_t n = std::max(a.clusters.size(), b.clusters.size());
  std::vector<std::vector<int>> w(n, std::vector<int>(n, 0));
  for (std::size_t i = 0; i < a.clusters.size(); ++i) {
    for (std::size_t j = 0; j < b.clusters.size(); ++j) {
      for (const auto& x : a.clusters[i]) {
        for (const auto& y : b.clusters[j]) w[i][j] += x == y;
      }
    }
  }
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  int best = 0;
  do {
    int s = 0;
    for (std::size_t i = 0; i < n; ++i) s += w[i][perm[i]];
    best = std::max(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Partition random_partition(util::Rng& rng, const std::vector<ComponentRef>& items, int max_clusters,
                           const std::string& prefix) {
  const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_clusters)));
  Partition p;
  for (int i = 0; i < k; ++i) {
    p.names.push_back(prefix + std::to_string(i));
    p.clusters.emplace_back();
  }
  for (const auto& c : items) p.clusters[rng.below(static_cast<std::uint64_t>(k))].push_back(c);
  // Drop empty clusters, as the clustering stage does.
  Partition out;
  for (std::size_t i = 0; i < p.clusters.size(); ++i) {
    if (!p.clusters[i].empty()) {
      out.names.push_back(p.names[i]);
      out.clusters.push_back(p.clusters[i]);
    }
  }
  return out;
}

std::vector<ComponentRef> items(int n) {
  std::vector<ComponentRef> v;
  for (int i = 0; i < n; ++i) v.push_back(h(i / 4, i % 4));
  return v;
}

agent::Clustering clustering_of(const tasks::ExpertClustering& e) {
  agent::Clustering c;
  for (const auto& cl : e.clusters) c.clusters.push_back({cl.name, cl.components, cl.description, "", cl.position});
  return c;
}

}  // namespace

TEST(Hungarian, TwoThirdsExample) {
  const auto p = make({{"A", {h(0, 1), h(0, 2)}}, {"B", {h(0, 3)}}});
  const auto e = make({{"X", {h(0, 1), h(0, 3)}}, {"Y", {h(0, 2)}}});
  const auto r = component_assignment_accuracy(p, e);
  EXPECT_EQ(r.matched, 2);
  EXPECT_EQ(r.total, 3);
  EXPECT_DOUBLE_EQ(r.accuracy, 2.0 / 3.0);
  EXPECT_EQ(brute_force(p, e), 2);
  // A<->Y and B<->X is the unique optimum.
  EXPECT_EQ(r.pairs, (std::vector<std::pair<int, int>>{{0, 1}, {1, 0}}));
}

TEST(Hungarian, IdentityScoresOne) {
  const auto e = partition_of(ioi().expert.canonical());
  EXPECT_DOUBLE_EQ(component_assignment_accuracy(e, e).accuracy, 1.0);
}

TEST(Hungarian, SingletonsAgainstExpert) {
  const auto e = partition_of(ioi().expert.canonical());
  Partition s;
  for (const auto& c : ioi().expert.canonical().components()) {
    s.names.push_back(model::to_string(c));
    s.clusters.push_back({c});
  }
  const auto r = component_assignment_accuracy(s, e);
  EXPECT_LT(r.accuracy, 1.0);
  EXPECT_EQ(r.matched, static_cast<int>(e.clusters.size()));
  EXPECT_DOUBLE_EQ(component_assignment_accuracy(s, s).accuracy, 1.0);

  util::Rng rng(29);
  for (int trial = 0; trial < 50; ++trial) {
    const auto xs = items(1 + static_cast<int>(rng.below(7)));
    Partition single;
    for (const auto& c : xs) {
      single.names.push_back(model::to_string(c));
      single.clusters.push_back({c});
    }
    const auto ex = random_partition(rng, xs, 7, "e");
    const auto got = component_assignment_accuracy(single, ex);
    ASSERT_EQ(got.matched, brute_force(single, ex));
    ASSERT_EQ(got.accuracy == 1.0, ex.clusters.size() == xs.size());
  }
}

TEST(Hungarian, MatchesExhaustiveOracle) {
  util::Rng rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const auto xs = items(1 + static_cast<int>(rng.below(12)));
    const auto a = random_partition(rng, xs, 7, "p");
    const auto b = random_partition(rng, xs, 7, "e");
    const auto r = component_assignment_accuracy(a, b);
    ASSERT_EQ(r.matched, brute_force(a, b)) << "trial " << trial;
    ASSERT_GE(r.accuracy, 0.0);
    ASSERT_LE(r.accuracy, 1.0);
  }
}

TEST(Hungarian, SymmetricWhenCountsEqual) {
  util::Rng rng(3);
  int checked = 0;
  for (int trial = 0; trial < 400 && checked < 100; ++trial) {
    const auto xs = items(2 + static_cast<int>(rng.below(10)));
    const auto a = random_partition(rng, xs, 5, "p");
    const auto b = random_partition(rng, xs, 5, "e");
    if (a.clusters.size() != b.clusters.size()) continue;
    ++checked;
    EXPECT_EQ(component_assignment_accuracy(a, b).matched, component_assignment_accuracy(b, a).matched);
  }
  EXPECT_GT(checked, 20);
}

TEST(Hungarian, RelabelInvariant) {
  util::Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto xs = items(3 + static_cast<int>(rng.below(9)));
    const auto a = random_partition(rng, xs, 6, "p");
    const auto b = random_partition(rng, xs, 6, "e");
    auto a2 = a;
    const auto perm = rng.permutation(a.clusters.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
      a2.clusters[i] = a.clusters[perm[i]];
      a2.names[i] = "renamed" + std::to_string(rng.below(1000)) + "_" + std::to_string(i);
    }
    EXPECT_DOUBLE_EQ(component_assignment_accuracy(a, b).accuracy, component_assignment_accuracy(a2, b).accuracy);
  }
}

TEST(Hungarian, TiesResolvedByName) {
  const auto p = make({{"b", {h(0, 0)}}, {"a", {h(0, 1)}}});
  const auto e = make({{"x", {h(0, 0), h(0, 1)}}});
  const auto r = component_assignment_accuracy(p, e);
  EXPECT_EQ(r.matched, 1);
  // Both matchings score 1; the first name in order wins.
  EXPECT_EQ(r.pairs, (std::vector<std::pair<int, int>>{{1, 0}}));
}

TEST(Hungarian, NonPartitionRejected) {
  const auto e = make({{"X", {h(0, 1), h(0, 2)}}});
  EXPECT_THROW(component_assignment_accuracy(make({{"A", {h(0, 1)}}, {"B", {h(0, 1), h(0, 2)}}}), e), ValidationError);
  EXPECT_THROW(component_assignment_accuracy(make({{"A", {h(0, 1)}}}), e), ValidationError);
  EXPECT_THROW(component_assignment_accuracy(make({{"A", {h(0, 1), h(0, 3)}}}), e), ValidationError);
  Partition empty;
  EXPECT_THROW(component_assignment_accuracy(empty, empty), ValidationError);
}

TEST(Hungarian, RectangularWeights) {
  EXPECT_EQ(hungarian_max({{1, 5, 2}}), (std::vector<int>{1}));
  EXPECT_EQ(hungarian_max({{3}, {7}, {1}}), (std::vector<int>{-1, 0, -1}));
  EXPECT_EQ(hungarian_max({{4, 1}, {5, 0}}), (std::vector<int>{1, 0}));
  EXPECT_TRUE(hungarian_max({}).empty());
}

TEST(FunctionalityAccuracy, ComponentExamples) {
  const auto& expert = ioi().expert;
  const auto canon = expert.canonical();
  const auto comps = canon.components();
  ASSERT_EQ(comps.size(), 18u);
  std::vector<std::pair<ComponentRef, std::string>> right, none, partial;
  for (std::size_t i = 0; i < comps.size(); ++i) {
    const auto name = canon.clusters[*canon.cluster_of(comps[i])].name;
    right.emplace_back(comps[i], name);
    none.emplace_back(comps[i], kNoMatch);
    partial.emplace_back(comps[i], i < 12 ? name : kNoMatch);
  }
  EXPECT_DOUBLE_EQ(component_functionality_accuracy(right, expert), 1.0);
  EXPECT_DOUBLE_EQ(component_functionality_accuracy(none, expert), 0.0);
  EXPECT_DOUBLE_EQ(component_functionality_accuracy(partial, expert), 12.0 / 18.0);
  EXPECT_THROW(component_functionality_accuracy({}, expert), ValidationError);
}

TEST(FunctionalityAccuracy, CrossListedComponentsCountForEveryCluster) {
  const auto t = tasks::load_task_definition("entity-tracking");
  const auto& raw = t.expert;
  for (const auto& cl : raw.clusters) {
    for (const auto& c : cl.components) {
      EXPECT_DOUBLE_EQ(component_functionality_accuracy({{c, cl.name}}, raw), 1.0);
    }
  }
}

TEST(FunctionalityAccuracy, ClusterExample) {
  tasks::ExpertClustering expert;
  expert.clusters = {{"X", {h(0, 0), h(0, 1), h(0, 2)}, "", "", ""}, {"Y", {h(0, 3)}, "", "", ""}};
  agent::Clustering pred;
  pred.clusters = {{"A", {h(0, 0), h(0, 1)}, "", "", ""}, {"B", {h(0, 2), h(0, 3)}, "", "", ""}};
  EXPECT_DOUBLE_EQ(cluster_functionality_accuracy(pred, {"X", "Y"}, expert), 0.75);
  EXPECT_DOUBLE_EQ(cluster_functionality_accuracy(pred, {kNoMatch, kNoMatch}, expert), 0.0);
  EXPECT_THROW(cluster_functionality_accuracy(pred, {"X"}, expert), ValidationError);
}

TEST(FunctionalityAccuracy, ExpertAsPredictionScoresOne) {
  const auto canon = ioi().expert.canonical();
  const auto pred = clustering_of(canon);
  std::vector<std::string> verdicts;
  for (const auto& c : canon.clusters) verdicts.push_back(c.name);
  EXPECT_DOUBLE_EQ(cluster_functionality_accuracy(pred, verdicts, ioi().expert), 1.0);
}

TEST(FunctionalityAccuracy, ClusterMatchesNaiveReimplementation) {
  const auto& expert = ioi().expert;
  const auto canon = expert.canonical();
  const auto comps = canon.components();
  std::vector<std::string> names;
  for (const auto& c : canon.clusters) names.push_back(c.name);
  names.push_back(kNoMatch);
  util::Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ComponentRef> xs(comps.begin(), comps.end());
    rng.shuffle(xs);
    const int k = 1 + static_cast<int>(rng.below(6));
    agent::Clustering pred;
    for (int i = 0; i < k; ++i) pred.clusters.push_back({"c" + std::to_string(i), {}, "", "", ""});
    for (const auto& c : xs) pred.clusters[rng.below(static_cast<std::uint64_t>(k))].components.push_back(c);
    std::erase_if(pred.clusters, [](const agent::Cluster& c) { return c.components.empty(); });
    std::vector<std::string> verdicts;
    for (std::size_t i = 0; i < pred.clusters.size(); ++i) verdicts.push_back(rng.pick(names));

    double sum = 0.0;
    for (std::size_t j = 0; j < pred.clusters.size(); ++j) {
      double hits = 0.0;
      for (const auto& c : pred.clusters[j].components) {
        const auto owner = canon.cluster_of(c);
        hits += owner && canon.clusters[*owner].name == verdicts[j] ? 1.0 : 0.0;
      }
      sum += hits / static_cast<double>(pred.clusters[j].components.size());
    }
    const double naive = sum / static_cast<double>(pred.clusters.size());
    const double got = cluster_functionality_accuracy(pred, verdicts, expert);
    ASSERT_NEAR(got, naive, 1e-12);
    ASSERT_GE(got, 0.0);
    ASSERT_LE(got, 1.0);
  }
}

TEST(Judge, SystemPromptListsNamesAndDescriptionsOnly) {
  const auto s = judge_system_prompt(ioi());
  for (const auto& c : ioi().expert.clusters) {
    EXPECT_NE(s.find("<name>" + c.name + "</name>"), std::string::npos);
    EXPECT_NE(s.find(c.description), std::string::npos);
  }
  EXPECT_NE(s.find(ioi().description), std::string::npos);
  EXPECT_EQ(s.find("(9, 9)"), std::string::npos);
  EXPECT_EQ(s.find('{'), std::string::npos);
}

TEST(Judge, ParseVerdict) {
  const std::vector<std::string> names{"Name Mover", "S-Inhibition"};
  EXPECT_EQ(parse_verdict("<match>Name Mover</match>", names), "Name Mover");
  EXPECT_EQ(parse_verdict("thinking <match> name mover. </match>", names), "Name Mover");
  EXPECT_EQ(parse_verdict("<match>no-match</match>", names), kNoMatch);
  EXPECT_EQ(parse_verdict("<match>x</match> then <match>S-Inhibition</match>", names), "S-Inhibition");
  EXPECT_FALSE(parse_verdict("Name Mover", names));
  EXPECT_FALSE(parse_verdict("<match>Induction</match>", names));
}

TEST(Judge, CorrectsOnceThenNoMatch) {
  const auto first = ioi().expert.clusters.front().name;
  llm::ScriptedClient client([&](const llm::ChatRequest& r, int) -> std::string {
    const auto& text = r.messages.front().content;
    if (text.find("good") != std::string::npos) return "<match>" + first + "</match>";
    if (text.find("late") != std::string::npos) {
      return r.messages.size() == 1 ? "I think it is a mover" : "<match>" + first + "</match>";
    }
    return "<match>Something Else</match>";
  });
  const auto a = judge_match({{"a", "a good head"}, {"b", "a late answer"}, {"c", "bad"}, {"d", "  "}}, ioi(), client);
  EXPECT_EQ(a.at("a"), first);
  EXPECT_EQ(a.at("b"), first);
  EXPECT_EQ(a.at("c"), kNoMatch);
  EXPECT_EQ(a.at("d"), kNoMatch);
  EXPECT_EQ(client.calls(), 1 + 2 + 2);
  ASSERT_EQ(a.records.size(), 4u);
  EXPECT_EQ(a.records[2].request_hashes.size(), 2u);
  EXPECT_TRUE(a.records[3].request_hashes.empty());
  EXPECT_EQ(a.template_hash.size(), 64u);
  EXPECT_THROW(a.at("zzz"), NotFoundError);
  EXPECT_THROW(judge_match({{"a", "x"}, {"a", "y"}}, ioi(), client), ValidationError);

  const auto back = judge_from_json(to_json(a));
  EXPECT_EQ(back.matches, a.matches);
  EXPECT_EQ(to_json(back).dump(), to_json(a).dump());
}

TEST(Judge, ManyToOneAllowed) {
  const auto first = ioi().expert.clusters.front().name;
  llm::ScriptedClient client(std::vector<std::string>(3, "<match>" + first + "</match>"));
  const auto a = judge_match({{"x", "1"}, {"y", "2"}, {"z", "3"}}, ioi(), client);
  for (const auto& [id, v] : a.matches) EXPECT_EQ(v, first);
}

TEST(Metrics, SummaryUsesSampleStd) {
  const auto s = summarize({0.5, 0.75, 1.0});
  EXPECT_DOUBLE_EQ(s.mean, 0.75);
  EXPECT_DOUBLE_EQ(s.std, 0.25);
  EXPECT_EQ(summarize({0.4}).std, 0.0);
  EXPECT_EQ(summarize({}).n, 0);
}

TEST(Metrics, AggregateSerializes) {
  std::vector<MetricsReport> rs;
  for (int i = 0; i < 15; ++i) rs.push_back({"ioi-gpt2", "agentic", i / 5, i % 5, 0.5 + i * 0.01, 0.6, 0.7, 18, 5});
  const auto agg = aggregate(rs);
  EXPECT_EQ(agg.component_functionality.n, 15);
  EXPECT_NEAR(agg.component_functionality.mean, 0.57, 1e-12);
  const auto j = to_json(agg);
  EXPECT_EQ(j["reports"].size(), 15u);
  EXPECT_EQ(j["task"], "ioi-gpt2");
  const auto csv = to_csv(agg);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 15 + 2);
  EXPECT_NE(csv.find("ioi-gpt2,agentic,mean,,0.570000"), std::string::npos);
}

TEST(Metrics, ExplanationsFromResults) {
  agent::FinalHypothesis f;
  f.component = h(9, 9);
  f.text = "long";
  f.summarized_description = "short";
  const auto xs = component_explanations({f});
  ASSERT_EQ(xs.size(), 1u);
  EXPECT_EQ(xs[0].id, "(9, 9)");
  EXPECT_EQ(xs[0].text, "short");
  agent::Clustering c;
  c.clusters = {{"Movers", {h(9, 9)}, "copies names", "", "END"}};
  const auto ys = cluster_explanations(c);
  EXPECT_EQ(ys[0].id, "cluster:0");
  EXPECT_NE(ys[0].text.find("copies names"), std::string::npos);
}
