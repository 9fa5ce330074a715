#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "interp/error.hpp"
#include "interp/eval/intrinsic.hpp"
#include "interp/util/random.hpp"
#include "test_support.hpp"

using namespace interp;
using namespace interp::intrinsic;
using model::ComponentRef;

namespace {

const nlohmann::json& stats() {
  static const auto j = testing_support::read_json(testing_support::data_dir() / "stats_reference.json");
  return j;
}

model::ModelHandle& handle() {
  static model::ModelHandle m(testing_support::toy());
  return m;
}

const tasks::TaskBundle& ioi() {
  static const auto b = tasks::load_task("ioi-gpt2", 40, 0, {&handle()});
  return b;
}

std::vector<std::string> few_prompts(int n) {
  auto t = ioi().texts();
  t.resize(static_cast<std::size_t>(n));
  return t;
}

// Textbook formula, written independently of the library.
double naive_js(const std::vector<double>& p, const std::vector<double>& q) {
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = (p[i] + q[i]) / 2;
    if (p[i] > 0) a += p[i] * std::log(p[i] / m);
    if (q[i] > 0) b += q[i] * std::log(q[i] / m);
  }
  return std::sqrt(std::max(0.0, (a + b) / 2 / std::log(2.0)));
}

std::shared_ptr<const model::Checkpoint> rebuilt(const ComponentRef& a, const ComponentRef& b, model::SwapKind kind) {
  auto copy = std::make_shared<model::Checkpoint>(*testing_support::toy());
  auto& ha = copy->weights.layers[static_cast<std::size_t>(a.layer)].heads[static_cast<std::size_t>(*a.head)];
  auto& hb = copy->weights.layers[static_cast<std::size_t>(b.layer)].heads[static_cast<std::size_t>(*b.head)];
  if (kind == model::SwapKind::kKQ) {
    std::swap(ha.w_q, hb.w_q);
    std::swap(ha.w_k, hb.w_k);
    std::swap(ha.b_q, hb.b_q);
    std::swap(ha.b_k, hb.b_k);
  } else {
    std::swap(ha.w_v, hb.w_v);
    std::swap(ha.w_o, hb.w_o);
    std::swap(ha.b_v, hb.b_v);
  }
  return copy;
}

eval::Partition two_way(const std::vector<ComponentRef>& a, const std::vector<ComponentRef>& b) {
  return {{"A", "B"}, {a, b}};
}

}  // namespace

TEST(JsDistance, Boundaries) {
  const std::vector<double> p{0.2, 0.3, 0.5};
  EXPECT_EQ(js_distance(p, p), 0.0);
  EXPECT_DOUBLE_EQ(js_distance(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 1.0);
  // Hand computation for (1/2, 1/2) against (1, 0).
  const double jsd = 0.5 * (0.5 * std::log2(0.5 / 0.75) + 0.5 * std::log2(0.5 / 0.25)) + 0.5 * std::log2(1.0 / 0.75);
  EXPECT_NEAR(js_distance(std::vector<double>{0.5, 0.5}, std::vector<double>{1, 0}), std::sqrt(jsd), 1e-12);
  EXPECT_THROW(js_distance(std::vector<double>{1}, std::vector<double>{0.5, 0.5}), ValidationError);
}

TEST(JsDistance, MatchesScipy) {
  for (const auto& c : stats()["jensen_shannon"]) {
    const auto p = c["p"].get<std::vector<double>>();
    const auto q = c["q"].get<std::vector<double>>();
    ASSERT_NEAR(js_distance(p, q), c["distance"].get<double>(), 1e-9);
    ASSERT_NEAR(js_distance(p, q), naive_js(p, q), 1e-12);
  }
}

TEST(JsDistance, MetricAxioms) {
  util::Rng rng(41);
  auto draw = [&] {
    std::vector<double> v(6);
    double s = 0;
    for (auto& x : v) s += (x = rng.uniform());
    for (auto& x : v) x /= s;
    return v;
  };
  for (int i = 0; i < 300; ++i) {
    const auto p = draw(), q = draw(), r = draw();
    EXPECT_NEAR(js_distance(p, q), js_distance(q, p), 1e-15);
    EXPECT_LE(js_distance(p, r), js_distance(p, q) + js_distance(q, r) + 1e-12);
    EXPECT_GE(js_distance(p, q), 0.0);
    EXPECT_LE(js_distance(p, q), 1.0);
  }
}

TEST(SwapDistance, SelfSwapIsZero) {
  const auto states = prepare_prompts(handle(), few_prompts(4));
  const auto d = swap_distance(handle(), {9, 9}, {9, 9}, states);
  EXPECT_EQ(d.distance, 0.0);
  EXPECT_EQ(d.kq, 0.0);
  EXPECT_EQ(d.ov, 0.0);
}

TEST(SwapDistance, SymmetricAndBounded) {
  const auto states = prepare_prompts(handle(), few_prompts(6));
  const auto ab = swap_distance(handle(), {9, 9}, {10, 0}, states);
  const auto ba = swap_distance(handle(), {10, 0}, {9, 9}, states);
  EXPECT_DOUBLE_EQ(ab.distance, ba.distance);
  EXPECT_GT(ab.distance, 0.0);
  EXPECT_LE(ab.distance, 1.0);
  EXPECT_DOUBLE_EQ(ab.distance, 0.5 * (ab.kq + ab.ov));
  ASSERT_EQ(ab.kq_per_prompt.size(), 6u);
  double mean = 0;
  for (double v : ab.kq_per_prompt) mean += v / 6;
  EXPECT_NEAR(ab.kq, mean, 1e-15);
}

TEST(SwapDistance, MatchesRebuiltModels) {
  const auto prompts = few_prompts(5);
  const std::vector<std::pair<ComponentRef, ComponentRef>> pairs{{{9, 9}, {10, 0}}, {{0, 1}, {3, 0}}, {{7, 3}, {7, 9}}};
  for (const auto& [a, b] : pairs) {
    const auto states = prepare_prompts(handle(), prompts);
    const auto got = swap_distance(handle(), a, b, states);
    double expect = 0.0;
    for (const auto kind : {model::SwapKind::kKQ, model::SwapKind::kOV}) {
      model::ModelHandle swapped(rebuilt(a, b, kind));
      double sum = 0.0;
      for (const auto& p : prompts) sum += naive_js(handle().forward(p).probabilities, swapped.forward(p).probabilities);
      expect += 0.5 * sum / static_cast<double>(prompts.size());
    }
    EXPECT_NEAR(got.distance, expect, 1e-5) << model::to_string(a) << " " << model::to_string(b);
  }
}

TEST(SwapDistance, Variants) {
  const auto states = prepare_prompts(handle(), few_prompts(4));
  const auto base = swap_distance(handle(), {9, 9}, {10, 0}, states);
  const auto div = swap_distance(handle(), {9, 9}, {10, 0}, states, {.average_divergences = true});
  double ss = 0;
  for (double v : base.kq_per_prompt) ss += v * v / 4;
  EXPECT_NEAR(div.kq, std::sqrt(ss), 1e-12);
  EXPECT_GE(div.kq + 1e-15, base.kq);  // root of mean >= mean of roots
  const auto one = swap_distance(handle(), {9, 9}, {10, 0}, states, {.one_directional = true});
  const auto one_rev = swap_distance(handle(), {10, 0}, {9, 9}, states, {.one_directional = true});
  EXPECT_NEAR(one.distance, one_rev.distance, 1e-15);
  EXPECT_NE(one.distance, base.distance);
  EXPECT_THROW(swap_distance(handle(), {9, 9}, {8, std::nullopt}, states), UnsupportedComponentError);
  EXPECT_THROW(swap_distance(handle(), {9, 9}, {99, 0}, states), AddressingError);
}

TEST(DistanceMatrixTest, InvariantsAndDeterminism) {
  const std::vector<ComponentRef> heads{{10, 0}, {9, 9}, {9, 6}, {7, 3}, {8, std::nullopt}, {0, 1}};
  const auto prompts = few_prompts(5);
  const auto d1 = distance_matrix(handle().shared_checkpoint(), "ioi-gpt2", prompts, 0, heads, {}, 1);
  const auto d3 = distance_matrix(handle().shared_checkpoint(), "ioi-gpt2", prompts, 0, heads, {}, 3);
  ASSERT_EQ(d1.heads.size(), 5u);
  EXPECT_EQ(d1.heads.front(), (ComponentRef{0, 1}));
  EXPECT_EQ(d1.pairs.size(), 10u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(d1.values[i][i], 0.0);
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_EQ(d1.values[i][j], d1.values[j][i]);
      EXPECT_TRUE(std::isfinite(d1.values[i][j]));
      EXPECT_GE(d1.values[i][j], 0.0);
      EXPECT_LE(d1.values[i][j], 1.0);
    }
  }
  EXPECT_EQ(to_json(d1).dump(), to_json(d3).dump());
  EXPECT_EQ(to_csv(d1), to_csv(d3));
  const auto back = distance_matrix_from_json(to_json(d1));
  EXPECT_EQ(to_json(back).dump(), to_json(d1).dump());
  const auto csv = to_csv(d1);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  EXPECT_DOUBLE_EQ(d1.at({9, 9}, {10, 0}), d1.at({10, 0}, {9, 9}));
}

TEST(Silhouette, TwoPerfectClusters) {
  const std::vector<std::vector<double>> d{{0, 0, 1, 1}, {0, 0, 1, 1}, {1, 1, 0, 0}, {1, 1, 0, 0}};
  for (double s : silhouette_samples(d, {0, 0, 1, 1})) EXPECT_DOUBLE_EQ(s, 1.0);
  EXPECT_THROW(silhouette_samples(d, {0, 0, 0, 0}), ValidationError);
  const auto single = silhouette_samples(d, {0, 1, 1, 1});
  EXPECT_EQ(single[0], 0.0);
}

TEST(Silhouette, MatchesSklearn) {
  for (const auto& c : stats()["silhouette"]) {
    const auto d = c["distances"].get<std::vector<std::vector<double>>>();
    const auto labels = c["labels"].get<std::vector<int>>();
    const auto want = c["samples"].get<std::vector<double>>();
    const auto got = silhouette_samples(d, labels);
    for (std::size_t i = 0; i < got.size(); ++i) {
      ASSERT_NEAR(got[i], want[i], 1e-12);
      ASSERT_GE(got[i], -1.0);
      ASSERT_LE(got[i], 1.0);
    }
    auto scaled = d;
    for (auto& row : scaled) {
      for (auto& v : row) v *= 3.5;
    }
    const auto s2 = silhouette_samples(scaled, labels);
    for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(s2[i], got[i], 1e-12);
  }
}

TEST(Silhouette, FromPartition) {
  intrinsic::DistanceMatrix d;
  d.heads = {{0, 0}, {0, 1}, {1, 0}};
  d.values = {{0, 0.1, 0.9}, {0.1, 0, 0.8}, {0.9, 0.8, 0}};
  const auto q = silhouette(d, two_way({{0, 0}, {0, 1}, {5, std::nullopt}}, {{1, 0}}), "x");
  EXPECT_EQ(q.id, "x");
  EXPECT_NEAR(q.per_head[0], (0.9 - 0.1) / 0.9, 1e-12);
  EXPECT_NEAR(q.per_head[1], (0.8 - 0.1) / 0.8, 1e-12);
  EXPECT_EQ(q.per_head[2], 0.0);
  EXPECT_THROW(silhouette(d, two_way({{0, 0}}, {{1, 0}}), ""), ValidationError);
  EXPECT_THROW(silhouette(d, two_way({{0, 0}, {0, 1}}, {{1, 0}, {0, 1}}), ""), ValidationError);
  EXPECT_THROW(silhouette(d, two_way({{0, 0}, {0, 1}, {4, 4}}, {{1, 0}}), ""), ValidationError);
}

TEST(RandomClusterings, PreserveSizesAndAreSeeded) {
  const std::vector<int> ref{0, 0, 0, 1, 1, 2, 3, 3, 3, 3};
  const auto a = random_clusterings(ref, 30, 7);
  const auto b = random_clusterings(ref, 30, 7);
  const auto c = random_clusterings(ref, 30, 8);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  ASSERT_EQ(a.size(), 30u);
  for (const auto& x : a) {
    std::map<int, int> sizes;
    for (int l : x) ++sizes[l];
    EXPECT_EQ(sizes, (std::map<int, int>{{0, 3}, {1, 2}, {2, 1}, {3, 4}}));
  }
}

TEST(Kendall, ExtremeRankings) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  EXPECT_DOUBLE_EQ(kendall_tau(x, x).tau, 1.0);
  EXPECT_DOUBLE_EQ(kendall_tau(x, {5, 4, 3, 2, 1}).tau, -1.0);
  EXPECT_TRUE(kendall_tau(x, x).exact);
  EXPECT_THROW(kendall_tau({1}, {1}), ValidationError);
  EXPECT_THROW(kendall_tau({1, 2}, {1}), ValidationError);
  EXPECT_TRUE(std::isnan(kendall_tau({1, 1, 1}, {1, 2, 3}).tau));
}

TEST(Kendall, MatchesScipy) {
  for (const auto& c : stats()["kendall"]) {
    const auto r = kendall_tau(c["x"].get<std::vector<double>>(), c["y"].get<std::vector<double>>());
    ASSERT_NEAR(r.tau, c["tau"].get<double>(), 1e-9);
    ASSERT_NEAR(r.p_value, c["p_value"].get<double>(), 1e-9);
    ASSERT_EQ(r.exact, c["exact"].get<bool>());
  }
}

TEST(Kendall, TauBMatchesPairCounting) {
  util::Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 3 + static_cast<int>(rng.below(15));
    std::vector<double> x(static_cast<std::size_t>(n)), y(x.size());
    for (auto& v : x) v = static_cast<double>(rng.below(4));
    for (auto& v : y) v = static_cast<double>(rng.below(5));
    x[0] = 10;
    y[0] = 10;
    double conc = 0, disc = 0, tied_x = 0, tied_y = 0;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        const double dx = x[static_cast<std::size_t>(i)] - x[static_cast<std::size_t>(j)];
        const double dy = y[static_cast<std::size_t>(i)] - y[static_cast<std::size_t>(j)];
        if (dx == 0 && dy == 0) continue;
        if (dx == 0) {
          ++tied_x;
        } else if (dy == 0) {
          ++tied_y;
        } else if (dx * dy > 0) {
          ++conc;
        } else {
          ++disc;
        }
      }
    }
    const double want = (conc - disc) / std::sqrt((conc + disc + tied_x) * (conc + disc + tied_y));
    ASSERT_NEAR(kendall_tau(x, y).tau, want, 1e-12);
  }
}

TEST(HeadProfile, ExcludesTheHeadItself) {
  intrinsic::DistanceMatrix d;
  d.heads = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  d.values = {{0, 0.2, 0.6, 0.8}, {0.2, 0, 0.5, 0.5}, {0.6, 0.5, 0, 0.1}, {0.8, 0.5, 0.1, 0}};
  const auto prof = head_profile(d, {0, 0}, two_way({{0, 0}, {0, 1}}, {{1, 0}, {1, 1}}));
  ASSERT_EQ(prof.size(), 2u);
  EXPECT_EQ(prof[0].cluster, "A");
  EXPECT_EQ(prof[0].heads.size(), 1u);
  EXPECT_DOUBLE_EQ(prof[0].mean, 0.2);
  EXPECT_DOUBLE_EQ(prof[1].mean, 0.7);
  EXPECT_DOUBLE_EQ(prof[1].min, 0.6);
  EXPECT_DOUBLE_EQ(prof[1].max, 0.8);
  EXPECT_THROW(head_profile(d, {5, 5}, two_way({}, {})), NotFoundError);
}
