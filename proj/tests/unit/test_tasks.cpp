#include <gtest/gtest.h>

#include <set>

#include "interp/tasks/task.hpp"
#include "test_support.hpp"

using namespace interp;
using namespace interp::tasks;
using model::ComponentRef;

namespace {

struct Cardinality {
  const char* name;
  std::size_t listed;
  std::size_t unique_heads;
  std::size_t mlps;
  std::size_t clusters;
  const char* model;
};

std::size_t listed(const TaskDefinition& d) {
  std::size_t n = 0;
  for (const auto& c : d.expert.clusters) n += c.components.size();
  return n;
}

}  // namespace

TEST(TaskRegistry, CardinalitiesForAllBundles) {
  const Cardinality table[] = {
      {"ioi-gpt2", 18, 18, 0, 6, "gpt2-small"},         {"ioi-pythia", 14, 14, 0, 7, "pythia-160m"},
      {"greater-than", 12, 8, 4, 2, "gpt2-small"},      {"acronyms", 8, 8, 0, 3, "gpt2-small"},
      {"colored-objects", 27, 27, 0, 3, "gpt2-medium"}, {"entity-tracking", 64, 61, 0, 4, "llama-7b"},
  };
  for (const auto& row : table) {
    const auto d = load_task_definition(row.name);
    EXPECT_EQ(listed(d), row.listed) << row.name;
    EXPECT_EQ(d.heads().size(), row.unique_heads) << row.name;
    EXPECT_EQ(d.circuit.size() - d.heads().size(), row.mlps) << row.name;
    EXPECT_EQ(d.expert.clusters.size(), row.clusters) << row.name;
    EXPECT_EQ(d.model, row.model) << row.name;
    const auto canon = d.expert.canonical();
    EXPECT_TRUE(canon.is_partition()) << row.name;
    EXPECT_EQ(canon.components().size(), d.circuit.size()) << row.name;
    for (const auto& c : d.expert.clusters) EXPECT_FALSE(c.description.empty());
  }
}

TEST(TaskRegistry, IoiNameMovers) {
  const auto b = load_task("ioi-gpt2");
  const auto& ex = b.definition.expert;
  const auto nm = ex.find("Name Mover Heads");
  ASSERT_TRUE(nm);
  const std::vector<ComponentRef> want = {ComponentRef::attention_head(9, 6), ComponentRef::attention_head(9, 9),
                                          ComponentRef::attention_head(10, 0)};
  EXPECT_EQ(ex.clusters[*nm].components, want);
  EXPECT_TRUE(ex.is_partition());
  EXPECT_EQ(b.prompts.size(), 20u);
}

TEST(TaskRegistry, EntityTrackingCrossListing) {
  const auto d = load_task_definition("entity-tracking");
  EXPECT_FALSE(d.expert.is_partition());
  EXPECT_EQ(d.tier, "large-model");
  const auto canon = d.expert.canonical();
  const auto pt = *canon.find("Position Transmitter Heads");
  const auto pd = *canon.find("Position Detector Heads");
  const auto sr = *canon.find("Structure Reader Heads");
  EXPECT_EQ(canon.clusters[pt].components.size(), 5u);
  EXPECT_EQ(canon.clusters[pd].components.size(), 13u);
  EXPECT_EQ(canon.clusters[sr].components.size(), 3u);
  EXPECT_EQ(canon.cluster_of(ComponentRef::attention_head(11, 23)), pt);
}

TEST(TaskRegistry, ColoredObjectsRecordsModelConflict) {
  const auto d = load_task_definition("colored-objects");
  EXPECT_EQ(d.model, "gpt2-medium");
  EXPECT_FALSE(d.model_note.empty());
  EXPECT_EQ(d.alternative_models, std::vector<std::string>{"gpt2-xl"});
}

TEST(TaskRegistry, UnknownTaskIsNotFound) { EXPECT_THROW(load_task_definition("sorting"), NotFoundError); }

TEST(TaskRegistry, GreaterThanAnswersExceedStartYear) {
  const auto d = load_task_definition("greater-than");
  for (const auto& ex : generate_prompts(d, 30, 3)) {
    const int yy = std::stoi(ex.text.substr(ex.spans.at("YY").begin, 2));
    ASSERT_FALSE(ex.answers.empty());
    for (const auto& a : ex.answers) EXPECT_GT(std::stoi(a), yy);
    EXPECT_EQ(ex.answers.size(), static_cast<std::size_t>(99 - yy));
    EXPECT_EQ(ex.text.rfind("to the year ", std::string::npos) + 14, ex.text.size());
  }
}

TEST(TaskRegistry, IoiAnswerIsIndirectObject) {
  const auto d = load_task_definition("ioi-gpt2");
  for (const auto& ex : generate_prompts(d, 40, 11)) {
    const auto io = ex.text.substr(ex.spans.at("IO").begin, ex.spans.at("IO").end - ex.spans.at("IO").begin);
    const auto s1 = ex.text.substr(ex.spans.at("S1").begin, ex.spans.at("S1").end - ex.spans.at("S1").begin);
    const auto s2 = ex.text.substr(ex.spans.at("S2").begin, ex.spans.at("S2").end - ex.spans.at("S2").begin);
    EXPECT_EQ(ex.answers, std::vector<std::string>{" " + io});
    EXPECT_EQ(s1, s2);
    EXPECT_NE(io, s1);
  }
}

TEST(TaskRegistry, GenerationIsSeedDeterministicAndCollisionFree) {
  for (const auto& name : task_names()) {
    const auto d = load_task_definition(name);
    const auto a = generate_prompts(d, 25, 5), b = generate_prompts(d, 25, 5), c = generate_prompts(d, 25, 6);
    std::set<std::string> texts;
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].text, b[i].text);
      texts.insert(a[i].text);
    }
    EXPECT_EQ(texts.size(), a.size()) << name;
    EXPECT_NE(a[0].text + a[1].text, c[0].text + c[1].text) << name;
  }
}

TEST(TaskRegistry, AnnotatedPositionsPointAtTokens) {
  model::ModelHandle m(testing_support::toy());
  GenerateOptions opt{&m};
  for (const auto& name : task_names()) {
    const auto d = load_task_definition(name);
    for (const auto& ex : generate_prompts(d, 10, 2, opt)) {
      const auto tp = m.tokenize(ex.text);
      for (const auto& [key, span] : ex.spans) {
        const auto want = ex.text.substr(span.begin, span.end - span.begin);
        const auto& tok = tp.tokens.at(ex.positions.at(key)).text;
        EXPECT_TRUE(tok == want || tok == " " + want) << name << " " << key << " '" << tok << "' vs '" << want << "'";
      }
      EXPECT_EQ(ex.positions.at("END"), tp.size() - 1);
      for (const auto& a : ex.answers) EXPECT_TRUE(m.tokenizer().single_token(a)) << a;
    }
  }
}

TEST(TaskRegistry, BundlePositionsFollowClusterDesignation) {
  model::ModelHandle m(testing_support::toy());
  auto b = load_task("ioi-gpt2", 5, 1, {&m});
  const auto dup = b.positions_for(ComponentRef::attention_head(0, 1));
  const auto prev = b.positions_for(ComponentRef::attention_head(2, 2));
  const auto nm = b.positions_for(ComponentRef::attention_head(9, 9));
  for (std::size_t i = 0; i < b.prompts.size(); ++i) {
    EXPECT_EQ(dup[i], b.prompts[i].positions.at("S2"));
    EXPECT_EQ(prev[i], b.prompts[i].positions.at("S1") + 1);
    EXPECT_EQ(nm[i], b.prompts[i].positions.at("END"));
  }
  EXPECT_THROW(b.positions_for(ComponentRef::attention_head(0, 0)), NotFoundError);
}

TEST(TaskRegistry, CounterfactualsChangeContentKeepLength) {
  model::ModelHandle m(testing_support::toy());
  GenerateOptions opt{&m};
  for (const auto& name : task_names()) {
    const auto d = load_task_definition(name);
    const auto prompts = generate_prompts(d, 10, 4, opt);
    const auto cfs = sample_counterfactuals(d, prompts, 9, opt);
    ASSERT_EQ(cfs.size(), prompts.size());
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      EXPECT_NE(cfs[i].text, prompts[i].text);
      EXPECT_EQ(cfs[i].template_id, prompts[i].template_id);
      EXPECT_NE(cfs[i].answers, prompts[i].answers) << name;
      EXPECT_EQ(m.tokenize(cfs[i].text).size(), m.tokenize(prompts[i].text).size());
    }
  }
}

TEST(TaskRegistry, ParserRejectsBadSchema) {
  const std::string bad_version =
      R"j({"schema_version": 2, "name": "x", "task": "ioi", "model": "m", "clusters": []})j";
  const std::string empty_description = R"j({"schema_version": 1, "name": "x", "task": "ioi", "model": "m",
      "clusters": [{"name": "a", "components": ["(1, 2)"], "description": ""}]})j";
  EXPECT_THROW(parse_task_definition(bad_version), ConfigError);
  EXPECT_THROW(parse_task_definition(empty_description), ConfigError);
}
