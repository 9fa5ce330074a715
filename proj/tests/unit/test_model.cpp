#include <gtest/gtest.h>

#include <cstdlib>
#include <random>

#include "interp/model/model_handle.hpp"
#include "interp/model/registry.hpp"
#include "interp/model/safetensors.hpp"
#include "interp/util/random.hpp"
#include "test_support.hpp"

using namespace interp;
using namespace interp::model;
using testing_support::max_abs_diff;
using testing_support::toy;

namespace {

std::shared_ptr<const Tokenizer> byte_tok() {
  static auto t = std::make_shared<ByteTokenizer>();
  return t;
}

struct Reference {
  std::shared_ptr<const Checkpoint> ckpt;
  nlohmann::json ref;
};

Reference load_reference(const std::string& arch) {
  const auto dir = testing_support::data_dir() / "ref" / arch;
  LoadOptions opt;
  opt.tokenizer = byte_tok();
  return {load_hf_checkpoint(dir, arch, opt), testing_support::read_json(dir / "reference.json")};
}

constexpr const char* kPrompts[] = {
    "When Mary and John went to the store, John gave a drink to",
    "The war lasted from the year 1732 to the year 17",
    "The Central Intelligence Agency (",
    "After the lunch, Anne and Paul went to the park. Paul gave a ring to",
    "Hello world",
};

}  // namespace

TEST(Component, FormatsAndParses) {
  EXPECT_EQ(to_string(ComponentRef::attention_head(9, 9)), "(9, 9)");
  EXPECT_EQ(to_string(ComponentRef::mlp(8)), "(8, None)");
  EXPECT_EQ(parse_component("(9, 9)"), ComponentRef::attention_head(9, 9));
  EXPECT_EQ(parse_component("8,None"), ComponentRef::mlp(8));
  EXPECT_EQ(parse_component("L10H7"), ComponentRef::attention_head(10, 7));
  EXPECT_EQ(parse_component("layer 3 head 0"), ComponentRef::attention_head(3, 0));
  EXPECT_EQ(parse_component("MLP 4"), ComponentRef::mlp(4));
  EXPECT_FALSE(parse_component("head nine"));
  EXPECT_LT(ComponentRef::attention_head(3, 11), ComponentRef::mlp(3));
  EXPECT_LT(ComponentRef::mlp(3), ComponentRef::attention_head(4, 0));
}

TEST(Tokenizer, MatchesReferenceGpt2Encoding) {
  const auto tok = toy()->tokenizer;
  const auto ref = testing_support::read_json(testing_support::data_dir() / "gpt2_tokenizer_reference.json");
  for (const auto& c : ref["cases"]) {
    const auto text = c["text"].get<std::string>();
    std::vector<int> ids;
    for (const auto& t : tok->encode(text)) ids.push_back(t.id);
    EXPECT_EQ(ids, c["ids"].get<std::vector<int>>()) << text;
    EXPECT_EQ(tok->decode(ids), text);
  }
}

TEST(Tokenizer, HelloWorldTokensAndIndices) {
  const auto toks = toy()->tokenizer->encode("Hello world");
  ASSERT_EQ(toks.size(), 2u);
  EXPECT_EQ(toks[0].text, "Hello");
  EXPECT_EQ(toks[1].text, " world");
  EXPECT_EQ(toks[1].char_begin, 5u);
  EXPECT_EQ(toks[1].char_end, 11u);
}

TEST(Tokenizer, OffsetsTileTheText) {
  const auto tok = toy()->tokenizer;
  const std::string text = "café naïve über\n\n  x  ";
  const auto toks = tok->encode(text);
  std::size_t at = 0;
  for (const auto& t : toks) {
    EXPECT_EQ(t.char_begin, at);
    at = t.char_end;
  }
  EXPECT_EQ(at, text.size());
}

TEST(Tokenizer, ByteTokenizerRoundTrip) {
  ByteTokenizer t;
  const std::string s = "a\x01\xff z";
  std::vector<int> ids;
  for (const auto& x : t.encode(s)) ids.push_back(x.id);
  EXPECT_EQ(ids.size(), s.size());
  EXPECT_EQ(t.decode(ids), s);
}

TEST(ModelHandle, TokenizeIndicesAndBos) {
  ModelHandle m(toy());
  const auto p = m.tokenize("Hello world");
  ASSERT_TRUE(p.bos_prepended);
  ASSERT_EQ(p.size(), 3);
  for (int i = 0; i < p.size(); ++i) EXPECT_EQ(p.tokens[i].index, i);
  EXPECT_EQ(p.tokens[1].text, "Hello");
  EXPECT_EQ(p.tokens[2].text, " world");
  EXPECT_EQ(p.position_of_span(6, 11), 2);
}

TEST(ModelHandle, EmptyAndOverlongPromptsAreLengthErrors) {
  ModelHandle m(toy());
  EXPECT_THROW(m.tokenize(""), LengthError);
  std::string big;
  for (int i = 0; i < 300; ++i) big += " word";
  EXPECT_THROW(m.tokenize(big), LengthError);
}

class ReferenceForward : public ::testing::TestWithParam<std::string> {};

TEST_P(ReferenceForward, DistributionMatchesTorch) {
  const auto r = load_reference(GetParam());
  ModelHandle m(r.ckpt);
  const auto prompt = testing_support::prompt_from_ids(m.tokenizer(), r.ref["prompt"].get<std::vector<int>>(), true);
  const auto dist = m.forward(prompt);
  EXPECT_LE(max_abs_diff(dist.probabilities, r.ref["probabilities"].get<std::vector<double>>()), 1e-5);
  EXPECT_NEAR(dist.sum(), 1.0, 1e-6);
}

TEST_P(ReferenceForward, AttentionAndResidualsMatchTorch) {
  const auto r = load_reference(GetParam());
  ModelHandle m(r.ckpt);
  const auto prompt = testing_support::prompt_from_ids(m.tokenizer(), r.ref["prompt"].get<std::vector<int>>(), true);
  const int L = m.config().n_layers, H = m.config().n_heads, n = prompt.size();
  std::vector<CaptureSpec> caps;
  for (int l = 0; l < L; ++l)
    for (int h = 0; h < H; ++h)
      for (int q = 0; q < n; ++q) caps.push_back({ComponentRef::attention_head(l, h), q, ActivationKind::kAttentionPattern});
  for (int l = 0; l + 1 < L; ++l)
    for (int q = 0; q < n; ++q) caps.push_back({ComponentRef::mlp(l), q, ActivationKind::kResidualState});
  const auto out = m.forward_with_capture(prompt, caps);
  std::size_t i = 0;
  double worst_attn = 0.0, worst_resid = 0.0;
  for (int l = 0; l < L; ++l)
    for (int h = 0; h < H; ++h)
      for (int q = 0; q < n; ++q, ++i) {
        const auto row = r.ref["attention"][l][h][q].get<std::vector<double>>();
        const std::vector<double> head(row.begin(), row.begin() + q + 1);
        worst_attn = std::max(worst_attn, max_abs_diff(out.activations[i], head));
      }
  for (int l = 0; l + 1 < L; ++l)
    for (int q = 0; q < n; ++q, ++i) {
      worst_resid = std::max(worst_resid,
                             max_abs_diff(out.activations[i], r.ref["resid_post"][l][q].get<std::vector<double>>()));
    }
  EXPECT_LE(worst_attn, 1e-5);
  EXPECT_LE(worst_resid, 1e-4);
}

TEST_P(ReferenceForward, HeadPatchMatchesTorchSplice) {
  const auto r = load_reference(GetParam());
  ModelHandle m(r.ckpt);
  const auto& tok = m.tokenizer();
  const auto clean = testing_support::prompt_from_ids(tok, r.ref["prompt"].get<std::vector<int>>(), true);
  const auto cf = testing_support::prompt_from_ids(tok, r.ref["counterfactual"].get<std::vector<int>>(), true);
  const auto c = ComponentRef::attention_head(r.ref["patch"]["layer"], r.ref["patch"]["head"]);
  const int pos = r.ref["patch"]["position"];
  const CaptureSpec cap{c, pos, ActivationKind::kHeadOutput};
  const auto captured = m.forward_with_capture(cf, std::span(&cap, 1));
  const InterventionSpec iv{c, pos, captured.activations[0], std::nullopt};
  const auto patched = m.forward_with_intervention(clean, std::span(&iv, 1));
  EXPECT_LE(max_abs_diff(patched.probabilities, r.ref["patched_probabilities"].get<std::vector<double>>()), 1e-5);
}

TEST_P(ReferenceForward, KqSwapMatchesTorchRebuild) {
  const auto r = load_reference(GetParam());
  ModelHandle m(r.ckpt);
  const auto prompt = testing_support::prompt_from_ids(m.tokenizer(), r.ref["prompt"].get<std::vector<int>>(), true);
  const auto a = ComponentRef::attention_head(r.ref["swap"]["a"][0], r.ref["swap"]["a"][1]);
  const auto b = ComponentRef::attention_head(r.ref["swap"]["b"][0], r.ref["swap"]["b"][1]);
  const auto dist = m.with_swapped_heads(a, b, SwapKind::kKQ, [&] { return m.forward(prompt); });
  EXPECT_LE(max_abs_diff(dist.probabilities, r.ref["kq_swapped_probabilities"].get<std::vector<double>>()), 1e-5);
}

INSTANTIATE_TEST_SUITE_P(Architectures, ReferenceForward, ::testing::Values("gpt2", "neox", "llama"));

TEST(ModelHandle, ZeroCapturesEqualPlainForward) {
  ModelHandle m(toy());
  for (const char* text : kPrompts) {
    const auto p = m.tokenize(text);
    const auto plain = m.forward(p);
    const auto cap = m.forward_with_capture(p, {});
    EXPECT_EQ(plain.probabilities, cap.distribution.probabilities);
    const auto iv = m.forward_with_intervention(p, {});
    EXPECT_EQ(plain.probabilities, iv.probabilities);
  }
}

TEST(ModelHandle, FinalResidualUnembedsToOutput) {
  ModelHandle m(toy());
  const auto p = m.tokenize(kPrompts[0]);
  const CaptureSpec cap{ComponentRef::mlp(m.config().n_layers - 1), -1, ActivationKind::kResidualState};
  const auto out = m.forward_with_capture(p, std::span(&cap, 1));
  const auto lens = m.unembed(out.activations[0]);
  EXPECT_LE(max_abs_diff(lens.probabilities, out.distribution.probabilities), 1e-5);
  EXPECT_EQ(lens.argmax(), out.distribution.argmax());
}

TEST(ModelHandle, AttentionRowsSumToOne) {
  ModelHandle m(toy());
  const auto p = m.tokenize(kPrompts[1]);
  std::vector<CaptureSpec> caps;
  for (int q = 0; q < p.size(); ++q) caps.push_back({ComponentRef::attention_head(5, 7), q, ActivationKind::kAttentionPattern});
  const auto out = m.forward_with_capture(p, caps);
  for (int q = 0; q < p.size(); ++q) {
    ASSERT_EQ(out.activations[q].size(), static_cast<std::size_t>(q + 1));
    double s = 0.0;
    for (float v : out.activations[q]) {
      EXPECT_GE(v, 0.0f);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
}

TEST(ModelHandle, SelfPatchIsIdentity) {
  ModelHandle m(toy());
  const auto p = m.tokenize(kPrompts[3]);
  const auto clean = m.forward(p);
  for (const auto& c : {ComponentRef::attention_head(9, 9), ComponentRef::mlp(4)}) {
    const CaptureSpec cap{c, 5, c.is_head() ? ActivationKind::kHeadOutput : ActivationKind::kMlpOutput};
    const auto got = m.forward_with_capture(p, std::span(&cap, 1));
    const InterventionSpec iv{c, 5, got.activations[0], std::nullopt};
    EXPECT_LE(max_abs_diff(m.forward_with_intervention(p, std::span(&iv, 1)).probabilities, clean.probabilities), 1e-5);
  }
}

TEST(ModelHandle, InterventionOnlyTouchesAddressedActivation) {
  ModelHandle m(toy());
  const auto p = m.tokenize(kPrompts[0]);
  std::vector<float> junk(m.config().d_model, 3.0f);
  const InterventionSpec iv{ComponentRef::attention_head(6, 1), 4, junk, std::nullopt};
  // Positions before 4 and layers before 6 are causally upstream, so their
  // captures cannot change. Check through the residual at layer 5.
  std::vector<CaptureSpec> caps{{ComponentRef::mlp(5), 7, ActivationKind::kResidualState}};
  const auto clean = m.forward_with_capture(p, caps);
  const auto patched = m.forward_with_intervention(p, std::span(&iv, 1));
  EXPECT_GT(max_abs_diff(patched.probabilities, clean.distribution.probabilities), 1e-6);
}

TEST(ModelHandle, AddressingErrorsBeforeCompute) {
  ModelHandle m(toy());
  const auto p = m.tokenize(kPrompts[2]);
  const CaptureSpec bad_layer{ComponentRef::attention_head(12, 0), -1, ActivationKind::kHeadOutput};
  EXPECT_THROW(m.forward_with_capture(p, std::span(&bad_layer, 1)), AddressingError);
  const CaptureSpec bad_head{ComponentRef::attention_head(0, 12), -1, ActivationKind::kHeadOutput};
  EXPECT_THROW(m.forward_with_capture(p, std::span(&bad_head, 1)), AddressingError);
  const CaptureSpec bad_pos{ComponentRef::attention_head(0, 0), p.size(), ActivationKind::kHeadOutput};
  EXPECT_THROW(m.forward_with_capture(p, std::span(&bad_pos, 1)), AddressingError);
  const CaptureSpec mlp_pattern{ComponentRef::mlp(0), -1, ActivationKind::kAttentionPattern};
  EXPECT_THROW(m.forward_with_capture(p, std::span(&mlp_pattern, 1)), UnsupportedComponentError);
  const InterventionSpec wrong_dim{ComponentRef::attention_head(0, 0), -1, std::vector<float>(3), std::nullopt};
  EXPECT_THROW(m.forward_with_intervention(p, std::span(&wrong_dim, 1)), ValidationError);
  const InterventionSpec far{ComponentRef::mlp(0), -100, std::vector<float>(48), std::nullopt};
  EXPECT_THROW(m.forward_with_intervention(p, std::span(&far, 1)), AddressingError);
}

TEST(ModelHandle, ReadHeadWeightsReturnsCopies) {
  ModelHandle m(toy());
  const auto c = ComponentRef::attention_head(3, 4);
  auto w = m.read_head_weights(c);
  EXPECT_EQ(w.w_q.rows(), 48);
  EXPECT_EQ(w.w_q.cols(), 4);
  EXPECT_EQ(w.w_o.rows(), 4);
  EXPECT_EQ(w.w_o.cols(), 48);
  w.w_q.setZero();
  EXPECT_NE(m.read_head_weights(c).w_q.norm(), 0.0f);
  EXPECT_THROW(m.read_head_weights(ComponentRef::mlp(3)), UnsupportedComponentError);
}

TEST(ModelHandle, SelfSwapAndNestedSwapAreIdentity) {
  ModelHandle m(toy());
  const auto p = m.tokenize(kPrompts[0]);
  const auto clean = m.forward(p);
  const auto a = ComponentRef::attention_head(9, 6), b = ComponentRef::attention_head(10, 0);
  for (auto kind : {SwapKind::kKQ, SwapKind::kOV}) {
    EXPECT_EQ(m.with_swapped_heads(a, a, kind, [&] { return m.forward(p); }).probabilities, clean.probabilities);
    const auto twice = m.with_swapped_heads(a, b, kind, [&] {
      return m.with_swapped_heads(a, b, kind, [&] { return m.forward(p); });
    });
    EXPECT_LE(max_abs_diff(twice.probabilities, clean.probabilities), 1e-5);
    const auto once = m.with_swapped_heads(a, b, kind, [&] { return m.forward(p); });
    EXPECT_GT(max_abs_diff(once.probabilities, clean.probabilities), 0.0);
  }
}

TEST(ModelHandle, SwapRestoresWeightsBitExactlyEvenOnThrow) {
  ModelHandle m(toy());
  const auto a = ComponentRef::attention_head(2, 2), b = ComponentRef::attention_head(7, 9);
  const auto before_a = m.read_head_weights(a), before_b = m.read_head_weights(b);
  m.with_swapped_heads(a, b, SwapKind::kKQ, [&] {
    EXPECT_EQ(m.read_head_weights(a).w_q, before_b.w_q);
    EXPECT_EQ(m.read_head_weights(a).w_v, before_a.w_v);
    EXPECT_EQ(m.read_head_weights(b).b_k, before_a.b_k);
  });
  EXPECT_THROW(m.with_swapped_heads(a, b, SwapKind::kOV, [&] { throw std::runtime_error("boom"); }),
               std::runtime_error);
  const auto after_a = m.read_head_weights(a), after_b = m.read_head_weights(b);
  EXPECT_EQ(after_a.w_q, before_a.w_q);
  EXPECT_EQ(after_a.w_k, before_a.w_k);
  EXPECT_EQ(after_a.w_v, before_a.w_v);
  EXPECT_EQ(after_a.w_o, before_a.w_o);
  EXPECT_EQ(after_b.w_o, before_b.w_o);
  EXPECT_EQ(after_b.b_q, before_b.b_q);
}

TEST(ModelHandle, SwapMatchesRebuiltCheckpoint) {
  const auto base = toy();
  ModelHandle m(base);
  const auto p = m.tokenize(kPrompts[3]);
  const auto a = ComponentRef::attention_head(4, 11), b = ComponentRef::attention_head(8, 6);
  for (auto kind : {SwapKind::kKQ, SwapKind::kOV}) {
    auto rebuilt = std::make_shared<Checkpoint>(*base);
    auto& ha = rebuilt->weights.layers[4].heads[11];
    auto& hb = rebuilt->weights.layers[8].heads[6];
    if (kind == SwapKind::kKQ) {
      std::swap(ha.w_q, hb.w_q);
      std::swap(ha.w_k, hb.w_k);
      std::swap(ha.b_q, hb.b_q);
      std::swap(ha.b_k, hb.b_k);
    } else {
      std::swap(ha.w_v, hb.w_v);
      std::swap(ha.w_o, hb.w_o);
      std::swap(ha.b_v, hb.b_v);
    }
    const auto oracle = ModelHandle(rebuilt).forward(p);
    const auto got = m.with_swapped_heads(a, b, kind, [&] { return m.forward(p); });
    EXPECT_LE(max_abs_diff(got.probabilities, oracle.probabilities), 1e-5);
  }
}

TEST(ModelHandle, OverwriteIsOneDirectional) {
  ModelHandle m(toy());
  const auto a = ComponentRef::attention_head(1, 1), b = ComponentRef::attention_head(1, 2);
  const auto wb = m.read_head_weights(b);
  m.with_overwritten_head(a, b, SwapKind::kOV, [&] {
    EXPECT_EQ(m.read_head_weights(a).w_o, wb.w_o);
    EXPECT_EQ(m.read_head_weights(b).w_o, wb.w_o);
  });
}

TEST(ModelHandle, SwapRejectsMlp) {
  ModelHandle m(toy());
  EXPECT_THROW(m.with_swapped_heads(ComponentRef::mlp(1), ComponentRef::attention_head(1, 2), SwapKind::kKQ, [] {}),
               UnsupportedComponentError);
}

TEST(ModelHandle, SwapAcrossDifferentHeadSizesIsIncompatible) {
  auto odd = std::make_shared<Checkpoint>(*toy());
  auto& h = odd->weights.layers[0].heads[0];
  h.w_q.conservativeResize(Eigen::NoChange, 5);
  ModelHandle m(odd);
  EXPECT_THROW(m.with_swapped_heads(ComponentRef::attention_head(0, 0), ComponentRef::attention_head(0, 1),
                                    SwapKind::kKQ, [] {}),
               IncompatibleSwapError);
}

TEST(ModelHandle, UnembedZeroVectorMatchesHandComputation) {
  ModelHandle m(toy());
  const auto& w = m.checkpoint().weights;
  const int d = m.config().d_model;
  const std::vector<float> zero(d, 0.0f);
  const auto got = m.unembed(zero);
  // LayerNorm of the zero vector collapses to its bias.
  const auto& u = w.unembedding();
  std::vector<double> logits(u.rows());
  double mx = -1e300;
  for (Eigen::Index v = 0; v < u.rows(); ++v) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += static_cast<double>(u(v, i)) * w.ln_final.bias[i];
    logits[v] = s;
    mx = std::max(mx, s);
  }
  double z = 0.0;
  for (auto& l : logits) z += std::exp(l - mx);
  std::vector<double> want(logits.size());
  for (std::size_t v = 0; v < logits.size(); ++v) want[v] = std::exp(logits[v] - mx) / z;
  EXPECT_LE(max_abs_diff(got.probabilities, want), 1e-6);
  EXPECT_NEAR(got.sum(), 1.0, 1e-6);
  EXPECT_THROW(m.unembed(std::vector<float>(3)), ValidationError);
}

TEST(ModelHandle, ResumeFromCachedResidual) {
  ModelHandle m(toy());
  const auto p = m.tokenize(kPrompts[0]);
  const auto cache = m.residual_cache(p);
  ASSERT_EQ(cache.size(), 13u);
  const auto clean = m.forward(p);
  EXPECT_LE(max_abs_diff(m.forward_from(p, 7, cache[7]).probabilities, clean.probabilities), 1e-6);
}

TEST(ModelHandle, HandlesShareOneCheckpoint) {
  const auto ck = toy();
  ModelHandle a(ck), b(ck);
  const auto p = a.tokenize(kPrompts[4]);
  const auto clean = b.forward(p);
  a.with_swapped_heads(ComponentRef::attention_head(0, 0), ComponentRef::attention_head(11, 11), SwapKind::kOV,
                       [&] { EXPECT_EQ(b.forward(p).probabilities, clean.probabilities); });
}

TEST(Checkpoint, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "interp_roundtrip_ckpt";
  std::filesystem::remove_all(dir);
  save_gpt2_checkpoint(*toy(), dir);
  LoadOptions opt;
  opt.tokenizer = toy()->tokenizer;
  const auto back = load_hf_checkpoint(dir, "rt", opt);
  ModelHandle a(toy()), b(back);
  const auto p = a.tokenize(kPrompts[1]);
  EXPECT_EQ(a.forward(p).probabilities, b.forward(p).probabilities);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, ToyModelIsDeterministic) {
  ModelConfig c = toy_gpt2_config();
  c.n_layers = 2;
  const auto a = make_synthetic_gpt2("a", c, byte_tok(), 42);
  const auto b = make_synthetic_gpt2("b", c, byte_tok(), 42);
  EXPECT_EQ(a->weights.layers[1].heads[3].w_o, b->weights.layers[1].heads[3].w_o);
  EXPECT_EQ(a->weights.embed, b->weights.embed);
}

TEST(Registry, UnknownCheckpointIsNotFound) {
  EXPECT_THROW(load_checkpoint("no-such-model-xyz"), NotFoundError);
  EXPECT_TRUE(checkpoint_available("toy-gpt2-small"));
}

TEST(Random, DerivedSeedsDifferAndRepeat) {
  EXPECT_EQ(util::derive_seed(1, "noise"), util::derive_seed(1, "noise"));
  EXPECT_NE(util::derive_seed(1, "noise"), util::derive_seed(1, "prompts"));
  util::Rng r(7);
  auto perm = r.permutation(10);
  std::sort(perm.begin(), perm.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(perm[i], i);
}
