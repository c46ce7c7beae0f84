#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <sstream>

#include "tgcl/model/checkpoint.hpp"
#include "tgcl/model/model.hpp"
#include "tgcl/numerics/grad_check.hpp"

using namespace tgcl;
using namespace tgcl::model;
using tgcl::numerics::Graph;
using tgcl::numerics::NdArray;
using tgcl::numerics::Var;

namespace {

ModelConfig tiny(std::size_t vocab = 4) {
  ModelConfig c;
  c.d = 8;
  c.heads = 2;
  c.layers = 2;
  c.ff = 16;
  c.vocab = vocab;
  c.proj = 6;
  return c;
}

SequenceInput random_input(std::size_t n, std::size_t vocab, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> time(0.0, 48.0);
  std::normal_distribution<double> value(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> feat(0, vocab - 1);
  SequenceInput in;
  for (std::size_t j = 0; j < n; ++j) {
    in.t.push_back(time(rng));
    in.v.push_back(value(rng));
    in.f.push_back(feat(rng));
  }
  std::sort(in.t.begin(), in.t.end());
  return in;
}

NdArray<double> run_encode(const Model<double>& m, const SequenceInput& in,
                           const std::vector<std::size_t>& mask = {}) {
  Graph<double> g;
  return g.forward(m.encode(g, m.embed(g, in, mask)));
}

}  // namespace

TEST(TimeEncode, ZeroPhaseAtZeroTimeIsZero) {
  Model<double> m(tiny(), 1);
  m.params().value(m.time_phi()).fill(0.0);
  Graph<double> g;
  auto out = g.forward(m.time_encode(g, g.constant(NdArray<double>(1, 1, 0.0))));
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(TimeEncode, ConstantCase) {
  Model<double> m(tiny(), 1);
  const double c = 0.7;
  m.params().value(m.time_omega()).fill(0.0);
  m.params().value(m.time_phi()).fill(c);
  Graph<double> g;
  auto out = g.forward(m.time_encode(g, g.constant(NdArray<double>(1, 1, 13.0))));
  EXPECT_DOUBLE_EQ(out[0], c);
  for (std::size_t k = 1; k < out.cols(); ++k) EXPECT_DOUBLE_EQ(out[k], std::sin(c));
}

TEST(TimeEncode, GradientMatchesFiniteDifferences) {
  Model<double> m(tiny(), 3);
  auto& store = m.params();
  auto fn = [&](Graph<double>& g, const numerics::ParamStore<double>&) {
    NdArray<double> t(3, 1, std::vector<double>{0.5, 7.0, 30.0});
    Var w = g.constant(NdArray<double>(3, 8, std::vector<double>{
                                                 0.3, -1.2, 0.5, 0.8, -0.1, 0.2, 1.1, -0.7,  //
                                                 -0.4, 0.9, 0.1, -0.3, 0.6, -1.0, 0.2, 0.4,  //
                                                 0.7, 0.2, -0.6, 0.3, -0.9, 0.5, 0.1, -0.2}));
    return g.reduce_sum(g.multiply(m.time_encode(g, g.constant(t)), w));
  };
  EXPECT_LT(numerics::grad_check_params(fn, store), 1e-6);
}

TEST(Embed, ZeroParametersGiveZeroTokens) {
  auto m = Model<double>::zeros(tiny());
  std::mt19937_64 rng(5);
  auto in = random_input(6, 4, rng);
  Graph<double> g;
  auto tokens = g.forward(m.embed(g, in));
  ASSERT_EQ(tokens.rows(), 7u);
  ASSERT_EQ(tokens.cols(), 8u);
  for (double v : tokens.values()) EXPECT_EQ(v, 0.0);
}

TEST(Embed, ClassTokenIsLastRow) {
  Model<double> m(tiny(), 2);
  std::mt19937_64 rng(5);
  auto in = random_input(3, 4, rng);
  Graph<double> g;
  auto tokens = g.forward(m.embed(g, in));
  const auto& cls = m.params().value(m.cls_token());
  for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(tokens(3, k), cls[k]);
}

TEST(Embed, MaskedRowIgnoresValue) {
  Model<double> m(tiny(), 2);
  std::mt19937_64 rng(6);
  auto in = random_input(5, 4, rng);
  Graph<double> g1;
  auto a = g1.forward(m.embed(g1, in, {2}));
  in.v[2] += 17.5;
  Graph<double> g2;
  auto b = g2.forward(m.embed(g2, in, {2}));
  EXPECT_EQ(a, b);
}

TEST(Embed, MaskedRowStillCarriesFeatureAndTime) {
  Model<double> m(tiny(), 2);
  std::mt19937_64 rng(7);
  auto in = random_input(5, 4, rng);
  in.f[1] = 0;
  Graph<double> g1;
  auto a = g1.forward(m.embed(g1, in, {1}));
  in.f[1] = 3;
  Graph<double> g2;
  auto b = g2.forward(m.embed(g2, in, {1}));
  bool changed = false;
  for (std::size_t k = 0; k < 8; ++k) changed |= a(1, k) != b(1, k);
  EXPECT_TRUE(changed);

  // Masked row = mask token + feature row + time encoding.
  Graph<double> g3;
  auto te = g3.forward(m.time_encode(g3, g3.constant(NdArray<double>(1, 1, in.t[1]))));
  const auto& mt = m.params().value(m.mask_token());
  const auto& ft = m.params().value(m.feature_table());
  for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(b(1, k), mt[k] + ft(3, k) + te[k], 1e-12);
}

TEST(Embed, FeatureOutsideVocabularyIsIndexError) {
  Model<double> m(tiny(4), 2);
  SequenceInput in{{0.0}, {1.0}, {4}};
  Graph<double> g;
  EXPECT_THROW(m.embed(g, in), IndexError);
}

TEST(Encode, OutputsAreExactlyCausal) {
  Model<double> m(tiny(), 11);
  std::mt19937_64 rng(12);
  std::normal_distribution<double> noise(0.0, 3.0);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + trial % 7;
    auto in = random_input(n, 4, rng);
    auto base = run_encode(m, in);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, n - 2)(rng);
    auto perturbed = in;
    for (std::size_t j = k + 1; j < n; ++j) {
      perturbed.v[j] += noise(rng);
      perturbed.f[j] = (perturbed.f[j] + 1) % 4;
    }
    auto out = run_encode(m, perturbed);
    for (std::size_t r = 0; r <= k; ++r)
      for (std::size_t c = 0; c < 8; ++c) ASSERT_EQ(out(r, c), base(r, c)) << "row " << r;
    // The class token must see the change.
    bool cls_changed = false;
    for (std::size_t c = 0; c < 8; ++c) cls_changed |= out(n, c) != base(n, c);
    EXPECT_TRUE(cls_changed);
  }
}

TEST(Encode, SingleTokenAttendsToItselfOnly) {
  Model<double> m(tiny(), 4);
  SequenceInput in{{3.0}, {0.4}, {1}};
  auto a = run_encode(m, in);
  // The event row equals the result of running the stack on that row alone.
  Graph<double> g;
  Var tokens = m.embed(g, in);
  Var first = g.gather_rows(tokens, {0});
  auto alone = g.forward(m.encode(g, first));
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(a(0, c), alone(0, c));
}

TEST(Encode, FullModelGradientCheck) {
  Model<double> m(tiny(), 21);
  std::mt19937_64 rng(22);
  auto in = random_input(5, 4, rng);
  auto fn = [&](Graph<double>& g, const numerics::ParamStore<double>&) {
    Var out = m.encode(g, m.embed(g, in, {1, 3}));
    Var z = m.sequence_embedding(g, out);
    Var pred = m.predict_values(g, out, {1, 3});
    Var logits = m.classify(g, out);
    return g.add(g.add(g.reduce_mean(out), g.reduce_sum(z)), g.add(g.reduce_sum(pred), g.reduce_sum(logits)));
  };
  EXPECT_LT(numerics::grad_check_params(fn, m.params(), 1e-6), 1e-4);
}

TEST(SequenceEmbedding, UnitNorm) {
  Model<double> m(tiny(), 8);
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    auto in = random_input(1 + trial % 9, 4, rng);
    Graph<double> g;
    auto z = g.forward(m.sequence_embedding(g, m.encode(g, m.embed(g, in))));
    ASSERT_EQ(z.cols(), 6u);
    double sq = 0.0;
    for (double v : z.values()) sq += v * v;
    EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-9);
  }
}

TEST(SequenceEmbedding, IdentityProjection) {
  auto cfg = tiny();
  cfg.proj = cfg.d;
  Model<double> m(cfg, 8);
  m.params().value(m.proj_w()) = NdArray<double>::identity(8);
  m.params().value(m.proj_b()).fill(0.0);
  std::mt19937_64 rng(10);
  auto in = random_input(4, 4, rng);
  Graph<double> g;
  Var out = m.encode(g, m.embed(g, in));
  auto z = g.forward(m.sequence_embedding(g, out));
  auto cls = g.forward(m.cls_output(g, out));
  double norm = 0.0;
  for (double v : cls.values()) norm += v * v;
  norm = std::sqrt(norm);
  for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(z[k], cls[k] / norm, 1e-12);
}

TEST(SequenceEmbedding, DisabledProjectionUsesClassToken) {
  auto cfg = tiny();
  cfg.use_projection = false;
  Model<double> m(cfg, 8);
  std::mt19937_64 rng(10);
  auto in = random_input(4, 4, rng);
  Graph<double> g;
  Var out = m.encode(g, m.embed(g, in));
  auto z = g.forward(m.sequence_embedding(g, out));
  EXPECT_EQ(z.cols(), 8u);
}

TEST(SequenceEmbedding, Deterministic) {
  Model<double> m(tiny(), 8);
  std::mt19937_64 rng(10);
  auto in = random_input(6, 4, rng);
  Graph<double> g1, g2;
  auto a = g1.forward(m.sequence_embedding(g1, m.encode(g1, m.embed(g1, in))));
  auto b = g2.forward(m.sequence_embedding(g2, m.encode(g2, m.embed(g2, in))));
  EXPECT_EQ(a, b);
}

TEST(PredictValues, ZeroWeightGivesBias) {
  Model<double> m(tiny(), 8);
  m.params().value(m.value_head_w()).fill(0.0);
  m.params().value(m.value_head_b())[0] = 2.5;
  std::mt19937_64 rng(10);
  auto in = random_input(6, 4, rng);
  Graph<double> g;
  auto p = g.forward(m.predict_values(g, m.encode(g, m.embed(g, in, {0, 4})), {0, 4}));
  ASSERT_EQ(p.rows(), 2u);
  EXPECT_EQ(p[0], 2.5);
  EXPECT_EQ(p[1], 2.5);
}

TEST(PredictValues, EmptyMaskIsContractError) {
  Model<double> m(tiny(), 8);
  std::mt19937_64 rng(10);
  auto in = random_input(3, 4, rng);
  Graph<double> g;
  Var out = m.encode(g, m.embed(g, in));
  EXPECT_THROW(m.predict_values(g, out, {}), ContractError);
}

TEST(PredictValues, DependsOnEarlierValuesNotLaterOnes) {
  Model<double> m(tiny(), 13);
  std::mt19937_64 rng(14);
  auto in = random_input(6, 4, rng);
  auto predict = [&](const SequenceInput& s) {
    Graph<double> g;
    return g.forward(m.predict_values(g, m.encode(g, m.embed(g, s, {3})), {3}))[0];
  };
  const double base = predict(in);
  auto earlier = in;
  earlier.v[1] += 1.0;
  EXPECT_NE(predict(earlier), base);
  auto later = in;
  later.v[5] += 1.0;
  later.v[4] -= 2.0;
  EXPECT_EQ(predict(later), base);
}

TEST(Masking, GradientWithRespectToMaskedValueIsZero) {
  Model<double> m(tiny(), 15);
  std::mt19937_64 rng(16);
  auto in = random_input(6, 4, rng);
  Graph<double> g;
  NdArray<double> values(6, 1);
  for (std::size_t j = 0; j < 6; ++j) values[j] = in.v[j];
  Var v = g.leaf(values);
  const std::vector<std::size_t> mask{1, 4};
  Var out = m.encode(g, m.embed(g, in, v, mask));
  Var pred = m.predict_values(g, out, mask);
  NdArray<double> target(2, 1, std::vector<double>{in.v[1], in.v[4]});
  Var loss = g.add(g.reduce_mean(g.square(g.sub(pred, g.constant(target)))),
                   g.reduce_sum(m.sequence_embedding(g, out)));
  g.forward(loss);
  g.backward(loss);
  auto grad = g.grad(v);
  EXPECT_EQ(grad[1], 0.0);
  EXPECT_EQ(grad[4], 0.0);
  EXPECT_NE(grad[0], 0.0);
}

TEST(ModelConfig, RejectsIndivisibleHeads) {
  auto cfg = tiny();
  cfg.heads = 3;
  EXPECT_THROW(Model<double>(cfg, 1), ConfigError);
}

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("tgcl_model_test_" + name)).string();
}

data::Vocabulary vocab_of(std::size_t n) {
  data::Vocabulary v;
  for (std::size_t i = 0; i < n; ++i) v.add("f" + std::to_string(i), data::FeatureKind::Continuous);
  return v;
}

std::vector<std::string> names_of(const data::Vocabulary& v) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(v.name(i));
  return out;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  Model<float> m(tiny(), 31);
  auto vocab = vocab_of(4);
  auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(m, names_of(vocab), path);
  auto ck = load_checkpoint<float>(path, &vocab);
  EXPECT_EQ(ck.model.config(), m.config());
  EXPECT_EQ(ck.model.params(), m.params());
  EXPECT_EQ(ck.feature_names, names_of(vocab));
  std::filesystem::remove(path);
}

TEST(Checkpoint, SmallerVocabularyIsLoadErrorNamingVocabulary) {
  Model<float> m(tiny(4), 31);
  auto path = temp_path("vocab.ckpt");
  save_checkpoint(m, names_of(vocab_of(4)), path);
  auto small = vocab_of(3);
  try {
    load_checkpoint<float>(path, &small);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("vocabulary"), std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, TruncatedFileIsParseError) {
  Model<float> m(tiny(), 31);
  std::ostringstream os;
  save_checkpoint(m, {}, os);
  const std::string full = os.str();
  for (std::size_t cut : {std::size_t(3), std::size_t(20), full.size() / 2, full.size() - 1}) {
    EXPECT_THROW(read_checkpoint<float>(full.substr(0, cut)), ParseError) << "cut at " << cut;
  }
}

TEST(Checkpoint, VersionMismatchIsLoadError) {
  Model<float> m(tiny(), 31);
  std::ostringstream os;
  save_checkpoint(m, {}, os);
  std::string bytes = os.str();
  std::uint32_t bad = 99;
  std::memcpy(bytes.data() + 8, &bad, 4);
  EXPECT_THROW(read_checkpoint<float>(bytes), LoadError);
}

TEST(Checkpoint, MissingFileIsIoError) {
  EXPECT_THROW(load_checkpoint<float>(temp_path("does_not_exist.ckpt")), IoError);
}

TEST(Checkpoint, DoubleCheckpointLoadsIntoFloatModel) {
  Model<double> m(tiny(), 31);
  std::ostringstream os;
  save_checkpoint(m, {}, os);
  auto ck = read_checkpoint<float>(os.str());
  const auto& a = m.params().value(m.feature_table());
  const auto& b = ck.model.params().value(ck.model.feature_table());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(b[i], static_cast<float>(a[i]));
}
