#include <gtest/gtest.h>

#include <cmath>

#include "tgcl/data/normalizer.hpp"
#include "tgcl/data/synth.hpp"
#include "tgcl/data/transforms.hpp"
#include "tgcl/objectives/pretrain.hpp"

using namespace tgcl;
using namespace tgcl::objectives;

namespace {

model::ModelConfig tiny() {
  model::ModelConfig c;
  c.d = 8;
  c.heads = 2;
  c.layers = 1;
  c.ff = 16;
  c.vocab = 4;
  c.proj = 4;
  return c;
}

data::Dataset toy(std::size_t n, std::size_t len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  data::Dataset ds;
  for (int k = 0; k < 4; ++k) ds.vocab.add("f" + std::to_string(k), data::FeatureKind::Continuous);
  for (std::size_t i = 0; i < n; ++i) {
    data::StaySequence s;
    s.stay_id = "s" + std::to_string(i);
    for (std::size_t j = 0; j < len + i % 3; ++j) s.events.push_back({0.5 * double(j), normal(rng), j % 4});
    s.mortality = i % 2;
    ds.stays.push_back(s);
  }
  return ds;
}

// Monolithic oracle: every item of the batch in one double graph, with the
// same random streams as the trainer.
numerics::GradStore<double> monolithic_gradient(const model::Model<double>& m, const data::Dataset& ds,
                                                const std::vector<std::size_t>& ids, const PretrainConfig& cfg,
                                                std::uint64_t tag, EstimatorState& state) {
  numerics::Graph<double> g;
  std::vector<numerics::Var> za, zb, sse;
  std::size_t masked = 0;
  for (auto i : ids) {
    auto rng = objectives::detail::stream(cfg.seed, tag, i);
    auto s = objectives::detail::crop(ds.stays[i], cfg.max_len, rng);
    auto [a, b] = augment::sample_pair(s, cfg.augment, rng);
    auto in_a = a.apply(s);
    auto mask = sample_mask(in_a.size(), cfg.mask_rate, rng);
    auto out_a = m.encode(g, m.embed(g, in_a, mask));
    auto out_b = m.encode(g, m.embed(g, b.apply(s)));
    za.push_back(m.sequence_embedding(g, out_a));
    zb.push_back(m.sequence_embedding(g, out_b));
    std::vector<double> targets;
    for (auto j : mask) targets.push_back(s.events[a.indices[j]].v);
    sse.push_back(masked_sse(g, m.predict_values(g, out_a, mask), targets));
    masked += mask.size();
  }
  auto A = g.concat_rows(za);
  auto B = g.concat_rows(zb);
  update_batch_estimates(state, ids, g.forward(A), g.forward(B), cfg.gcl);
  auto con = gcl_batch_loss(g, A, B, ids, state, cfg.gcl);
  auto rec = sse[0];
  for (std::size_t k = 1; k < sse.size(); ++k) rec = g.add(rec, sse[k]);
  auto loss = g.add(con, g.scale(rec, cfg.gcl.lambda_mask / double(masked)));
  g.forward(loss);
  g.backward(loss);
  numerics::GradStore<double> grads(m.params());
  g.accumulate_param_grads(grads);
  return grads;
}

PretrainConfig small_config(Objective o) {
  PretrainConfig cfg;
  cfg.objective = o;
  cfg.epochs = 3;
  cfg.warmup_epochs = 1;
  cfg.batch_size = 8;
  cfg.optim.lr = 3e-3;
  cfg.max_len = 24;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST(Pretrainer, SplitGradientMatchesMonolithicGraph) {
  auto ds = toy(6, 9, 1);
  model::Model<double> m(tiny(), 3);
  PretrainConfig cfg = small_config(Objective::Combined);
  cfg.max_len = 7;
  cfg.gcl.gamma = 0.5;
  cfg.gcl.lambda_mask = 0.7;
  std::vector<std::size_t> ids{4, 1, 5, 0};

  // Warm the estimates once so the oracle sees stale u as well.
  Pretrainer<double> trainer(m, cfg, ds.size());
  numerics::GradStore<double> warm(m.params());
  trainer.gradient(ds, {0, 1, 2, 3, 4, 5}, 7, warm);
  EstimatorState oracle_state = trainer.state();

  numerics::GradStore<double> split(m.params());
  trainer.gradient(ds, ids, 9, split);
  auto mono = monolithic_gradient(m, ds, ids, cfg, 9, oracle_state);
  EXPECT_EQ(trainer.state().u, oracle_state.u);

  // Normwise: summation order differs between the two graphs.
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < split.size(); ++i)
    for (std::size_t k = 0; k < split[i].size(); ++k) {
      diff = std::max(diff, std::abs(split[i][k] - mono[i][k]));
      scale = std::max(scale, std::abs(mono[i][k]));
    }
  EXPECT_GT(scale, 0.0);
  EXPECT_LT(diff, 1e-12 * scale);
}

TEST(Pretrainer, ThreadCountDoesNotChangeResults) {
  auto ds = toy(20, 12, 2);
  auto run = [&](std::size_t threads) {
    model::Model<float> m(tiny(), 5);
    auto cfg = small_config(Objective::Combined);
    cfg.threads = threads;
    data::Dataset val = toy(6, 10, 3);
    auto r = pretrain(m, ds, val, cfg);
    return std::make_pair(m.params(), r.log.back().val_loss);
  };
  auto a = run(1);
  auto b = run(3);
  EXPECT_TRUE(a.first == b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Pretrainer, SameSeedIsBitIdentical) {
  auto ds = toy(16, 10, 4);
  auto run = [&] {
    model::Model<float> m(tiny(), 5);
    auto r = pretrain(m, ds, ds, small_config(Objective::Gcl));
    return std::make_pair(m.params(), r.state.u);
  };
  auto a = run();
  auto b = run();
  EXPECT_TRUE(a.first == b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Pretrainer, EstimatorStatisticsOnlyForEstimatorObjectives) {
  auto ds = toy(12, 8, 5);
  for (auto o : {Objective::Gcl, Objective::Combined, Objective::Simclr, Objective::Masked, Objective::Forecast}) {
    model::Model<float> m(tiny(), 1);
    auto cfg = small_config(o);
    cfg.epochs = 1;
    auto r = pretrain(m, ds, ds, cfg);
    ASSERT_EQ(r.log.size(), 1u);
    const bool expect_u = o == Objective::Gcl || o == Objective::Combined;
    EXPECT_EQ(r.log[0].u.has_value(), expect_u) << objective_name(o);
    if (expect_u) {
      EXPECT_EQ(r.log[0].u->visited, ds.size());
      EXPECT_GT(r.log[0].u->min, 0.0);
      EXPECT_LE(r.log[0].u->min, r.log[0].u->mean);
      EXPECT_LE(r.log[0].u->mean, r.log[0].u->max);
    }
    EXPECT_TRUE(std::isfinite(r.log[0].train_loss));
  }
}

TEST(Pretrainer, EstimatesPersistAcrossEpochsByDatasetIndex) {
  auto ds = toy(10, 8, 6);
  model::Model<double> m(tiny(), 2);
  auto cfg = small_config(Objective::Gcl);
  Pretrainer<double> trainer(m, cfg, ds.size());
  numerics::GradStore<double> g(m.params());
  trainer.gradient(ds, {3, 7}, 1, g);
  const double u3 = trainer.state().u[3];
  EXPECT_GT(u3, 0.0);
  EXPECT_EQ(trainer.state().u[0], 0.0);
  trainer.gradient(ds, {0, 1}, 2, g);
  EXPECT_EQ(trainer.state().u[3], u3);
}

TEST(Pretrainer, MaskedLossFallsOnLearnableData) {
  data::SynthConfig sc;
  sc.n_stays = 200;
  sc.n_features = 4;
  auto raw = data::split_dataset(data::synth_generate(sc, 3), 3);
  auto norm = data::fit_normalizer(raw.train).normalizer;
  auto train = data::apply_normalizer(raw.train, norm).dataset;
  auto val = data::apply_normalizer(raw.val, norm).dataset;
  auto mc = tiny();
  mc.vocab = train.vocab.size();
  model::Model<float> m(mc, 4);
  auto cfg = small_config(Objective::Masked);
  cfg.epochs = 2;
  cfg.warmup_epochs = 0;
  cfg.optim.lr = 1e-2;
  auto r = pretrain(m, train, val, cfg);
  ASSERT_EQ(r.log.size(), 2u);
  EXPECT_LT(r.log[1].train_loss, r.log[0].train_loss);
  EXPECT_LT(r.log[1].val_loss, r.log[0].val_loss);
}

TEST(Pretrainer, ForecastMasksTheTail) {
  auto ds = toy(1, 20, 7);
  auto cfg = small_config(Objective::Forecast);
  cfg.max_len = 0;
  model::Model<double> m(tiny(), 1);
  Pretrainer<double> trainer(m, cfg, 1);
  numerics::GradStore<double> g(m.params());
  trainer.gradient(ds, {0}, 1, g);
  // Value head and value embedding see gradients; with the tail masked, the
  // loss is the mean over 2 positions.
  auto oracle = [&] {
    numerics::Graph<double> h;
    auto in = model::SequenceInput::from_stay(ds.stays[0]);
    auto mask = forecast_mask(in.size());
    EXPECT_EQ(mask, (std::vector<std::size_t>{18, 19}));
    std::vector<double> t{in.v[18], in.v[19]};
    auto l = masked_loss(h, m.predict_values(h, m.encode(h, m.embed(h, in, mask)), mask), t);
    h.forward(l);
    h.backward(l);
    numerics::GradStore<double> out(m.params());
    h.accumulate_param_grads(out);
    return out;
  }();
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t k = 0; k < g[i].size(); ++k) EXPECT_NEAR(g[i][k], oracle[i][k], 1e-12);
}

TEST(Pretrainer, CombinedWithoutContrastiveIsMaskedOnly) {
  auto ds = toy(8, 10, 8);
  model::Model<double> m(tiny(), 1);
  auto cfg = small_config(Objective::Combined);
  cfg.contrastive_enabled = false;
  Pretrainer<double> trainer(m, cfg, ds.size());
  auto l = trainer.loss(ds, {0, 1, 2}, 3);
  EXPECT_EQ(l.contrastive, 0.0);
  EXPECT_GT(l.masked, 0.0);
  EXPECT_DOUBLE_EQ(l.total, cfg.gcl.lambda_mask * l.masked);
}

TEST(PretrainConfig, Validation) {
  PretrainConfig cfg;
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.mask_rate = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.gcl.tau = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(parse_objective("byol"), ConfigError);
  EXPECT_EQ(parse_objective("forecast"), Objective::Forecast);
}
