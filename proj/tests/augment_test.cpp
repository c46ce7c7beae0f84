#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "tgcl/augment/augment.hpp"

using namespace tgcl;
using namespace tgcl::augment;

namespace {

data::StaySequence make_stay(std::size_t n) {
  data::StaySequence s;
  s.stay_id = "s";
  for (std::size_t i = 0; i < n; ++i) s.events.push_back({double(i) * 0.5, double(i) * 1.5 - 3.0, i % 3});
  return s;
}

bool strictly_increasing(const std::vector<std::size_t>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] <= v[i - 1]) return false;
  return true;
}

}  // namespace

TEST(SamplePair, AllRandomnessOffGivesIdentityViews) {
  AugmentConfig cfg;
  cfg.noise_sigma = 0.0;
  cfg.p_local = 0.0;
  cfg.global_frac = {1.0, 1.0};
  auto s = make_stay(9);
  std::mt19937_64 rng(1);
  auto [a, b] = sample_pair(s, cfg, rng);
  std::vector<std::size_t> all{0, 1, 2, 3, 4, 5, 6, 7, 8};
  EXPECT_EQ(a.indices, all);
  EXPECT_EQ(b.indices, all);
  for (double x : a.noise) EXPECT_EQ(x, 0.0);
  for (double x : b.noise) EXPECT_EQ(x, 0.0);
}

TEST(SamplePair, ViewsAreValidSubsequences) {
  AugmentConfig cfg;
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 2000; ++trial) {
    auto s = make_stay(2 + trial % 40);
    auto [a, b] = sample_pair(s, cfg, rng);
    for (const View* v : {&a, &b}) {
      ASSERT_FALSE(v->indices.empty());
      ASSERT_TRUE(strictly_increasing(v->indices));
      ASSERT_LT(v->indices.back(), s.events.size());
      ASSERT_EQ(v->noise.size(), v->indices.size());
    }
  }
}

TEST(SamplePair, ViewsKeepTimesAndFeatures) {
  AugmentConfig cfg;
  cfg.noise_sigma = 0.3;
  auto s = make_stay(25);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto [a, b] = sample_pair(s, cfg, rng);
    for (const View* v : {&a, &b}) {
      auto in = v->apply(s);
      for (std::size_t k = 0; k < v->size(); ++k) {
        const auto& e = s.events[v->indices[k]];
        EXPECT_EQ(in.t[k], e.t);
        EXPECT_EQ(in.f[k], e.f);
        EXPECT_DOUBLE_EQ(in.v[k], e.v + v->noise[k]);
      }
    }
  }
}

TEST(SamplePair, GlobalWindowLength) {
  AugmentConfig cfg;
  cfg.global_frac = {0.5, 0.5};
  auto s = make_stay(11);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    auto [a, b] = sample_pair(s, cfg, rng);
    EXPECT_EQ(a.size(), 6u);
    EXPECT_EQ(a.indices.back() - a.indices.front(), 5u);
  }
}

TEST(SamplePair, NoiseIsCenteredWithConfiguredSpread) {
  AugmentConfig cfg;
  cfg.noise_sigma = 0.1;
  cfg.p_local = 0.0;
  cfg.global_frac = {1.0, 1.0};
  auto s = make_stay(5);
  std::mt19937_64 rng(5);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  while (n < 100000) {
    auto [a, b] = sample_pair(s, cfg, rng);
    for (double x : a.noise) {
      sum += x;
      sq += x * x;
      ++n;
    }
  }
  const double mean = sum / double(n);
  EXPECT_LT(std::abs(mean), 3.0 * 0.1 / std::sqrt(double(n)));
  EXPECT_NEAR(std::sqrt(sq / double(n)), 0.1, 0.002);
}

TEST(SamplePair, SameSeedSamePair) {
  AugmentConfig cfg;
  auto s = make_stay(30);
  std::mt19937_64 r1(77), r2(77);
  for (int i = 0; i < 50; ++i) {
    auto p = sample_pair(s, cfg, r1);
    auto q = sample_pair(s, cfg, r2);
    EXPECT_EQ(p.first.indices, q.first.indices);
    EXPECT_EQ(p.second.indices, q.second.indices);
    EXPECT_EQ(p.first.noise, q.first.noise);
    EXPECT_EQ(p.second.noise, q.second.noise);
  }
}

TEST(SamplePair, SingleEventIsDegenerate) {
  AugmentConfig cfg;
  std::mt19937_64 rng(1);
  EXPECT_THROW(sample_pair(make_stay(1), cfg, rng), DegenerateInputError);
}

TEST(SampleLocal, HalfOfTenIsFiveConsecutive) {
  AugmentConfig cfg;
  cfg.local_frac = {0.5, 0.5};
  cfg.n_regions = {1, 1};  // single region either way
  auto s = make_stay(10);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    auto v = sample_local(s, cfg, rng);
    ASSERT_EQ(v.size(), 5u);
    EXPECT_EQ(v.indices.back() - v.indices.front(), 4u);
  }
}

TEST(SampleLocal, MultiRegionDrawsAreDisjointAndSorted) {
  AugmentConfig cfg;
  cfg.local_frac = {0.3, 0.3};
  auto s = make_stay(50);
  std::mt19937_64 rng(7);
  std::size_t multi = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    auto v = sample_local(s, cfg, rng);
    ASSERT_EQ(v.size(), 15u);
    ASSERT_TRUE(strictly_increasing(v.indices));
    ASSERT_LT(v.indices.back(), 50u);
    if (v.indices.back() - v.indices.front() > 14) ++multi;
  }
  // Roughly half the draws use several regions; most of those are spread out.
  EXPECT_GT(multi, 700u);
}

TEST(SampleLocal, SingleRegionStartIsUniform) {
  AugmentConfig cfg;
  cfg.local_frac = {0.25, 0.25};
  cfg.n_regions = {1, 1};
  auto s = make_stay(20);  // length 5, starts 0..15
  std::mt19937_64 rng(8);
  std::vector<std::size_t> counts(16, 0);
  const std::size_t draws = 100000;
  for (std::size_t i = 0; i < draws; ++i) ++counts.at(sample_local(s, cfg, rng).indices.front());
  const double expected = double(draws) / 16.0;
  for (auto c : counts) EXPECT_NEAR(double(c), expected, 0.05 * expected);
}

TEST(AugmentConfig, RejectsBadRanges) {
  AugmentConfig cfg;
  cfg.global_frac = {0.9, 0.5};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.local_frac = {0.1, 1.0};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.p_local = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.noise_sigma = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
