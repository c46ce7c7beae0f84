#pragma once

// Synthetic ICU-like event streams with a known latent structure.
//
// Each stay carries a 2-d latent state: a per-stay offset plus an hourly
// Gaussian random walk. Feature k observes the state through a fixed loading
// vector, with its own raw scale, offset and observation noise, at times drawn
// from a per-feature Poisson process.
//
//   mortality   = [ w . s(H) > threshold ], flipped with prob label_noise
//   phenotype j = [ p_j . mean_t s(t) > 0 ]
//
// Feature parameters depend only on (seed, feature index), so a config with
// more features contains the smaller config's features as its leading indices.

#include <array>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>

#include "tgcl/data/types.hpp"

namespace tgcl::data {

struct SynthConfig {
  std::size_t n_stays = 1000;
  std::size_t n_features = 17;
  double horizon_hours = 48.0;
  double rate_lo = 0.04;  // events per hour per feature
  double rate_hi = 0.20;
  double label_noise = 0.05;
  double walk_sigma = 0.12;  // per hour
  double obs_noise = 0.4;
  double mortality_threshold = 0.6;
};

struct SynthFeature {
  std::string name;
  std::array<double, 2> loading{};
  double offset = 0.0;
  double scale = 1.0;
  double rate = 0.1;
};

namespace detail {
inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}
}  // namespace detail

inline std::string synth_feature_name(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "m%03zu", k);
  return buf;
}

inline SynthFeature synth_feature(const SynthConfig& cfg, std::uint64_t seed, std::size_t k) {
  auto rng = detail::stream(seed, 1, k);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SynthFeature f;
  f.name = synth_feature_name(k);
  f.loading = {normal(rng), normal(rng)};
  f.offset = 20.0 + 100.0 * unit(rng);
  f.scale = 2.0 + 18.0 * unit(rng);
  f.rate = cfg.rate_lo + (cfg.rate_hi - cfg.rate_lo) * unit(rng);
  return f;
}

inline Dataset synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.n_features < 1) throw ConfigError("synth: n_features must be >= 1");
  if (cfg.n_stays < 1) throw ConfigError("synth: n_stays must be >= 1");
  if (!(cfg.horizon_hours > 0.0)) throw ConfigError("synth: horizon_hours must be positive");
  if (!(cfg.rate_lo > 0.0) || cfg.rate_hi < cfg.rate_lo)
    throw ConfigError("synth: need 0 < rate_lo <= rate_hi");
  if (cfg.label_noise < 0.0 || cfg.label_noise > 0.5)
    throw ConfigError("synth: label_noise must be in [0, 0.5]");

  std::vector<SynthFeature> features;
  Dataset ds;
  for (std::size_t k = 0; k < cfg.n_features; ++k) {
    features.push_back(synth_feature(cfg, seed, k));
    ds.vocab.add(features.back().name, FeatureKind::Continuous);
  }
  ds.provenance = "synth:seed=" + std::to_string(seed);

  // Task heads shared by all stays.
  auto task_rng = detail::stream(seed, 2, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double angle = std::uniform_real_distribution<double>(0.0, 2.0 * M_PI)(task_rng);
  const std::array<double, 2> mort_dir{std::cos(angle), std::sin(angle)};
  std::array<std::array<double, 2>, kPhenotypeCount> pheno{};
  for (auto& p : pheno) p = {normal(task_rng), normal(task_rng)};

  const auto hours = static_cast<std::size_t>(std::ceil(cfg.horizon_hours));
  for (std::size_t i = 0; i < cfg.n_stays; ++i) {
    auto rng = detail::stream(seed, 3, i);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // Latent path sampled on the hour grid [0, hours].
    std::vector<std::array<double, 2>> path(hours + 1);
    path[0] = {normal(rng), normal(rng)};
    for (std::size_t h = 1; h <= hours; ++h)
      path[h] = {path[h - 1][0] + cfg.walk_sigma * normal(rng),
                 path[h - 1][1] + cfg.walk_sigma * normal(rng)};
    auto state_at = [&](double t) {
      auto h = std::min<std::size_t>(static_cast<std::size_t>(t), hours - 1);
      double a = t - double(h);
      return std::array<double, 2>{path[h][0] * (1 - a) + path[h + 1][0] * a,
                                   path[h][1] * (1 - a) + path[h + 1][1] * a};
    };

    StaySequence stay;
    char id[32];
    std::snprintf(id, sizeof id, "stay%06zu", i);
    stay.stay_id = id;
    for (std::size_t k = 0; k < features.size(); ++k) {
      const auto& f = features[k];
      std::poisson_distribution<int> count(f.rate * cfg.horizon_hours);
      int n = count(rng);
      for (int e = 0; e < n; ++e) {
        double t = unit(rng) * cfg.horizon_hours;
        auto s = state_at(t);
        double latent = f.loading[0] * s[0] + f.loading[1] * s[1];
        double v = f.offset + f.scale * (latent + cfg.obs_noise * normal(rng));
        stay.events.push_back({t, v, k});
      }
    }
    if (stay.events.empty()) {
      // Guarantee T >= 1 with a single draw of feature 0.
      double t = unit(rng) * cfg.horizon_hours;
      auto s = state_at(t);
      const auto& f = features[0];
      stay.events.push_back(
          {t, f.offset + f.scale * (f.loading[0] * s[0] + f.loading[1] * s[1]), 0});
    }
    stay.sort_events();

    const auto& end = path[hours];
    bool died = mort_dir[0] * end[0] + mort_dir[1] * end[1] > cfg.mortality_threshold;
    if (unit(rng) < cfg.label_noise) died = !died;
    stay.mortality = static_cast<std::uint8_t>(died);

    std::array<double, 2> mean{0.0, 0.0};
    for (const auto& p : path) {
      mean[0] += p[0];
      mean[1] += p[1];
    }
    mean[0] /= double(path.size());
    mean[1] /= double(path.size());
    PhenotypeBits bits{};
    for (std::size_t j = 0; j < kPhenotypeCount; ++j)
      bits[j] = static_cast<std::uint8_t>(pheno[j][0] * mean[0] + pheno[j][1] * mean[1] > 0.0);
    stay.phenotypes = bits;
    ds.stays.push_back(std::move(stay));
  }
  return ds;
}

}  // namespace tgcl::data
