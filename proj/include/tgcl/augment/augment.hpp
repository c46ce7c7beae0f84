#pragma once

// Positive-pair construction: a contiguous global window, paired with either a
// re-noised copy of itself or a local view made of one or several short
// regions. Views select events by index and add Gaussian noise to values; t and
// f are never touched.

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "tgcl/data/types.hpp"
#include "tgcl/errors.hpp"
#include "tgcl/model/model.hpp"

namespace tgcl::augment {

struct AugmentConfig {
  std::pair<double, double> global_frac{0.6, 1.0};
  std::pair<double, double> local_frac{0.1, 0.4};
  double p_local = 0.5;
  std::pair<std::size_t, std::size_t> n_regions{2, 4};
  double noise_sigma = 0.1;

  void validate() const {
    auto ordered = [](auto r) { return r.first <= r.second; };
    if (!(global_frac.first > 0.0 && global_frac.second <= 1.0 && ordered(global_frac)))
      throw ConfigError("augment: global_frac must satisfy 0 < lo <= hi <= 1");
    if (!(local_frac.first > 0.0 && local_frac.second < 1.0 && ordered(local_frac)))
      throw ConfigError("augment: local_frac must satisfy 0 < lo <= hi < 1");
    if (!(p_local >= 0.0 && p_local <= 1.0)) throw ConfigError("augment: p_local must be in [0, 1]");
    if (n_regions.first < 1 || !ordered(n_regions)) throw ConfigError("augment: n_regions must satisfy 1 <= lo <= hi");
    if (!(noise_sigma >= 0.0)) throw ConfigError("augment: noise_sigma must be >= 0");
  }
};

struct View {
  std::vector<std::size_t> indices;  // strictly increasing
  std::vector<double> noise;         // one per kept index

  std::size_t size() const { return indices.size(); }

  // Triplets of the view with their original timestamps.
  model::SequenceInput apply(const data::StaySequence& s) const {
    model::SequenceInput in;
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const auto& e = s.events.at(indices[k]);
      in.t.push_back(e.t);
      in.v.push_back(e.v + noise[k]);
      in.f.push_back(e.f);
    }
    return in;
  }
};

namespace detail {

inline std::size_t window_length(double frac, std::size_t n) {
  auto len = static_cast<std::size_t>(std::ceil(frac * double(n) - 1e-12));
  return std::clamp<std::size_t>(len, 1, n);
}

inline double uniform(std::pair<double, double> r, std::mt19937_64& rng) {
  if (r.first == r.second) return r.first;
  return std::uniform_real_distribution<double>(r.first, r.second)(rng);
}

inline std::vector<std::size_t> contiguous(std::size_t len, std::size_t n, std::mt19937_64& rng) {
  std::size_t start = std::uniform_int_distribution<std::size_t>(0, n - len)(rng);
  std::vector<std::size_t> out(len);
  for (std::size_t k = 0; k < len; ++k) out[k] = start + k;
  return out;
}

inline void add_noise(View& v, double sigma, std::mt19937_64& rng) {
  v.noise.assign(v.indices.size(), 0.0);
  if (sigma == 0.0) return;
  std::normal_distribution<double> normal(0.0, sigma);
  for (auto& x : v.noise) x = normal(rng);
}

inline void require_pairable(const data::StaySequence& s) {
  if (s.events.size() < 2)
    throw DegenerateInputError("augment: stay '" + s.stay_id + "' has " + std::to_string(s.events.size()) +
                               " event(s); at least 2 are needed to form views");
}

}  // namespace detail

// Local view with zero noise. Either one region of ceil(frac T) events, or k
// disjoint regions whose lengths sum to that total, placed uniformly.
inline View sample_local(const data::StaySequence& s, const AugmentConfig& cfg, std::mt19937_64& rng) {
  detail::require_pairable(s);
  const std::size_t n = s.events.size();
  const std::size_t total = detail::window_length(detail::uniform(cfg.local_frac, rng), n);
  View v;
  if (std::bernoulli_distribution(0.5)(rng)) {
    v.indices = detail::contiguous(total, n, rng);
    v.noise.assign(total, 0.0);
    return v;
  }
  std::size_t k = std::uniform_int_distribution<std::size_t>(cfg.n_regions.first, cfg.n_regions.second)(rng);
  k = std::min(k, total);

  // Region lengths: a uniform composition of `total` into k positive parts.
  std::vector<std::size_t> cuts(total - 1);
  for (std::size_t i = 0; i < cuts.size(); ++i) cuts[i] = i + 1;
  std::shuffle(cuts.begin(), cuts.end(), rng);
  cuts.resize(k - 1);
  std::sort(cuts.begin(), cuts.end());
  std::vector<std::size_t> lengths;
  std::size_t prev = 0;
  for (auto c : cuts) {
    lengths.push_back(c - prev);
    prev = c;
  }
  lengths.push_back(total - prev);

  // Gaps: k nondecreasing offsets in [0, n - total] (stars and bars).
  const std::size_t free = n - total;
  std::vector<std::size_t> slots(free + k);
  for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
  std::shuffle(slots.begin(), slots.end(), rng);
  slots.resize(k);
  std::sort(slots.begin(), slots.end());

  std::size_t used = 0;
  for (std::size_t r = 0; r < k; ++r) {
    const std::size_t start = slots[r] - r + used;
    for (std::size_t j = 0; j < lengths[r]; ++j) v.indices.push_back(start + j);
    used += lengths[r];
  }
  v.noise.assign(total, 0.0);
  return v;
}

inline std::pair<View, View> sample_pair(const data::StaySequence& s, const AugmentConfig& cfg,
                                         std::mt19937_64& rng) {
  detail::require_pairable(s);
  const std::size_t n = s.events.size();
  View a;
  a.indices = detail::contiguous(detail::window_length(detail::uniform(cfg.global_frac, rng), n), n, rng);
  View b;
  if (cfg.p_local > 0.0 && std::bernoulli_distribution(cfg.p_local)(rng))
    b = sample_local(s, cfg, rng);
  else
    b.indices = a.indices;
  detail::add_noise(a, cfg.noise_sigma, rng);
  detail::add_noise(b, cfg.noise_sigma, rng);
  return {std::move(a), std::move(b)};
}

}  // namespace tgcl::augment
