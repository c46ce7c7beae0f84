#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "tgcl/data/types.hpp"

namespace tgcl::data {

struct SplitSet {
  Dataset train, val, test;
};

// Deterministic 70/15/15 split by stay, shuffled with `seed`.
inline SplitSet split_dataset(const Dataset& ds, std::uint64_t seed) {
  const std::size_t n = ds.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const auto n_train = static_cast<std::size_t>(std::floor(0.70 * double(n) + 0.5));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::floor(0.15 * double(n) + 0.5)));

  SplitSet out;
  for (auto* part : {&out.train, &out.val, &out.test}) {
    part->vocab = ds.vocab;
    part->provenance = ds.provenance;
  }
  out.train.split = Split::Train;
  out.val.split = Split::Val;
  out.test.split = Split::Test;
  for (std::size_t k = 0; k < n; ++k) {
    Dataset& dst = k < n_train ? out.train : k < n_train + n_val ? out.val : out.test;
    dst.stays.push_back(ds.stays[order[k]]);
  }
  return out;
}

struct WindowResult {
  Dataset dataset;
  std::size_t removed = 0;
};

// Keeps events with t < hours; stays left empty are removed and counted.
inline WindowResult window(const Dataset& ds, double hours) {
  if (!(hours > 0.0)) throw ConfigError("window: hours must be positive");
  WindowResult r;
  r.dataset.vocab = ds.vocab;
  r.dataset.split = ds.split;
  r.dataset.provenance = ds.provenance;
  for (const auto& s : ds.stays) {
    StaySequence w = s;
    w.events.erase(std::remove_if(w.events.begin(), w.events.end(),
                                  [&](const TripletEvent& e) { return !(e.t < hours); }),
                   w.events.end());
    if (w.events.empty()) {
      ++r.removed;
      continue;
    }
    r.dataset.stays.push_back(std::move(w));
  }
  return r;
}

// Restricts a dataset to its first `count` vocabulary entries (nested feature
// sets share a prefix). Stays left empty are dropped.
inline Dataset select_leading_features(const Dataset& ds, std::size_t count) {
  if (count == 0 || count > ds.vocab.size())
    throw ConfigError("select_leading_features: count must be in [1, vocabulary size]");
  Dataset out;
  for (std::size_t i = 0; i < count; ++i) out.vocab.add(ds.vocab.name(i), ds.vocab.entry(i).kind);
  out.split = ds.split;
  out.provenance = ds.provenance;
  for (const auto& s : ds.stays) {
    StaySequence w = s;
    std::erase_if(w.events, [&](const TripletEvent& e) { return e.f >= count; });
    if (!w.events.empty()) out.stays.push_back(std::move(w));
  }
  return out;
}

}  // namespace tgcl::data
