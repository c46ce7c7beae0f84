#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tgcl/data/types.hpp"

namespace tgcl::data {

struct FeatureStats {
  std::string name;
  FeatureKind kind = FeatureKind::Continuous;
  double mean = 0.0;
  double std = 1.0;
  double min = -std::numeric_limits<double>::infinity();
  double max = std::numeric_limits<double>::infinity();

  bool in_bounds(double v) const { return v >= min && v <= max; }
  friend bool operator==(const FeatureStats&, const FeatureStats&) = default;
};

// Per-feature standardisation and outlier bounds, indexed like its vocabulary.
class Normalizer {
 public:
  Normalizer() = default;
  explicit Normalizer(std::vector<FeatureStats> features) : features_(std::move(features)) {
    for (const auto& f : features_) vocab_.add(f.name, f.kind);
  }

  const std::vector<FeatureStats>& features() const { return features_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  const FeatureStats& stats(std::size_t i) const { return features_.at(i); }
  std::size_t size() const { return features_.size(); }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json doc;
    doc["features"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < features_.size(); ++i) {
      const auto& f = features_[i];
      nlohmann::ordered_json e;
      e["name"] = f.name;
      e["index"] = i;
      e["kind"] = kind_name(f.kind);
      e["mean"] = f.mean;
      e["std"] = f.std;
      e["min"] = std::isfinite(f.min) ? nlohmann::ordered_json(f.min) : nlohmann::ordered_json();
      e["max"] = std::isfinite(f.max) ? nlohmann::ordered_json(f.max) : nlohmann::ordered_json();
      doc["features"].push_back(std::move(e));
    }
    return doc;
  }

  static Normalizer from_json(const nlohmann::json& doc) {
    if (!doc.is_object() || !doc.contains("features") || !doc["features"].is_array())
      throw ParseError("normalizer document needs a 'features' array");
    std::vector<FeatureStats> out(doc["features"].size());
    std::vector<bool> seen(out.size(), false);
    for (const auto& e : doc["features"]) {
      try {
        std::size_t idx = e.at("index").get<std::size_t>();
        if (idx >= out.size() || seen[idx]) throw ParseError("feature indices must be contiguous from 0");
        seen[idx] = true;
        FeatureStats& f = out[idx];
        f.name = e.at("name").get<std::string>();
        f.kind = parse_kind(e.value("kind", std::string("continuous")));
        f.mean = e.value("mean", 0.0);
        f.std = e.value("std", 1.0);
        if (e.contains("min") && !e["min"].is_null()) f.min = e["min"].get<double>();
        if (e.contains("max") && !e["max"].is_null()) f.max = e["max"].get<double>();
        if (!(f.std > 0.0)) throw ParseError("feature '" + f.name + "' has non-positive std");
      } catch (const nlohmann::json::exception& ex) {
        throw ParseError(std::string("normalizer entry: ") + ex.what());
      }
    }
    return Normalizer(std::move(out));
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << to_json().dump(2) << '\n';
  }

  static Normalizer load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    nlohmann::json doc;
    try {
      in >> doc;
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("normalizer file: ") + e.what());
    }
    return from_json(doc);
  }

  friend bool operator==(const Normalizer& a, const Normalizer& b) { return a.features_ == b.features_; }

 private:
  std::vector<FeatureStats> features_;
  Vocabulary vocab_;
};

// Bounds documents share the normalizer schema; only name/kind/min/max are read.
inline FeatureSpec feature_spec_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("features") || !doc["features"].is_array())
    throw ParseError("feature spec needs a 'features' array");
  FeatureSpec spec;
  for (const auto& e : doc["features"]) {
    FeatureDecl d;
    try {
      d.name = e.at("name").get<std::string>();
      d.kind = parse_kind(e.value("kind", std::string("continuous")));
      if (e.contains("min") && !e["min"].is_null()) d.min = e["min"].get<double>();
      if (e.contains("max") && !e["max"].is_null()) d.max = e["max"].get<double>();
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(std::string("feature spec entry: ") + ex.what());
    }
    if (d.min > d.max) throw ConfigError("feature '" + d.name + "' has min > max");
    spec.features.push_back(std::move(d));
  }
  return spec;
}

inline FeatureSpec load_feature_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("feature spec file: ") + e.what());
  }
  return feature_spec_from_json(doc);
}

struct FitResult {
  Normalizer normalizer;
  std::vector<std::string> warnings;
};

// Population mean/std per continuous feature over in-bounds values of the
// training split. Out-of-bounds values are excluded (and later dropped by
// apply_normalizer). Categorical one-hot features are never standardised.
inline FitResult fit_normalizer(const Dataset& train, const FeatureSpec& bounds = {}) {
  if (train.stays.empty()) throw ValidationError("fit_normalizer: training split is empty");
  const std::size_t V = train.vocab.size();
  std::vector<double> sum(V, 0.0);
  std::vector<std::size_t> count(V, 0);
  std::vector<FeatureStats> stats(V);
  for (std::size_t i = 0; i < V; ++i) {
    const auto& e = train.vocab.entry(i);
    stats[i].name = e.name;
    stats[i].kind = e.kind;
    if (const auto* d = bounds.find(e.name); d && e.kind == FeatureKind::Continuous) {
      stats[i].min = d->min;
      stats[i].max = d->max;
    }
  }
  for (const auto& s : train.stays)
    for (const auto& e : s.events)
      if (stats[e.f].in_bounds(e.v)) {
        sum[e.f] += e.v;
        ++count[e.f];
      }
  for (std::size_t i = 0; i < V; ++i) stats[i].mean = count[i] ? sum[i] / double(count[i]) : 0.0;
  std::vector<double> sq(V, 0.0);
  for (const auto& s : train.stays)
    for (const auto& e : s.events)
      if (stats[e.f].in_bounds(e.v)) sq[e.f] += (e.v - stats[e.f].mean) * (e.v - stats[e.f].mean);

  FitResult result;
  for (std::size_t i = 0; i < V; ++i) {
    auto& f = stats[i];
    if (f.kind == FeatureKind::Categorical) {
      f.mean = 0.0;
      f.std = 1.0;
      continue;
    }
    if (count[i] == 0) {
      f.mean = 0.0;
      f.std = 1.0;
      result.warnings.push_back("feature '" + f.name + "' has no in-bounds events; using mean 0, std 1");
      continue;
    }
    double sd = std::sqrt(sq[i] / double(count[i]));
    f.std = sd > 0.0 ? sd : 1.0;
  }
  result.normalizer = Normalizer(std::move(stats));
  return result;
}

struct ApplyResult {
  Dataset dataset;
  std::set<std::string> dropped_features;  // present in input, unknown to the normalizer
  std::size_t dropped_feature_events = 0;
  std::size_t dropped_outlier_events = 0;
  std::size_t removed_stays = 0;
};

// Re-indexes into the normalizer's vocabulary, drops foreign features and
// out-of-bounds events, and standardises continuous values.
inline ApplyResult apply_normalizer(const Dataset& ds, const Normalizer& norm) {
  ApplyResult result;
  Dataset& out = result.dataset;
  out.vocab = norm.vocabulary();
  out.split = ds.split;
  out.provenance = ds.provenance;

  std::vector<std::optional<std::size_t>> remap(ds.vocab.size());
  for (std::size_t i = 0; i < ds.vocab.size(); ++i) {
    remap[i] = norm.vocabulary().find(ds.vocab.name(i));
    if (!remap[i]) result.dropped_features.insert(ds.vocab.name(i));
  }

  for (const auto& s : ds.stays) {
    StaySequence ns = s;
    ns.events.clear();
    for (const auto& e : s.events) {
      if (!remap[e.f]) {
        ++result.dropped_feature_events;
        continue;
      }
      const auto& st = norm.stats(*remap[e.f]);
      if (!st.in_bounds(e.v)) {
        ++result.dropped_outlier_events;
        continue;
      }
      double v = st.kind == FeatureKind::Continuous ? (e.v - st.mean) / st.std : e.v;
      ns.events.push_back({e.t, v, *remap[e.f]});
    }
    if (ns.events.empty()) {
      ++result.removed_stays;
      continue;
    }
    ns.sort_events();
    out.stays.push_back(std::move(ns));
  }
  // Foreign features that never occurred in an event are not worth reporting.
  std::set<std::size_t> used;
  for (const auto& s : ds.stays)
    for (const auto& e : s.events) used.insert(e.f);
  for (std::size_t i = 0; i < ds.vocab.size(); ++i)
    if (!remap[i] && !used.count(i)) result.dropped_features.erase(ds.vocab.name(i));
  return result;
}

}  // namespace tgcl::data
