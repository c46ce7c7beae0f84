#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tgcl/errors.hpp"

namespace tgcl::data {

inline constexpr std::size_t kPhenotypeCount = 25;

// One measurement: hours since stay start, value, feature index.
struct TripletEvent {
  double t = 0.0;
  double v = 0.0;
  std::size_t f = 0;

  friend bool operator==(const TripletEvent&, const TripletEvent&) = default;
};

using PhenotypeBits = std::array<std::uint8_t, kPhenotypeCount>;

struct StaySequence {
  std::string stay_id;
  std::vector<TripletEvent> events;
  std::optional<std::uint8_t> mortality;
  std::optional<PhenotypeBits> phenotypes;

  std::size_t length() const { return events.size(); }

  // Sorts by time; ties by feature, then original order.
  void sort_events() {
    std::stable_sort(events.begin(), events.end(), [](const TripletEvent& a, const TripletEvent& b) {
      return a.t < b.t || (a.t == b.t && a.f < b.f);
    });
  }

  friend bool operator==(const StaySequence&, const StaySequence&) = default;
};

enum class FeatureKind { Continuous, Categorical };

inline const char* kind_name(FeatureKind k) {
  return k == FeatureKind::Continuous ? "continuous" : "categorical";
}
inline FeatureKind parse_kind(const std::string& s) {
  if (s == "continuous") return FeatureKind::Continuous;
  if (s == "categorical") return FeatureKind::Categorical;
  throw ParseError("unknown feature kind '" + s + "'");
}

// Name of the one-hot feature for a categorical base feature.
inline std::string category_name(const std::string& base, const std::string& category) {
  return base + "=" + category;
}

// Ordered feature name -> contiguous index map. Categorical features are
// stored expanded ("gcs=3").
class Vocabulary {
 public:
  struct Entry {
    std::string name;
    FeatureKind kind = FeatureKind::Continuous;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  std::size_t add(const std::string& name, FeatureKind kind) {
    if (auto it = index_.find(name); it != index_.end()) return it->second;
    entries_.push_back({name, kind});
    index_.emplace(name, entries_.size() - 1);
    return entries_.size() - 1;
  }

  std::size_t size() const { return entries_.size(); }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::optional<std::size_t> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::size_t at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw IndexError("feature '" + name + "' not in vocabulary");
    return it->second;
  }
  const Entry& entry(std::size_t i) const {
    if (i >= entries_.size())
      throw IndexError("feature index " + std::to_string(i) + " outside vocabulary of size " +
                       std::to_string(entries_.size()));
    return entries_[i];
  }
  const std::string& name(std::size_t i) const { return entry(i).name; }
  const std::vector<Entry>& entries() const { return entries_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Per-feature declaration used at ingest (kind) and normalizer fitting (bounds).
struct FeatureDecl {
  std::string name;
  FeatureKind kind = FeatureKind::Continuous;
  double min = -std::numeric_limits<double>::infinity();
  double max = std::numeric_limits<double>::infinity();
};

struct FeatureSpec {
  std::vector<FeatureDecl> features;

  const FeatureDecl* find(const std::string& name) const {
    for (const auto& f : features)
      if (f.name == name) return &f;
    return nullptr;
  }
  bool is_categorical(const std::string& name) const {
    const auto* d = find(name);
    return d && d->kind == FeatureKind::Categorical;
  }
};

enum class Split { All, Train, Val, Test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::All: return "all";
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

struct Dataset {
  std::vector<StaySequence> stays;
  Vocabulary vocab;
  Split split = Split::All;
  std::string provenance;

  std::size_t size() const { return stays.size(); }

  std::size_t event_count() const {
    std::size_t n = 0;
    for (const auto& s : stays) n += s.events.size();
    return n;
  }

  // Checks the event invariants against the vocabulary.
  void validate() const {
    for (const auto& s : stays) {
      if (s.events.empty()) throw ValidationError("stay '" + s.stay_id + "' has no events");
      double prev = 0.0;
      for (const auto& e : s.events) {
        if (!(e.t >= 0.0)) throw ValidationError("stay '" + s.stay_id + "' has negative time");
        if (e.t < prev) throw ValidationError("stay '" + s.stay_id + "' events not sorted by time");
        if (e.f >= vocab.size()) throw IndexError("stay '" + s.stay_id + "' feature index out of range");
        prev = e.t;
      }
    }
  }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.stays == b.stays && a.vocab == b.vocab;
  }
};

}  // namespace tgcl::data
