#pragma once

// Line-delimited JSON event files.
//
//   {"stay_id": "s1", "events": [{"t": 2.0, "f": "hr", "v": 80}, ...],
//    "mortality": 0, "phenotypes": [0, 1, ...]}
//
// "mortality" and "phenotypes" (25 entries) are optional. For features
// declared categorical the value is the category and the event becomes the
// one-hot feature "name=category" with v = 1.

#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "tgcl/data/types.hpp"

namespace tgcl::data {

struct IngestOptions {
  const FeatureSpec* spec = nullptr;   // kinds and declared feature order
  const Vocabulary* vocab = nullptr;   // fixed vocabulary; names outside it are dropped
};

struct IngestResult {
  Dataset dataset;
  std::map<std::string, std::size_t> unknown_features;  // name -> event count
  std::size_t dropped_stays = 0;                        // stays left without events
};

namespace detail {

inline std::string category_label(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer() || v.is_number_unsigned()) return std::to_string(v.get<long long>());
  if (v.is_number_float()) {
    double d = v.get<double>();
    if (std::floor(d) == d && std::abs(d) < 1e15) return std::to_string(static_cast<long long>(d));
    return v.dump();
  }
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  throw ParseError("categorical value must be a string or number");
}

struct RawEvent {
  double t;
  double v;
  std::string name;
  FeatureKind kind;
};

struct RawStay {
  StaySequence stay;  // events filled later
  std::vector<RawEvent> raw;
};

}  // namespace detail

inline IngestResult ingest(std::istream& in, const IngestOptions& opts = {},
                           const std::string& provenance = "") {
  using nlohmann::json;
  std::vector<detail::RawStay> raw_stays;
  std::set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json doc;
    try {
      doc = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    if (!doc.is_object()) throw ParseError("expected a JSON object", line_no);
    if (!doc.contains("stay_id") || !doc["stay_id"].is_string())
      throw ParseError("missing string field 'stay_id'", line_no);
    if (!doc.contains("events") || !doc["events"].is_array())
      throw ParseError("missing array field 'events'", line_no);

    detail::RawStay rs;
    rs.stay.stay_id = doc["stay_id"].get<std::string>();
    if (!seen_ids.insert(rs.stay.stay_id).second)
      throw ValidationError("line " + std::to_string(line_no) + ": duplicate stay_id '" +
                            rs.stay.stay_id + "'");

    for (const auto& ev : doc["events"]) {
      if (!ev.is_object() || !ev.contains("t") || !ev.contains("f") || !ev.contains("v"))
        throw ParseError("event needs fields t, f, v", line_no);
      if (!ev["t"].is_number()) throw ParseError("event field 't' must be a number", line_no);
      if (!ev["f"].is_string()) throw ParseError("event field 'f' must be a feature name", line_no);
      double t = ev["t"].get<double>();
      if (!std::isfinite(t)) throw ParseError("non-finite time", line_no);
      if (t < 0.0)
        throw ValidationError("line " + std::to_string(line_no) + ": negative event time " +
                              std::to_string(t));
      std::string name = ev["f"].get<std::string>();
      detail::RawEvent re{t, 0.0, name, FeatureKind::Continuous};
      if (opts.spec && opts.spec->is_categorical(name)) {
        try {
          re.name = category_name(name, detail::category_label(ev["v"]));
        } catch (const ParseError& e) {
          throw ParseError(e.what(), line_no);
        }
        re.v = 1.0;
        re.kind = FeatureKind::Categorical;
      } else {
        if (!ev["v"].is_number()) throw ParseError("event field 'v' must be a number", line_no);
        re.v = ev["v"].get<double>();
        if (!std::isfinite(re.v)) throw ParseError("non-finite value", line_no);
      }
      rs.raw.push_back(std::move(re));
    }

    if (doc.contains("mortality") && !doc["mortality"].is_null()) {
      const auto& m = doc["mortality"];
      int y = m.is_boolean() ? int(m.get<bool>()) : m.is_number() ? m.get<int>() : -1;
      if (y != 0 && y != 1) throw ParseError("'mortality' must be 0 or 1", line_no);
      rs.stay.mortality = static_cast<std::uint8_t>(y);
    }
    if (doc.contains("phenotypes") && !doc["phenotypes"].is_null()) {
      const auto& p = doc["phenotypes"];
      if (!p.is_array() || p.size() != kPhenotypeCount)
        throw ParseError("'phenotypes' must be an array of 25 bits", line_no);
      PhenotypeBits bits{};
      for (std::size_t k = 0; k < kPhenotypeCount; ++k) {
        int b = p[k].is_boolean() ? int(p[k].get<bool>()) : p[k].is_number() ? p[k].get<int>() : -1;
        if (b != 0 && b != 1) throw ParseError("phenotype entries must be 0 or 1", line_no);
        bits[k] = static_cast<std::uint8_t>(b);
      }
      rs.stay.phenotypes = bits;
    }
    raw_stays.push_back(std::move(rs));
  }

  IngestResult result;
  Dataset& ds = result.dataset;
  ds.provenance = provenance;

  std::set<std::string> undeclared;  // kept but reported when a spec is given
  if (opts.vocab) {
    ds.vocab = *opts.vocab;
  } else {
    // Declared features first, in declaration order (categories sorted), then
    // undeclared names sorted.
    std::map<std::string, std::set<std::string>> categories;
    std::set<std::string> leftovers;
    for (const auto& rs : raw_stays)
      for (const auto& re : rs.raw) {
        if (re.kind == FeatureKind::Categorical) {
          auto base = re.name.substr(0, re.name.find('='));
          categories[base].insert(re.name);
        } else if (!opts.spec || !opts.spec->find(re.name)) {
          leftovers.insert(re.name);
        }
      }
    if (opts.spec) {
      for (const auto& decl : opts.spec->features) {
        if (decl.kind == FeatureKind::Continuous) {
          ds.vocab.add(decl.name, FeatureKind::Continuous);
        } else {
          for (const auto& cat : categories[decl.name]) ds.vocab.add(cat, FeatureKind::Categorical);
        }
      }
    }
    for (const auto& name : leftovers) ds.vocab.add(name, FeatureKind::Continuous);
    if (opts.spec) undeclared = std::move(leftovers);
  }

  for (auto& rs : raw_stays) {
    for (const auto& re : rs.raw) {
      auto idx = ds.vocab.find(re.name);
      if (!idx) {
        ++result.unknown_features[re.name];
        continue;
      }
      if (undeclared.count(re.name)) ++result.unknown_features[re.name];
      rs.stay.events.push_back({re.t, re.v, *idx});
    }
    if (rs.stay.events.empty()) {
      ++result.dropped_stays;
      continue;
    }
    rs.stay.sort_events();
    ds.stays.push_back(std::move(rs.stay));
  }
  return result;
}

inline IngestResult ingest_file(const std::string& path, const IngestOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return ingest(in, opts, path);
}

inline void write_jsonl(std::ostream& out, const Dataset& ds) {
  using nlohmann::ordered_json;
  for (const auto& s : ds.stays) {
    ordered_json doc;
    doc["stay_id"] = s.stay_id;
    ordered_json events = ordered_json::array();
    for (const auto& e : s.events) {
      ordered_json ev;
      ev["t"] = e.t;
      ev["f"] = ds.vocab.name(e.f);
      ev["v"] = e.v;
      events.push_back(std::move(ev));
    }
    doc["events"] = std::move(events);
    if (s.mortality) doc["mortality"] = int(*s.mortality);
    if (s.phenotypes) {
      ordered_json bits = ordered_json::array();
      for (auto b : *s.phenotypes) bits.push_back(int(b));
      doc["phenotypes"] = std::move(bits);
    }
    out << doc.dump() << '\n';
  }
}

inline void write_jsonl_file(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  write_jsonl(out, ds);
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace tgcl::data
