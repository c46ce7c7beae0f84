#pragma once

// Comparison tables over MetricsReport files: one section per task, one row
// per (protocol, objective, label fraction), mean and sample std across the
// reports that share the row.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "tgcl/eval/protocols.hpp"

namespace tgcl::eval {

struct TableRow {
  std::string protocol, objective, fraction;
  std::size_t reports = 0;
  std::map<std::string, std::vector<double>> values;  // metric -> one value per report

  static std::pair<double, double> mean_std(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= double(v.size());
    if (v.size() < 2) return {m, 0.0};
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return {m, std::sqrt(s / double(v.size() - 1))};
  }
};

struct ReportTable {
  std::map<std::string, std::vector<TableRow>> sections;  // task -> rows
};

inline std::string config_label(const nlohmann::ordered_json& cfg, const char* key) {
  if (!cfg.contains(key)) return "-";
  const auto& v = cfg[key];
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v.get<double>());
    return buf;
  }
  return v.dump();
}

inline ReportTable build_table(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw ConfigError("report: at least one report is needed");
  ReportTable t;
  std::map<std::tuple<std::string, std::string, std::string, std::string>, std::size_t> index;
  for (const auto& r : reports) {
    const std::string frac = r.protocol == "semi" ? config_label(r.config, "label_fraction") : "-";
    const auto key = std::make_tuple(r.task, r.protocol, config_label(r.config, "objective"), frac);
    auto& rows = t.sections[r.task];
    auto it = index.find(key);
    if (it == index.end()) {
      rows.push_back({r.protocol, std::get<2>(key), frac});
      it = index.emplace(key, rows.size() - 1).first;
    }
    auto& row = rows[it->second];
    ++row.reports;
    for (const auto& [name, v] : r.metrics.items())
      if (v.is_number()) row.values[name].push_back(v.get<double>());
  }
  return t;
}

inline nlohmann::ordered_json table_json(const ReportTable& t) {
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (const auto& [task, rows] : t.sections) {
    auto& arr = out[task] = nlohmann::ordered_json::array();
    for (const auto& row : rows) {
      nlohmann::ordered_json j;
      j["protocol"] = row.protocol;
      j["objective"] = row.objective;
      j["label_fraction"] = row.fraction;
      j["reports"] = row.reports;
      for (const auto& [name, vals] : row.values) {
        auto [m, s] = TableRow::mean_std(vals);
        j["metrics"][name] = {{"mean", m}, {"std", s}, {"n", vals.size()}};
      }
      arr.push_back(std::move(j));
    }
  }
  return out;
}

inline std::string render_table(const ReportTable& t) {
  std::ostringstream os;
  for (const auto& [task, rows] : t.sections) {
    os << "== " << task << " ==\n";
    std::vector<std::string> metrics;
    for (const auto& row : rows)
      for (const auto& [name, vals] : row.values)
        if (std::find(metrics.begin(), metrics.end(), name) == metrics.end()) metrics.push_back(name);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-9s %-10s %-9s %3s", "protocol", "objective", "fraction", "n");
    os << buf;
    for (const auto& m : metrics) {
      std::snprintf(buf, sizeof buf, "  %21s", m.c_str());
      os << buf;
    }
    os << '\n';
    for (const auto& row : rows) {
      std::snprintf(buf, sizeof buf, "%-9s %-10s %-9s %3zu", row.protocol.c_str(), row.objective.c_str(),
                    row.fraction.c_str(), row.reports);
      os << buf;
      for (const auto& m : metrics) {
        auto it = row.values.find(m);
        if (it == row.values.end()) {
          std::snprintf(buf, sizeof buf, "  %21s", "-");
        } else {
          auto [mean, sd] = TableRow::mean_std(it->second);
          std::snprintf(buf, sizeof buf, "  %10.4f +- %7.4f", mean, sd);
        }
        os << buf;
      }
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace tgcl::eval
