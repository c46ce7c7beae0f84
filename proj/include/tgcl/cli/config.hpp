#pragma once

// Run configuration: a flat key=value document with section prefixes
// ("pretrain.tau=0.03"). Keys without a prefix are read as pretrain keys.
// Every key must be known; files are applied first, then flag overrides.

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tgcl/errors.hpp"

namespace tgcl::cli {

inline const std::map<std::string, std::string>& config_defaults() {
  static const std::map<std::string, std::string> d = {
      {"synth.n_stays", "1000"},
      {"synth.n_features", "17"},
      {"synth.horizon_hours", "48"},
      {"synth.rate_lo", "0.04"},
      {"synth.rate_hi", "0.2"},
      {"synth.label_noise", "0.05"},
      {"synth.walk_sigma", "0.12"},
      {"synth.obs_noise", "0.4"},
      {"synth.mortality_threshold", "0.6"},
      {"data.window_hours", "48"},
      {"model.d", "64"},
      {"model.heads", "4"},
      {"model.layers", "2"},
      {"model.ff", "256"},
      {"model.proj", "32"},
      {"model.use_projection", "true"},
      {"pretrain.objective", "combined"},
      {"pretrain.tau", "0.07"},
      {"pretrain.gamma", "0.9"},
      {"pretrain.lambda_mask", "1.0"},
      {"pretrain.mask_rate", "0.1"},
      {"pretrain.exclude_self", "false"},
      {"pretrain.strict_eq2", "false"},
      {"pretrain.contrastive", "true"},
      {"pretrain.optimizer", "adam"},
      {"pretrain.beta1", "0.9"},
      {"pretrain.beta2", "0.999"},
      {"pretrain.eps", "1e-8"},
      {"pretrain.lr", "1e-3"},
      {"pretrain.weight_decay", "1e-5"},
      {"pretrain.warmup_epochs", "5"},
      {"pretrain.epochs", "20"},
      {"pretrain.batch_size", "64"},
      {"pretrain.max_len", "0"},
      {"pretrain.select_by", "val-loss"},
      {"augment.global_frac_lo", "0.6"},
      {"augment.global_frac_hi", "1.0"},
      {"augment.local_frac_lo", "0.1"},
      {"augment.local_frac_hi", "0.4"},
      {"augment.p_local", "0.5"},
      {"augment.regions_lo", "2"},
      {"augment.regions_hi", "4"},
      {"augment.noise_sigma", "0.1"},
      {"eval.protocol", "linear"},
      {"eval.task", "mortality"},
      {"linear.lr", "0.1"},
      {"linear.epochs", "300"},
      {"linear.weight_decay", "0"},
      {"semi.label_fraction", "1.0"},
      {"semi.head_lr", "0.01"},
      {"semi.backbone_lr", "5e-4"},
      {"semi.max_epochs", "20"},
      {"semi.patience", "5"},
      {"semi.batch_size", "16"},
      {"semi.max_len", "0"},
      {"impute.mask_rate", "0.1"},
  };
  return d;
}

class RunConfig {
 public:
  RunConfig() : values_(config_defaults()) {}

  static std::string canonical(const std::string& key) {
    std::string k = key.find('.') == std::string::npos ? "pretrain." + key : key;
    if (!config_defaults().count(k)) throw ConfigError("unknown config key '" + key + "'");
    return k;
  }

  void set(const std::string& key, const std::string& value) {
    const auto k = canonical(key);
    values_[k] = value;
    explicit_.insert(k);
  }

  // "key=value"
  void set_assignment(const std::string& text, const std::string& where = "") {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError(where + "expected key=value, got '" + text + "'");
    set(trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      set_assignment(line, path + ":" + std::to_string(n) + ": ");
    }
  }

  bool is_explicit(const std::string& key) const { return explicit_.count(canonical(key)) != 0; }
  const std::set<std::string>& explicit_keys() const { return explicit_; }

  const std::string& str(const std::string& key) const { return values_.at(canonical(key)); }

  double num(const std::string& key) const {
    const auto& s = str(key);
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw ConfigError("config key '" + key + "' needs a number, got '" + s + "'");
    return v;
  }

  std::size_t count(const std::string& key) const {
    const auto& s = str(key);
    unsigned long long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw ConfigError("config key '" + key + "' needs a non-negative integer, got '" + s + "'");
    return static_cast<std::size_t>(v);
  }

  bool flag(const std::string& key) const {
    const auto& s = str(key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("config key '" + key + "' needs true or false, got '" + s + "'");
  }

  // Resolved values of the given sections, typed where they parse as numbers
  // or booleans.
  nlohmann::ordered_json section_json(const std::vector<std::string>& sections) const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [k, v] : values_) {
      const auto dot = k.find('.');
      if (std::find(sections.begin(), sections.end(), k.substr(0, dot)) == sections.end()) continue;
      j[k] = typed(v);
    }
    return j;
  }

  // Lines of a config file reproducing these values.
  std::string dump() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static nlohmann::ordered_json typed(const std::string& s) {
    if (s == "true") return true;
    if (s == "false") return false;
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec == std::errc() && p == s.data() + s.size()) return v;
    return s;
  }

  std::map<std::string, std::string> values_;
  std::set<std::string> explicit_;
};

// Keys that only matter to some objectives; given explicitly for another
// objective they are reported and ignored.
inline std::vector<std::string> ignored_keys(const RunConfig& cfg, bool contrastive, bool estimator,
                                             bool reconstruction) {
  std::vector<std::string> out;
  for (const auto& k : cfg.explicit_keys()) {
    const bool aug = k.rfind("augment.", 0) == 0;
    if ((!contrastive && (aug || k == "pretrain.tau")) ||
        (!estimator && (k == "pretrain.gamma" || k == "pretrain.strict_eq2" || k == "pretrain.exclude_self")) ||
        (!reconstruction && (k == "pretrain.mask_rate" || k == "pretrain.lambda_mask")))
      out.push_back(k);
  }
  return out;
}

}  // namespace tgcl::cli
