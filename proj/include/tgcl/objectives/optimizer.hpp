#pragma once

// Parameter updates driven by a gradient estimate m.
//
//   momentum: v <- (1 - beta1) v + beta1 m;  w <- w - lr v
//   adam:     w <- w - lr wd w, then the bias-corrected Adam step on m
//
// Decoupled weight decay is applied in both modes (before the step).

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "tgcl/errors.hpp"
#include "tgcl/numerics/params.hpp"

namespace tgcl::objectives {

enum class OptimizerKind { Momentum, Adam };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "momentum") return OptimizerKind::Momentum;
  if (s == "adam") return OptimizerKind::Adam;
  throw ConfigError("optimizer must be 'momentum' or 'adam', got '" + s + "'");
}

inline const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "momentum"; }

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(beta1 >= 0.0 && beta1 <= 1.0)) throw ConfigError("beta1 must be in [0, 1]");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must be in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  }
};

template <typename T>
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(const numerics::ParamStore<T>& params, OptimizerConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    for (const auto& v : params.values()) {
      m_.emplace_back(v.rows(), v.cols());
      if (cfg_.kind == OptimizerKind::Adam) v_.emplace_back(v.rows(), v.cols());
    }
  }

  const OptimizerConfig& config() const { return cfg_; }
  std::size_t steps() const { return t_; }
  const numerics::NdArray<T>& first_moment(std::size_t i) const { return m_.at(i); }

  // Updates the listed parameters (all when `only` is empty) with learning
  // rate `lr`.
  void step(numerics::ParamStore<T>& params, const numerics::GradStore<T>& grads, double lr,
            const std::vector<std::size_t>& only = {}) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw DimensionError("optimizer: parameter layout changed since construction");
    ++t_;
    auto update = [&](std::size_t i) {
      auto& w = params.value(i);
      const auto& g = grads[i];
      if (!w.same_shape(g)) throw DimensionError("optimizer: gradient shape mismatch for " + params.name(i));
      const double decay = lr * cfg_.weight_decay;
      auto& m = m_[i];
      if (cfg_.kind == OptimizerKind::Momentum) {
        for (std::size_t k = 0; k < w.size(); ++k) {
          if (decay != 0.0) w[k] -= static_cast<T>(decay * w[k]);
          m[k] = static_cast<T>((1.0 - cfg_.beta1) * m[k] + cfg_.beta1 * g[k]);
          w[k] -= static_cast<T>(lr * m[k]);
        }
        return;
      }
      auto& v = v_[i];
      const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
      for (std::size_t k = 0; k < w.size(); ++k) {
        if (decay != 0.0) w[k] -= static_cast<T>(decay * w[k]);
        const double gk = g[k];
        const double mk = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
        const double vk = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
        m[k] = static_cast<T>(mk);
        v[k] = static_cast<T>(vk);
        w[k] -= static_cast<T>(lr * (mk / bc1) / (std::sqrt(vk / bc2) + cfg_.eps));
      }
    };
    if (only.empty())
      for (std::size_t i = 0; i < params.size(); ++i) update(i);
    else
      for (auto i : only) update(i);
  }

 private:
  OptimizerConfig cfg_;
  std::vector<numerics::NdArray<T>> m_, v_;
  std::size_t t_ = 0;
};

// Linear warmup to base_lr over `warmup` steps, then cosine decay to 0 at
// `total` steps.
inline double scheduled_lr(double base_lr, std::size_t step, std::size_t warmup, std::size_t total) {
  if (total == 0) return base_lr;
  if (step < warmup) return base_lr * double(step + 1) / double(warmup);
  if (total <= warmup) return base_lr;
  const double progress = std::min(1.0, double(step - warmup) / double(total - warmup));
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace tgcl::objectives
