#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "tgcl/numerics/graph.hpp"

namespace tgcl::numerics {

// Builds a scalar from a leaf bound to the evaluation point.
using PointFn = std::function<Var(Graph<double>&, Var)>;
// Builds a scalar from parameters in a store.
using StoreFn = std::function<Var(Graph<double>&, const ParamStore<double>&)>;

namespace detail {
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

inline double scalar_output(Graph<double>& g, Var out) {
  if (g.rows(out) != 1 || g.cols(out) != 1)
    throw ContractError("grad_check: function output must be scalar, got [" +
                        std::to_string(g.rows(out)) + "x" + std::to_string(g.cols(out)) + "]");
  return g.forward(out).item();
}
}  // namespace detail

// max_i |analytic_i - (f(x+h e_i) - f(x-h e_i)) / 2h| / max(1, |analytic_i|)
inline double grad_check(const PointFn& fn, const NdArray<double>& point, double step = 1e-6) {
  if (!point.all_finite()) throw ContractError("grad_check: point must be finite");
  Graph<double> g;
  Var x = g.leaf(point);
  Var out = fn(g, x);
  detail::scalar_output(g, out);
  g.backward(out);
  const NdArray<double> analytic = g.grad(x);

  auto eval_at = [&](const NdArray<double>& p) {
    Graph<double> h;
    Var hx = h.leaf(p);
    return detail::scalar_output(h, fn(h, hx));
  };

  double worst = 0.0;
  NdArray<double> probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double fp = eval_at(probe);
    probe[i] = orig - step;
    const double fm = eval_at(probe);
    probe[i] = orig;
    worst = std::max(worst, detail::relative_error(analytic[i], (fp - fm) / (2.0 * step)));
  }
  return worst;
}

// Same check over every scalar of every parameter in a store. `stride` > 1
// probes only every stride-th coordinate of each tensor.
inline double grad_check_params(const StoreFn& fn, ParamStore<double>& store, double step = 1e-6,
                                std::size_t stride = 1) {
  GradStore<double> analytic(store);
  {
    Graph<double> g;
    Var out = fn(g, store);
    detail::scalar_output(g, out);
    g.backward(out);
    g.accumulate_param_grads(analytic);
  }
  auto eval = [&] {
    Graph<double> h;
    return detail::scalar_output(h, fn(h, store));
  };

  double worst = 0.0;
  for (std::size_t p = 0; p < store.size(); ++p) {
    auto& value = store.value(p);
    for (std::size_t i = 0; i < value.size(); i += std::max<std::size_t>(stride, 1)) {
      const double orig = value[i];
      value[i] = orig + step;
      const double fp = eval();
      value[i] = orig - step;
      const double fm = eval();
      value[i] = orig;
      worst = std::max(worst, detail::relative_error(analytic[p][i], (fp - fm) / (2.0 * step)));
    }
  }
  return worst;
}

}  // namespace tgcl::numerics
