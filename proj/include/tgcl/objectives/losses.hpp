#pragma once

// Contrastive and reconstruction losses over batch embeddings.
//
// Za, Zb are B x p matrices of unit rows (row i of Za and row i of Zb are the
// two views of example i). With S = Za Zb^T / tau:
//
//   info_nce   = mean_i[-S_ii + ln sum_j e^{S_ij}] + mean_i[-S_ii + ln sum_j e^{S_ji}]
//   g_A,i      = sum_j e^{S_ij},   g_B,i = sum_j e^{S_ji}
//   u_i       <- (1-gamma) u_i + gamma (g_A,i + g_B,i) / 2B
//   gcl        = mean_i[-S_ii + (g_A,i + g_B,i) / (2B u_i)]      (u held fixed)
//
// The gradient of `gcl` is the estimator-based stochastic gradient: each
// example's contrastive term is differentiated and divided by its running
// estimate instead of the batch value.

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "tgcl/errors.hpp"
#include "tgcl/numerics/graph.hpp"

namespace tgcl::objectives {

using numerics::Graph;
using numerics::NdArray;
using numerics::Var;

struct GclConfig {
  double tau = 0.07;
  double gamma = 0.9;
  double lambda_mask = 1.0;
  bool exclude_self = false;  // drop j = i from g
  bool strict_eq2 = false;    // first touch also scales by gamma

  void validate() const {
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in (0, 1]");
    if (!(lambda_mask >= 0.0)) throw ConfigError("lambda_mask must be >= 0");
  }
};

namespace detail {

inline void check_pair(const NdArray<double>& za, const NdArray<double>& zb) {
  if (!za.same_shape(zb))
    throw DimensionError("contrastive loss: view embeddings differ in shape, " + za.shape_string() + " vs " +
                         zb.shape_string());
}

inline double dot_row(const NdArray<double>& a, std::size_t i, const NdArray<double>& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
  return s;
}

inline numerics::Mask diagonal_mask(std::size_t n) {
  auto m = std::make_shared<std::vector<std::uint8_t>>(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) (*m)[i * n + i] = 1;
  return m;
}

template <typename T>
Var diag_sum(Graph<T>& g, Var square) {
  return g.reduce_sum(g.multiply(square, g.constant(NdArray<T>::identity(g.rows(square)))));
}

}  // namespace detail

// g(x_i, A, B) = sum_j exp(za_i . zb_j / tau), optionally without j = i.
inline double contrastive_term_g(std::size_t i, const NdArray<double>& za, const NdArray<double>& zb, double tau,
                                 bool exclude_self = false) {
  if (i >= za.rows()) throw IndexError("contrastive_term_g: anchor row out of range");
  if (za.cols() != zb.cols()) throw DimensionError("contrastive_term_g: embedding widths differ");
  double s = 0.0;
  for (std::size_t j = 0; j < zb.rows(); ++j) {
    if (exclude_self && j == i) continue;
    s += std::exp(detail::dot_row(za, i, zb, j) / tau);
  }
  return s;
}

// Per-example running estimate of the contrastive term, indexed by dataset
// position. Zero means "never visited".
struct EstimatorState {
  std::vector<double> u;
  std::vector<std::size_t> last_batch;  // ids of the most recent batch update

  explicit EstimatorState(std::size_t n = 0) : u(n, 0.0) {}
  std::size_t size() const { return u.size(); }
  bool visited(std::size_t i) const { return u.at(i) > 0.0; }
};

inline double update_u(EstimatorState& state, std::size_t i, double g_a, double g_b, double gamma, std::size_t batch,
                       bool strict_eq2 = false) {
  if (i >= state.size()) throw IndexError("update_u: example index out of range");
  if (!(g_a > 0.0 && g_b > 0.0)) throw DomainError("update_u: contrastive terms must be positive");
  if (batch == 0) throw ContractError("update_u: empty batch");
  const double avg = (g_a + g_b) / (2.0 * double(batch));
  double& u = state.u[i];
  u = (u == 0.0 && !strict_eq2) ? avg : (1.0 - gamma) * u + gamma * avg;
  return u;
}

// Numeric g_A and g_B for every row of a batch.
struct ContrastiveTerms {
  std::vector<double> g_a, g_b;
};

inline ContrastiveTerms contrastive_terms(const NdArray<double>& za, const NdArray<double>& zb, double tau,
                                          bool exclude_self = false) {
  detail::check_pair(za, zb);
  ContrastiveTerms t;
  for (std::size_t i = 0; i < za.rows(); ++i) {
    t.g_a.push_back(contrastive_term_g(i, za, zb, tau, exclude_self));
    t.g_b.push_back(contrastive_term_g(i, zb, za, tau, exclude_self));
  }
  return t;
}

// Applies the estimator update for one batch. `ids` maps batch rows to
// dataset positions; must run before gcl_batch_loss for the same batch.
inline ContrastiveTerms update_batch_estimates(EstimatorState& state, const std::vector<std::size_t>& ids,
                                               const NdArray<double>& za, const NdArray<double>& zb,
                                               const GclConfig& cfg) {
  if (ids.size() != za.rows()) throw DimensionError("update_batch_estimates: ids and batch rows differ");
  auto t = contrastive_terms(za, zb, cfg.tau, cfg.exclude_self);
  for (std::size_t r = 0; r < ids.size(); ++r)
    update_u(state, ids[r], t.g_a[r], t.g_b[r], cfg.gamma, ids.size(), cfg.strict_eq2);
  state.last_batch = ids;
  return t;
}

// Symmetric InfoNCE; denominators include j = i.
template <typename T>
Var info_nce(Graph<T>& g, Var za, Var zb, T tau) {
  if (!(tau > T(0))) throw ConfigError("info_nce: tau must be positive");
  if (g.rows(za) != g.rows(zb) || g.cols(za) != g.cols(zb))
    throw DimensionError("info_nce: view embeddings differ in shape");
  const std::size_t b = g.rows(za);
  const T inv_tau = T(1) / tau;
  // Similarities are bounded by 1/tau, so shifting by it keeps exp() <= 1.
  Var s_ab = g.scale(g.matmul(za, zb, true), inv_tau);
  Var s_ba = g.scale(g.matmul(zb, za, true), inv_tau);
  Var ones = g.constant(NdArray<T>(b, 1, T(1)));
  Var shift = g.constant(NdArray<T>(1, 1, inv_tau));
  auto lse = [&](Var s) { return g.add(g.ln(g.matmul(g.exp(g.sub(s, shift)), ones)), shift); };
  Var pos = g.scale(detail::diag_sum(g, s_ab), T(2) / T(b));
  Var denom = g.scale(g.add(g.reduce_sum(lse(s_ab)), g.reduce_sum(lse(s_ba))), T(1) / T(b));
  return g.sub(denom, pos);
}

// Same forward value; SimCLR differentiates straight through the batch
// denominators.
template <typename T>
Var simclr_batch_loss(Graph<T>& g, Var za, Var zb, T tau) {
  return info_nce(g, za, zb, tau);
}

// Surrogate whose gradient is the estimator-based stochastic gradient.
inline Var gcl_batch_loss(Graph<double>& g, Var za, Var zb, const std::vector<std::size_t>& ids,
                          const EstimatorState& state, const GclConfig& cfg) {
  const std::size_t b = g.rows(za);
  if (g.rows(zb) != b || g.cols(za) != g.cols(zb)) throw DimensionError("gcl_batch_loss: view shapes differ");
  if (ids.size() != b) throw DimensionError("gcl_batch_loss: ids and batch rows differ");
  if (state.last_batch != ids)
    throw StateError("gcl_batch_loss: estimates for this batch were not updated first");
  NdArray<double> weights(1, b);
  for (std::size_t r = 0; r < b; ++r) {
    const double u = state.u.at(ids[r]);
    if (!(u > 0.0))
      throw StateError("gcl_batch_loss: estimate for example " + std::to_string(ids[r]) +
                       " is zero; update_batch_estimates must run first");
    weights[r] = 1.0 / (2.0 * double(b) * u);
  }
  const double inv_tau = 1.0 / cfg.tau;
  Var s_ab = g.scale(g.matmul(za, zb, true), inv_tau);
  Var s_ba = g.scale(g.matmul(zb, za, true), inv_tau);
  Var e_ab = g.exp(s_ab);
  Var e_ba = g.exp(s_ba);
  if (cfg.exclude_self) {
    auto diag = detail::diagonal_mask(b);
    e_ab = g.masked_fill(e_ab, diag, 0.0);
    e_ba = g.masked_fill(e_ba, diag, 0.0);
  }
  Var ones = g.constant(NdArray<double>(b, 1, 1.0));
  Var terms = g.add(g.matmul(e_ab, ones), g.matmul(e_ba, ones));  // g_A + g_B, B x 1
  Var weighted = g.matmul(g.constant(std::move(weights)), terms);
  Var pos = detail::diag_sum(g, s_ab);
  return g.scale(g.sub(weighted, pos), 1.0 / double(b));
}

// Mean squared error over masked predictions (|M| x 1 against targets).
template <typename T>
Var masked_loss(Graph<T>& g, Var predictions, const std::vector<T>& targets) {
  if (targets.empty()) throw ContractError("masked_loss: mask set is empty");
  if (g.rows(predictions) != targets.size() || g.cols(predictions) != 1)
    throw DimensionError("masked_loss: predictions must be |M| x 1");
  NdArray<T> t(targets.size(), 1, std::vector<T>(targets));
  return g.reduce_mean(g.square(g.sub(predictions, g.constant(std::move(t)))));
}

// Sum of squared errors (used when the mean is taken over a whole batch).
template <typename T>
Var masked_sse(Graph<T>& g, Var predictions, const std::vector<T>& targets) {
  if (targets.empty()) throw ContractError("masked_sse: mask set is empty");
  NdArray<T> t(targets.size(), 1, std::vector<T>(targets));
  return g.reduce_sum(g.square(g.sub(predictions, g.constant(std::move(t)))));
}

// Random mask of round(rate T) positions (at least one), sorted.
inline std::vector<std::size_t> sample_mask(std::size_t n, double rate, std::mt19937_64& rng) {
  if (n == 0) throw ContractError("sample_mask: empty sequence");
  if (!(rate > 0.0 && rate < 1.0)) throw ConfigError("mask_rate must be in (0, 1)");
  auto count = static_cast<std::size_t>(std::llround(rate * double(n)));
  count = std::clamp<std::size_t>(count, 1, n);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t j = std::uniform_int_distribution<std::size_t>(i, n - 1)(rng);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// The final ceil(0.1 T) positions.
inline std::vector<std::size_t> forecast_mask(std::size_t n) {
  if (n == 0) throw ContractError("forecast_mask: empty sequence");
  const auto count = static_cast<std::size_t>(std::ceil(0.1 * double(n) - 1e-12));
  std::vector<std::size_t> out;
  for (std::size_t i = n - std::max<std::size_t>(count, 1); i < n; ++i) out.push_back(i);
  return out;
}

}  // namespace tgcl::objectives
