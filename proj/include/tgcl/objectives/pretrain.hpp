#pragma once

// Pretraining loop.
//
// Each step builds one graph per batch item (both views, float), collects the
// sequence embeddings into B x p matrices, and evaluates the contrastive loss
// on those in a separate double-precision graph. The embedding gradients it
// returns are pushed back through every item graph together with the item's
// share of the masked loss, so the parameter gradient is exactly that of
//
//   loss = contrastive(Za, Zb) + lambda * (sum_i SSE_i) / |M_total|
//
// without ever building a graph over the whole batch.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include "tgcl/augment/augment.hpp"
#include "tgcl/data/types.hpp"
#include "tgcl/errors.hpp"
#include "tgcl/model/model.hpp"
#include "tgcl/objectives/losses.hpp"
#include "tgcl/objectives/optimizer.hpp"

namespace tgcl::objectives {

enum class Objective { Gcl, Simclr, Masked, Combined, Forecast };

inline Objective parse_objective(const std::string& s) {
  if (s == "gcl") return Objective::Gcl;
  if (s == "simclr") return Objective::Simclr;
  if (s == "masked") return Objective::Masked;
  if (s == "combined") return Objective::Combined;
  if (s == "forecast") return Objective::Forecast;
  throw ConfigError("objective must be one of gcl, simclr, masked, combined, forecast; got '" + s + "'");
}

inline const char* objective_name(Objective o) {
  switch (o) {
    case Objective::Gcl: return "gcl";
    case Objective::Simclr: return "simclr";
    case Objective::Masked: return "masked";
    case Objective::Combined: return "combined";
    case Objective::Forecast: return "forecast";
  }
  return "?";
}

inline bool uses_contrastive(Objective o) {
  return o == Objective::Gcl || o == Objective::Simclr || o == Objective::Combined;
}
inline bool uses_estimator(Objective o) { return o == Objective::Gcl || o == Objective::Combined; }
inline bool uses_reconstruction(Objective o) {
  return o == Objective::Masked || o == Objective::Combined || o == Objective::Forecast;
}

struct PretrainConfig {
  Objective objective = Objective::Combined;
  GclConfig gcl;
  augment::AugmentConfig augment;
  OptimizerConfig optim;
  double mask_rate = 0.10;
  std::size_t epochs = 20;
  std::size_t warmup_epochs = 5;
  std::size_t batch_size = 64;
  std::size_t max_len = 0;  // crop longer stays to a random window of this many events (0: off)
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool contrastive_enabled = true;  // combined only: false leaves the masked term alone

  void validate() const {
    gcl.validate();
    augment.validate();
    optim.validate();
    if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw ConfigError("mask_rate must be in (0, 1)");
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (max_len == 1) throw ConfigError("max_len must be 0 (off) or >= 2");
    if (threads == 0) throw ConfigError("threads must be >= 1");
  }
};

struct UStats {
  double mean = 0.0, min = 0.0, max = 0.0;
  std::size_t visited = 0;
};

inline UStats u_stats(const EstimatorState& s) {
  UStats r;
  r.min = std::numeric_limits<double>::infinity();
  r.max = -r.min;
  for (double u : s.u) {
    if (!(u > 0.0)) continue;
    ++r.visited;
    r.mean += u;
    r.min = std::min(r.min, u);
    r.max = std::max(r.max, u);
  }
  if (r.visited == 0) return UStats{};
  r.mean /= double(r.visited);
  return r;
}

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_contrastive = 0.0;
  double train_masked = 0.0;
  double val_loss = 0.0;
  double criterion = 0.0;  // lower is better
  double lr = 0.0;         // at the last step of the epoch
  std::optional<UStats> u;
  bool improved = false;
};

template <typename T>
struct PretrainResult {
  model::Model<T> best;
  std::size_t best_epoch = 0;
  double best_criterion = std::numeric_limits<double>::infinity();
  std::vector<EpochLog> log;
  EstimatorState state;
  std::size_t skipped_stays = 0;  // too short to form two views
};

namespace detail {

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag),  static_cast<std::uint32_t>(a),
                    static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

// Random contiguous window of at most max_len events.
inline data::StaySequence crop(const data::StaySequence& s, std::size_t max_len, std::mt19937_64& rng) {
  if (max_len == 0 || s.events.size() <= max_len) return s;
  data::StaySequence out;
  out.stay_id = s.stay_id;
  const std::size_t start = std::uniform_int_distribution<std::size_t>(0, s.events.size() - max_len)(rng);
  out.events.assign(s.events.begin() + std::ptrdiff_t(start), s.events.begin() + std::ptrdiff_t(start + max_len));
  return out;
}

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// One batch item: its graph(s), embeddings and masked-value terms.
template <typename T>
struct Item {
  numerics::Graph<T> g;
  Var za{}, zb{};
  Var sse{};
  bool has_z = false, has_sse = false;
  std::size_t masked = 0;
  double sse_value = 0.0;
};

template <typename T>
Item<T> build_item(const model::Model<T>& m, const data::StaySequence& stay, const PretrainConfig& cfg,
                   bool contrastive, bool reconstruction, std::mt19937_64& rng) {
  Item<T> it;
  auto& g = it.g;
  const auto s = crop(stay, cfg.max_len, rng);
  model::SequenceInput base;
  std::vector<double> clean;
  if (contrastive) {
    auto [a, b] = augment::sample_pair(s, cfg.augment, rng);
    base = a.apply(s);
    for (auto k : a.indices) clean.push_back(s.events[k].v);
    model::SequenceInput in_b = b.apply(s);
    std::vector<std::size_t> mask;
    if (reconstruction) mask = sample_mask(base.size(), cfg.mask_rate, rng);
    Var out_a = m.encode(g, m.embed(g, base, mask));
    Var out_b = m.encode(g, m.embed(g, in_b));
    it.za = m.sequence_embedding(g, out_a);
    it.zb = m.sequence_embedding(g, out_b);
    it.has_z = true;
    if (reconstruction) {
      std::vector<T> targets;
      for (auto j : mask) targets.push_back(static_cast<T>(clean[j]));
      it.sse = masked_sse(g, m.predict_values(g, out_a, mask), targets);
      it.has_sse = true;
      it.masked = mask.size();
    }
  } else {
    base = model::SequenceInput::from_stay(s);
    const auto mask = cfg.objective == Objective::Forecast ? forecast_mask(base.size())
                                                           : sample_mask(base.size(), cfg.mask_rate, rng);
    std::vector<T> targets;
    for (auto j : mask) targets.push_back(static_cast<T>(base.v[j]));
    Var out = m.encode(g, m.embed(g, base, mask));
    it.sse = masked_sse(g, m.predict_values(g, out, mask), targets);
    it.has_sse = true;
    it.masked = mask.size();
  }
  return it;
}

inline NdArray<double> stack_rows(const std::vector<std::vector<double>>& rows) {
  NdArray<double> out(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) = rows[r][c];
  return out;
}

}  // namespace detail

// Loss pieces of one batch, as seen by the optimizer.
struct BatchLoss {
  double total = 0.0, contrastive = 0.0, masked = 0.0;
};

template <typename T>
class Pretrainer {
 public:
  Pretrainer(model::Model<T>& model, PretrainConfig cfg, std::size_t n_train)
      : model_(model), cfg_(std::move(cfg)), state_(n_train) {
    cfg_.validate();
    opt_ = Optimizer<T>(model_.params(), cfg_.optim);
  }

  const PretrainConfig& config() const { return cfg_; }
  EstimatorState& state() { return state_; }
  const Optimizer<T>& optimizer() const { return opt_; }

  bool contrastive() const {
    return uses_contrastive(cfg_.objective) && (cfg_.objective != Objective::Combined || cfg_.contrastive_enabled);
  }
  bool reconstruction() const { return uses_reconstruction(cfg_.objective); }

  // One optimizer step on the stays at `ids` (dataset positions, used to
  // index the estimator). Returns the batch loss before the step.
  BatchLoss step(const data::Dataset& train, const std::vector<std::size_t>& ids, double lr, std::uint64_t stream_tag) {
    numerics::GradStore<T> grads(model_.params());
    auto loss = evaluate(train, ids, stream_tag, &grads, /*update_estimates=*/true);
    opt_.step(model_.params(), grads, lr);
    return loss;
  }

  // Gradient of the batch loss into `grads` (estimates are updated first,
  // exactly as in step()).
  BatchLoss gradient(const data::Dataset& train, const std::vector<std::size_t>& ids, std::uint64_t stream_tag,
                     numerics::GradStore<T>& grads) {
    return evaluate(train, ids, stream_tag, &grads, true);
  }

  // Loss of a batch without touching parameters or estimates; the
  // contrastive part is plain InfoNCE (val stays have no estimates).
  BatchLoss loss(const data::Dataset& ds, const std::vector<std::size_t>& ids, std::uint64_t stream_tag) {
    return evaluate(ds, ids, stream_tag, nullptr, false);
  }

 private:
  BatchLoss evaluate(const data::Dataset& ds, const std::vector<std::size_t>& ids, std::uint64_t stream_tag,
                     numerics::GradStore<T>* grads, bool update_estimates) {
    const bool con = contrastive();
    const bool rec = reconstruction();
    const std::size_t b = ids.size();
    std::vector<detail::Item<T>> items(b);
    std::vector<std::vector<double>> za(b), zb(b);
    detail::parallel_for(b, cfg_.threads, [&](std::size_t r) {
      auto rng = detail::stream(cfg_.seed, stream_tag, ids[r]);
      items[r] = detail::build_item(model_, ds.stays.at(ids[r]), cfg_, con, rec, rng);
      auto& it = items[r];
      if (it.has_z) {
        const auto& a = it.g.forward(it.za);
        const auto& bb = it.g.forward(it.zb);
        za[r].assign(a.data(), a.data() + a.size());
        zb[r].assign(bb.data(), bb.data() + bb.size());
      }
      if (it.has_sse) it.sse_value = double(it.g.forward(it.sse)[0]);
    });

    BatchLoss out;
    NdArray<double> dza, dzb;
    if (con) {
      const auto Za = detail::stack_rows(za);
      const auto Zb = detail::stack_rows(zb);
      numerics::Graph<double> h;
      Var a = h.leaf(Za);
      Var bv = h.leaf(Zb);
      Var l;
      if (uses_estimator(cfg_.objective) && update_estimates) {
        update_batch_estimates(state_, ids, Za, Zb, cfg_.gcl);
        l = gcl_batch_loss(h, a, bv, ids, state_, cfg_.gcl);
        // Report the InfoNCE value; the surrogate's value is not a loss.
        Var nce = info_nce(h, a, bv, cfg_.gcl.tau);
        out.contrastive = h.forward(nce)[0];
        h.forward(l);
      } else {
        l = info_nce(h, a, bv, cfg_.gcl.tau);
        out.contrastive = h.forward(l)[0];
      }
      if (grads) {
        h.backward(l);
        dza = h.grad(a);
        dzb = h.grad(bv);
      }
    }
    std::size_t masked_total = 0;
    double sse_total = 0.0;
    if (rec) {
      for (const auto& it : items) {
        masked_total += it.masked;
        sse_total += it.sse_value;
      }
      out.masked = sse_total / double(masked_total);
    }
    const double lambda = cfg_.objective == Objective::Combined ? cfg_.gcl.lambda_mask : 1.0;
    out.total = (con ? out.contrastive : 0.0) + (rec ? lambda * out.masked : 0.0);
    if (!grads) return out;

    const double sse_weight = rec ? lambda / double(masked_total) : 0.0;
    auto backprop = [&](std::size_t r) {
      auto& it = items[r];
      auto& g = it.g;
      std::vector<Var> terms;
      if (con) {
        NdArray<T> ga(1, dza.cols()), gb(1, dzb.cols());
        for (std::size_t c = 0; c < ga.cols(); ++c) {
          ga[c] = static_cast<T>(dza(r, c));
          gb[c] = static_cast<T>(dzb(r, c));
        }
        terms.push_back(g.reduce_sum(g.multiply(it.za, g.constant(std::move(ga)))));
        terms.push_back(g.reduce_sum(g.multiply(it.zb, g.constant(std::move(gb)))));
      }
      if (rec && sse_weight > 0.0) terms.push_back(g.scale(it.sse, static_cast<T>(sse_weight)));
      if (terms.empty()) return false;
      Var root = terms[0];
      for (std::size_t k = 1; k < terms.size(); ++k) root = g.add(root, terms[k]);
      g.forward(root);
      g.backward(root);
      return true;
    };
    if (cfg_.threads <= 1) {
      for (std::size_t r = 0; r < b; ++r)
        if (backprop(r)) items[r].g.accumulate_param_grads(*grads);
    } else {
      // Per-item stores reduced in batch order: same sums as the serial path.
      std::vector<numerics::GradStore<T>> local(b);
      std::vector<std::uint8_t> used(b, 0);
      detail::parallel_for(b, cfg_.threads, [&](std::size_t r) {
        if (!backprop(r)) return;
        local[r] = numerics::GradStore<T>(model_.params());
        items[r].g.accumulate_param_grads(local[r]);
        used[r] = 1;
      });
      for (std::size_t r = 0; r < b; ++r)
        if (used[r])
          for (std::size_t i = 0; i < grads->size(); ++i) {
            auto& dst = (*grads)[i];
            const auto& src = local[r][i];
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
          }
    }
    return out;
  }

  model::Model<T>& model_;
  PretrainConfig cfg_;
  EstimatorState state_;
  Optimizer<T> opt_;
};

// Stays usable by the objective (two views need at least two events).
inline std::vector<std::size_t> usable_stays(const data::Dataset& ds, bool contrastive) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (!contrastive || ds.stays[i].events.size() >= 2) out.push_back(i);
  return out;
}

// Called after each epoch; return value overrides the validation loss as the
// selection criterion when set (lower is better).
template <typename T>
using EpochHook = std::function<void(const EpochLog&, const model::Model<T>&)>;
template <typename T>
using CriterionFn = std::function<double(const model::Model<T>&)>;

template <typename T>
PretrainResult<T> pretrain(model::Model<T>& model, const data::Dataset& train, const data::Dataset& val,
                           const PretrainConfig& cfg, const std::type_identity_t<EpochHook<T>>& on_epoch = {},
                           const std::type_identity_t<CriterionFn<T>>& criterion = {}) {
  Pretrainer<T> trainer(model, cfg, train.size());
  const bool con = trainer.contrastive();
  auto train_ids = usable_stays(train, con);
  const auto val_ids = usable_stays(val, con);
  if (train_ids.empty()) throw ValidationError("pretrain: no usable training stays");

  PretrainResult<T> result;
  result.skipped_stays = train.size() - train_ids.size();
  const std::size_t bs = cfg.batch_size;
  const std::size_t steps_per_epoch = (train_ids.size() + bs - 1) / bs;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  const std::size_t warmup_steps = steps_per_epoch * cfg.warmup_epochs;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = train_ids;
    auto shuffle_rng = detail::stream(cfg.seed, 1, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochLog log;
    log.epoch = epoch + 1;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += bs) {
      std::vector<std::size_t> ids(order.begin() + std::ptrdiff_t(begin),
                                   order.begin() + std::ptrdiff_t(std::min(begin + bs, order.size())));
      const double lr = scheduled_lr(cfg.optim.lr, step, warmup_steps, total_steps);
      // Stream tag 1000 + epoch: fresh views every epoch.
      auto l = trainer.step(train, ids, lr, 1000 + epoch);
      log.train_loss += l.total;
      log.train_contrastive += l.contrastive;
      log.train_masked += l.masked;
      log.lr = lr;
      ++batches;
      ++step;
    }
    log.train_loss /= double(batches);
    log.train_contrastive /= double(batches);
    log.train_masked /= double(batches);

    // Validation views are fixed across epochs so the numbers compare.
    if (!val_ids.empty()) {
      std::size_t vb = 0;
      for (std::size_t begin = 0; begin < val_ids.size(); begin += bs) {
        std::vector<std::size_t> ids(val_ids.begin() + std::ptrdiff_t(begin),
                                     val_ids.begin() + std::ptrdiff_t(std::min(begin + bs, val_ids.size())));
        log.val_loss += trainer.loss(val, ids, 2).total;
        ++vb;
      }
      log.val_loss /= double(vb);
    } else {
      log.val_loss = log.train_loss;
    }
    log.criterion = criterion ? criterion(model) : log.val_loss;
    if (uses_estimator(cfg.objective) && con) log.u = u_stats(trainer.state());
    if (log.criterion < result.best_criterion || epoch == 0) {
      result.best_criterion = log.criterion;
      result.best_epoch = epoch + 1;
      result.best = model;
      log.improved = true;
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log, model);
  }
  result.state = trainer.state();
  return result;
}

}  // namespace tgcl::objectives
