#pragma once

// Downstream protocols: linear evaluation on frozen class-token features,
// semi-supervised fine-tuning with separate head/backbone learning rates, and
// imputation queries against the value head.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "tgcl/data/types.hpp"
#include "tgcl/errors.hpp"
#include "tgcl/eval/metrics.hpp"
#include "tgcl/model/model.hpp"
#include "tgcl/objectives/losses.hpp"
#include "tgcl/objectives/optimizer.hpp"
#include "tgcl/objectives/pretrain.hpp"

namespace tgcl::eval {

using numerics::NdArray;
using numerics::Var;

enum class Task { Mortality, Phenotype };

inline Task parse_task(const std::string& s) {
  if (s == "mortality") return Task::Mortality;
  if (s == "phenotype") return Task::Phenotype;
  throw ConfigError("task must be 'mortality' or 'phenotype', got '" + s + "'");
}
inline const char* task_name(Task t) { return t == Task::Mortality ? "mortality" : "phenotype"; }
inline std::size_t task_width(Task t) { return t == Task::Mortality ? 1 : data::kPhenotypeCount; }

inline constexpr int kReportSchemaVersion = 1;

struct MetricsReport {
  std::string task;
  std::string protocol;
  nlohmann::ordered_json metrics = nlohmann::ordered_json::object();
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::uint64_t seed = 0;
  double runtime_s = 0.0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["schema_version"] = kReportSchemaVersion;
    j["task"] = task;
    j["protocol"] = protocol;
    j["metrics"] = metrics;
    j["config"] = config;
    j["seed"] = seed;
    j["runtime_s"] = runtime_s;
    return j;
  }

  static MetricsReport from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("report: expected a JSON object");
    if (!j.contains("schema_version") || j["schema_version"] != kReportSchemaVersion)
      throw ValidationError("report: schema_version must be " + std::to_string(kReportSchemaVersion));
    MetricsReport r;
    try {
      r.task = j.at("task").get<std::string>();
      r.protocol = j.at("protocol").get<std::string>();
      r.metrics = j.at("metrics");
      r.config = j.value("config", nlohmann::json::object());
      r.seed = j.value("seed", std::uint64_t{0});
      r.runtime_s = j.value("runtime_s", 0.0);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("report: ") + e.what());
    }
    return r;
  }
};

// Label row of a stay for a task.
inline Labels task_labels(const data::StaySequence& s, Task task) {
  if (task == Task::Mortality) {
    if (!s.mortality) throw ValidationError("stay '" + s.stay_id + "' has no mortality label");
    return {*s.mortality};
  }
  if (!s.phenotypes) throw ValidationError("stay '" + s.stay_id + "' has no phenotype labels");
  return Labels(s.phenotypes->begin(), s.phenotypes->end());
}

// Scores: N x C matrix; labels: N rows of C.
inline nlohmann::ordered_json task_metrics(Task task, const NdArray<double>& scores, const std::vector<Labels>& labels) {
  nlohmann::ordered_json m;
  if (task == Task::Mortality) {
    std::vector<double> s(scores.rows());
    Labels y(scores.rows());
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = scores(i, 0);
      y[i] = labels[i][0];
    }
    m["auc_roc"] = auc_roc(s, y);
    m["auc_pr"] = auc_pr(s, y);
    return m;
  }
  MultiLabel ml;
  ml.scores.assign(scores.cols(), std::vector<double>(scores.rows()));
  ml.labels.assign(scores.cols(), Labels(scores.rows()));
  for (std::size_t i = 0; i < scores.rows(); ++i)
    for (std::size_t c = 0; c < scores.cols(); ++c) {
      ml.scores[c][i] = scores(i, c);
      ml.labels[c][i] = labels[i][c];
    }
  const auto roc = multilabel_auc_roc(ml);
  const auto pr = multilabel_auc_pr(ml);
  m["macro_auc_roc"] = roc.macro;
  m["micro_auc_roc"] = roc.micro;
  m["macro_auc_pr"] = pr.macro;
  m["micro_auc_pr"] = pr.micro;
  m["undefined_labels_roc"] = roc.skipped;
  m["undefined_labels_pr"] = pr.skipped;
  return m;
}

// Headline number for a task: AUC-ROC (macro for phenotypes).
inline double headline(Task task, const nlohmann::ordered_json& metrics) {
  return metrics.at(task == Task::Mortality ? "auc_roc" : "macro_auc_roc").get<double>();
}

// ---- linear evaluation --------------------------------------------------

struct LinearConfig {
  double lr = 0.1;
  std::size_t epochs = 300;  // full-batch steps
  double weight_decay = 0.0;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("linear.lr must be positive");
    if (epochs == 0) throw ConfigError("linear.epochs must be >= 1");
    if (!(weight_decay >= 0.0)) throw ConfigError("linear.weight_decay must be >= 0");
  }
};

// Final-layer class-token outputs, one row per stay.
template <typename T>
NdArray<double> extract_features(const model::Model<T>& m, const data::Dataset& ds, std::size_t threads = 1) {
  NdArray<double> x(ds.size(), m.config().d);
  objectives::detail::parallel_for(ds.size(), threads, [&](std::size_t i) {
    const auto f = m.cls_features(model::SequenceInput::from_stay(ds.stays[i]));
    for (std::size_t c = 0; c < f.cols(); ++c) x(i, c) = double(f[c]);
  });
  return x;
}

// Logistic-regression head on standardized inputs, trained full-batch with
// Adam, cosine decay, and binary cross-entropy.
struct LogisticHead {
  NdArray<double> mean, inv_std;  // 1 x d
  NdArray<double> w;              // d x C
  NdArray<double> b;              // 1 x C

  NdArray<double> logits(const NdArray<double>& x) const {
    NdArray<double> out(x.rows(), w.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t c = 0; c < w.cols(); ++c) {
        double s = b[c];
        for (std::size_t k = 0; k < w.rows(); ++k) s += (x(i, k) - mean[k]) * inv_std[k] * w(k, c);
        out(i, c) = s;
      }
    return out;
  }
};

inline double bce_with_logits(double z, double y) {
  // log(1 + e^z) - y z, stable for either sign of z.
  return std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
}
inline double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

inline LogisticHead fit_logistic(const NdArray<double>& x, const std::vector<Labels>& y, const LinearConfig& cfg) {
  cfg.validate();
  const std::size_t n = x.rows(), d = x.cols();
  if (n == 0) throw ValidationError("linear eval: empty training set");
  const std::size_t C = y.at(0).size();
  LogisticHead h;
  h.mean = NdArray<double>(1, d);
  h.inv_std = NdArray<double>(1, d);
  for (std::size_t k = 0; k < d; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x(i, k);
    const double mu = s / double(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v += (x(i, k) - mu) * (x(i, k) - mu);
    const double sd = std::sqrt(v / double(n));
    h.mean[k] = mu;
    h.inv_std[k] = sd > 1e-12 ? 1.0 / sd : 0.0;
  }
  NdArray<double> z(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) z(i, k) = (x(i, k) - h.mean[k]) * h.inv_std[k];

  numerics::ParamStore<double> ps;
  ps.add("w", NdArray<double>(d, C));
  ps.add("b", NdArray<double>(1, C));
  objectives::OptimizerConfig oc;
  oc.lr = cfg.lr;
  oc.weight_decay = cfg.weight_decay;
  objectives::Optimizer<double> opt(ps, oc);
  numerics::GradStore<double> grads(ps);
  for (std::size_t step = 0; step < cfg.epochs; ++step) {
    grads.zero();
    const auto& w = ps.value(0);
    const auto& b = ps.value(1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < C; ++c) {
        double s = b[c];
        for (std::size_t k = 0; k < d; ++k) s += z(i, k) * w(k, c);
        const double r = (sigmoid(s) - double(y[i][c])) / double(n);
        for (std::size_t k = 0; k < d; ++k) grads[0](k, c) += r * z(i, k);
        grads[1][c] += r;
      }
    opt.step(ps, grads, objectives::scheduled_lr(cfg.lr, step, 0, cfg.epochs));
  }
  h.w = ps.value(0);
  h.b = ps.value(1);
  return h;
}

inline std::vector<Labels> dataset_labels(const data::Dataset& ds, Task task) {
  std::vector<Labels> out;
  out.reserve(ds.size());
  for (const auto& s : ds.stays) out.push_back(task_labels(s, task));
  return out;
}

// Writes the standardized head into the model's classifier.
template <typename T>
void install_head(model::Model<T>& m, const LogisticHead& h) {
  const std::size_t d = h.w.rows(), C = h.w.cols();
  m.reset_classifier(C, 0);
  auto& W = m.params().value(m.classifier_w());
  auto& B = m.params().value(m.classifier_b());
  for (std::size_t c = 0; c < C; ++c) {
    double bias = h.b[c];
    for (std::size_t k = 0; k < d; ++k) {
      W(k, c) = static_cast<T>(h.w(k, c) * h.inv_std[k]);
      bias -= h.mean[k] * h.inv_std[k] * h.w(k, c);
    }
    B[c] = static_cast<T>(bias);
  }
}

template <typename T>
bool bit_identical(const NdArray<T>& a, const NdArray<T>& b) {
  return a.same_shape(b) && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

struct LinearResult {
  nlohmann::ordered_json metrics;  // on the evaluation split
  LogisticHead head;
};

// Fits on `train`, scores `test`. The backbone is compared bit-for-bit before
// and after; the classifier is replaced by the fitted head.
template <typename T>
LinearResult linear_probe(model::Model<T>& m, const data::Dataset& train, const data::Dataset& test, Task task,
                          const LinearConfig& cfg, std::size_t threads = 1) {
  std::vector<NdArray<T>> before;
  for (auto i : m.backbone_indices()) before.push_back(m.params().value(i));

  const auto xtr = extract_features(m, train, threads);
  const auto xte = extract_features(m, test, threads);
  LinearResult r;
  r.head = fit_logistic(xtr, dataset_labels(train, task), cfg);
  r.metrics = task_metrics(task, r.head.logits(xte), dataset_labels(test, task));
  install_head(m, r.head);

  const auto idx = m.backbone_indices();
  for (std::size_t k = 0; k < idx.size(); ++k)
    if (!bit_identical(m.params().value(idx[k]), before[k]))
      throw StateError("linear eval modified backbone parameter '" + m.params().name(idx[k]) + "'");
  return r;
}

template <typename T>
MetricsReport linear_eval(model::Model<T>& m, const data::Dataset& train, const data::Dataset& test, Task task,
                          const LinearConfig& cfg, std::uint64_t seed, std::size_t threads = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  MetricsReport rep;
  rep.task = task_name(task);
  rep.protocol = "linear";
  rep.seed = seed;
  rep.metrics = linear_probe(m, train, test, task, cfg, threads).metrics;
  rep.config["linear.lr"] = cfg.lr;
  rep.config["linear.epochs"] = cfg.epochs;
  rep.config["linear.weight_decay"] = cfg.weight_decay;
  rep.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

// ---- semi-supervised fine-tuning ---------------------------------------

struct SemiConfig {
  double fraction = 1.0;
  double head_lr = 0.01;
  double backbone_lr = 5e-4;
  std::size_t max_epochs = 20;
  std::size_t patience = 5;
  std::size_t batch_size = 16;
  std::size_t max_len = 0;  // crop training stays (0: off); evaluation always sees whole stays
  double weight_decay = 1e-5;

  void validate() const {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("label fraction must be in (0, 1]");
    if (!(head_lr > 0.0) || !(backbone_lr > 0.0)) throw ConfigError("semi learning rates must be positive");
    if (max_epochs == 0) throw ConfigError("semi.max_epochs must be >= 1");
    if (patience == 0) throw ConfigError("semi.patience must be >= 1");
    if (batch_size == 0) throw ConfigError("semi.batch_size must be >= 1");
    if (max_len == 1) throw ConfigError("semi.max_len must be 0 (off) or >= 2");
  }
};

// ceil(fraction N) stays, allocated to the strata (first label column)
// proportionally, each stratum sampled without replacement. Fewer than two
// stays in any stratum is a configuration error. Returned sorted.
inline std::vector<std::size_t> stratified_subset(const std::vector<Labels>& labels, double fraction,
                                                  std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("label fraction must be in (0, 1]");
  const std::size_t n = labels.size();
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  if (fraction == 1.0) return all;
  const auto total = static_cast<std::size_t>(std::ceil(fraction * double(n) - 1e-9));
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < n; ++i) (labels[i].at(0) ? pos : neg).push_back(i);
  auto n_pos = static_cast<std::size_t>(std::llround(double(total) * double(pos.size()) / double(n)));
  n_pos = std::min({n_pos, pos.size(), total});
  const std::size_t n_neg = std::min(total - n_pos, neg.size());
  if (n_pos < 2 || n_neg < 2)
    throw ConfigError("label fraction " + std::to_string(fraction) + " of " + std::to_string(n) + " stays gives " +
                      std::to_string(n_pos) + " positive and " + std::to_string(n_neg) +
                      " negative examples; at least 2 per class are needed");
  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  std::vector<std::size_t> out(pos.begin(), pos.begin() + std::ptrdiff_t(n_pos));
  out.insert(out.end(), neg.begin(), neg.begin() + std::ptrdiff_t(n_neg));
  std::sort(out.begin(), out.end());
  return out;
}

namespace detail {

// Mean BCE of the model's classifier over `ids`; accumulates the gradient
// when `grads` is given.
template <typename T>
double classifier_pass(const model::Model<T>& m, const data::Dataset& ds, const std::vector<std::size_t>& ids,
                       const std::vector<Labels>& labels, numerics::GradStore<T>* grads, std::size_t max_len,
                       std::uint64_t seed, std::uint64_t tag) {
  double loss = 0.0;
  const double inv_n = 1.0 / double(ids.size());
  for (auto i : ids) {
    numerics::Graph<T> g;
    auto rng = objectives::detail::stream(seed, tag, i);
    const auto s = grads ? objectives::detail::crop(ds.stays[i], max_len, rng) : ds.stays[i];
    Var logits = m.classify(g, m.encode(g, m.embed(g, model::SequenceInput::from_stay(s))));
    const auto& z = g.forward(logits);
    const auto& y = labels[i];
    NdArray<T> dz(1, z.cols());
    for (std::size_t c = 0; c < z.cols(); ++c) {
      loss += bce_with_logits(double(z[c]), double(y[c])) * inv_n / double(z.cols());
      dz[c] = static_cast<T>((sigmoid(double(z[c])) - double(y[c])) * inv_n / double(z.cols()));
    }
    if (!grads) continue;
    Var root = g.reduce_sum(g.multiply(logits, g.constant(std::move(dz))));
    g.forward(root);
    g.backward(root);
    g.accumulate_param_grads(*grads);
  }
  return loss;
}

template <typename T>
NdArray<double> classifier_scores(const model::Model<T>& m, const data::Dataset& ds, std::size_t threads) {
  NdArray<double> out(ds.size(), m.config().classes);
  objectives::detail::parallel_for(ds.size(), threads, [&](std::size_t i) {
    numerics::Graph<T> g;
    const auto& z = g.forward(m.classify(g, m.encode(g, m.embed(g, model::SequenceInput::from_stay(ds.stays[i])))));
    for (std::size_t c = 0; c < z.cols(); ++c) out(i, c) = double(z[c]);
  });
  return out;
}

}  // namespace detail

// Fine-tunes a copy of `pretrained` on a label fraction of `train`, early
// stopping on validation BCE; reports test metrics of the best epoch.
template <typename T>
MetricsReport semi_supervised(const model::Model<T>& pretrained, const data::Dataset& train, const data::Dataset& val,
                              const data::Dataset& test, Task task, const SemiConfig& cfg, std::uint64_t seed,
                              std::size_t threads = 1) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto train_labels = dataset_labels(train, task);
  const auto val_labels = dataset_labels(val, task);
  const auto subset = stratified_subset(train_labels, cfg.fraction, seed);

  model::Model<T> m = pretrained;
  m.reset_classifier(task_width(task), seed);
  const auto backbone = m.backbone_indices();
  const std::vector<std::size_t> head{m.classifier_w(), m.classifier_b()};
  objectives::OptimizerConfig oc;
  oc.weight_decay = cfg.weight_decay;
  oc.lr = cfg.head_lr;
  objectives::Optimizer<T> head_opt(m.params(), oc);
  oc.lr = cfg.backbone_lr;
  objectives::Optimizer<T> body_opt(m.params(), oc);

  std::vector<std::size_t> val_ids(val.size());
  std::iota(val_ids.begin(), val_ids.end(), 0);
  model::Model<T> best = m;
  double best_val = detail::classifier_pass(m, val, val_ids, val_labels, static_cast<numerics::GradStore<T>*>(nullptr), 0, seed, 0);
  std::size_t best_epoch = 0, since = 0, epochs_run = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    auto order = subset;
    auto rng = objectives::detail::stream(seed, 7, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      std::vector<std::size_t> ids(order.begin() + std::ptrdiff_t(begin),
                                   order.begin() + std::ptrdiff_t(std::min(begin + cfg.batch_size, order.size())));
      numerics::GradStore<T> grads(m.params());
      detail::classifier_pass(m, train, ids, train_labels, &grads, cfg.max_len, seed, 100 + epoch);
      head_opt.step(m.params(), grads, cfg.head_lr, head);
      body_opt.step(m.params(), grads, cfg.backbone_lr, backbone);
    }
    ++epochs_run;
    const double v = detail::classifier_pass(m, val, val_ids, val_labels, static_cast<numerics::GradStore<T>*>(nullptr), 0, seed, 0);
    if (v < best_val) {
      best_val = v;
      best = m;
      best_epoch = epoch + 1;
      since = 0;
    } else if (++since >= cfg.patience) {
      break;
    }
  }

  MetricsReport rep;
  rep.task = task_name(task);
  rep.protocol = "semi";
  rep.seed = seed;
  rep.metrics = task_metrics(task, detail::classifier_scores(best, test, threads), dataset_labels(test, task));
  rep.metrics["labeled_stays"] = subset.size();
  rep.metrics["best_epoch"] = best_epoch;
  rep.metrics["epochs_run"] = epochs_run;
  rep.metrics["best_val_bce"] = best_val;
  rep.config["label_fraction"] = cfg.fraction;
  rep.config["semi.head_lr"] = cfg.head_lr;
  rep.config["semi.backbone_lr"] = cfg.backbone_lr;
  rep.config["semi.max_epochs"] = cfg.max_epochs;
  rep.config["semi.patience"] = cfg.patience;
  rep.config["semi.batch_size"] = cfg.batch_size;
  rep.config["semi.max_len"] = cfg.max_len;
  rep.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

// ---- imputation ---------------------------------------------------------

struct Query {
  double t = 0.0;
  std::size_t f = 0;
};

// Inserts each query as a masked triplet at its time (after existing events
// with the same time) and reads the value head there. Results follow the
// order of `queries`.
template <typename T>
std::vector<double> impute(const model::Model<T>& m, const data::StaySequence& stay, const std::vector<Query>& queries) {
  if (queries.empty()) return {};
  const std::size_t V = m.config().vocab;
  struct Slot {
    double t, v;
    std::size_t f;
    long query;  // -1 for observed events
  };
  std::vector<Slot> slots;
  for (const auto& e : stay.events) {
    if (e.f >= V) throw IndexError("impute: stay feature index outside the model vocabulary");
    slots.push_back({e.t, e.v, e.f, -1});
  }
  for (std::size_t q = 0; q < queries.size(); ++q) {
    if (queries[q].f >= V)
      throw IndexError("impute: query feature index " + std::to_string(queries[q].f) + " outside vocabulary of size " +
                       std::to_string(V));
    if (!(queries[q].t >= 0.0)) throw DomainError("impute: query time must be >= 0");
    slots.push_back({queries[q].t, 0.0, queries[q].f, long(q)});
  }
  std::stable_sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) { return a.t < b.t; });
  model::SequenceInput in;
  std::vector<std::size_t> mask, which;
  for (std::size_t j = 0; j < slots.size(); ++j) {
    in.t.push_back(slots[j].t);
    in.v.push_back(slots[j].v);
    in.f.push_back(slots[j].f);
    if (slots[j].query >= 0) {
      mask.push_back(j);
      which.push_back(std::size_t(slots[j].query));
    }
  }
  numerics::Graph<T> g;
  const auto& pred = g.forward(m.predict_values(g, m.encode(g, m.embed(g, in, mask)), mask));
  std::vector<double> out(queries.size());
  for (std::size_t k = 0; k < mask.size(); ++k) out[which[k]] = double(pred[k]);
  return out;
}

struct ImputeConfig {
  double mask_rate = 0.10;
  void validate() const {
    if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw ConfigError("impute.mask_rate must be in (0, 1)");
  }
};

struct ImputeOutcome {
  std::vector<double> predicted, truth;
};

// Masks a random subset of each stay's events and predicts them back. Errors
// are computed only at masked positions.
template <typename T>
ImputeOutcome impute_masked(const model::Model<T>& m, const data::Dataset& ds, const ImputeConfig& cfg,
                            std::uint64_t seed, std::size_t threads = 1) {
  cfg.validate();
  std::vector<ImputeOutcome> per(ds.size());
  objectives::detail::parallel_for(ds.size(), threads, [&](std::size_t i) {
    const auto in = model::SequenceInput::from_stay(ds.stays[i]);
    auto rng = objectives::detail::stream(seed, 11, i);
    const auto mask = objectives::sample_mask(in.size(), cfg.mask_rate, rng);
    numerics::Graph<T> g;
    const auto& pred = g.forward(m.predict_values(g, m.encode(g, m.embed(g, in, mask)), mask));
    for (std::size_t k = 0; k < mask.size(); ++k) {
      per[i].predicted.push_back(double(pred[k]));
      per[i].truth.push_back(in.v[mask[k]]);
    }
  });
  ImputeOutcome out;
  for (const auto& p : per) {
    out.predicted.insert(out.predicted.end(), p.predicted.begin(), p.predicted.end());
    out.truth.insert(out.truth.end(), p.truth.begin(), p.truth.end());
  }
  return out;
}

template <typename T>
MetricsReport impute_eval(const model::Model<T>& m, const data::Dataset& test, const ImputeConfig& cfg,
                          std::uint64_t seed, std::size_t threads = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = impute_masked(m, test, cfg, seed, threads);
  MetricsReport rep;
  rep.task = "imputation";
  rep.protocol = "impute";
  rep.seed = seed;
  rep.metrics["mse"] = mse(r.predicted, r.truth);
  rep.metrics["mad"] = mad(r.predicted, r.truth);
  rep.metrics["masked_values"] = r.truth.size();
  rep.config["impute.mask_rate"] = cfg.mask_rate;
  rep.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace tgcl::eval
