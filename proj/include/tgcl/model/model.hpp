#pragma once

// Triplet embedding + causal pre-norm transformer encoder + heads.
//
// A stay of T events becomes a (T+1) x d token matrix:
//   token_j = value_j + feature[f_j] + time(t_j),   j < T
//   token_T = cls
// where value_j is the mask token for masked positions and a 1->d linear map
// of v_j otherwise, and time(t)[0] = w0 t + p0, time(t)[k] = sin(wk t + pk).
// Position k attends to positions <= k, so the end-appended class token sees
// the whole sequence.

#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "tgcl/data/types.hpp"
#include "tgcl/numerics/graph.hpp"
#include "tgcl/numerics/params.hpp"

namespace tgcl::model {

using numerics::Graph;
using numerics::NdArray;
using numerics::ParamStore;
using numerics::Var;

struct ModelConfig {
  std::size_t d = 64;              // model width
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ff = 256;            // feed-forward width
  std::size_t vocab = 17;          // V
  std::size_t proj = 32;           // p, ignored without projection
  std::size_t classes = 1;         // C
  bool use_projection = true;

  std::size_t embedding_dim() const { return use_projection ? proj : d; }

  void validate() const {
    if (d == 0 || heads == 0 || layers == 0 || ff == 0 || vocab == 0 || classes == 0)
      throw ConfigError("model: all dimensions must be positive");
    if (d % heads != 0) throw ConfigError("model: d must be divisible by the head count");
    if (use_projection && proj == 0) throw ConfigError("model: projection width must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// One model input: the (possibly subset, noised) triplets of a stay view.
struct SequenceInput {
  std::vector<double> t;
  std::vector<double> v;
  std::vector<std::size_t> f;

  std::size_t size() const { return t.size(); }

  static SequenceInput from_stay(const data::StaySequence& s) {
    SequenceInput in;
    for (const auto& e : s.events) {
      in.t.push_back(e.t);
      in.v.push_back(e.v);
      in.f.push_back(e.f);
    }
    return in;
  }
};

template <typename T>
class Model {
 public:
  struct LayerParams {
    std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b;
  };

  Model() = default;

  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    build(&rng);
  }

  // Zero-initialised parameters with the layout of cfg (used by loaders).
  static Model zeros(const ModelConfig& cfg) {
    Model m;
    m.cfg_ = cfg;
    m.cfg_.validate();
    m.build(nullptr);
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  std::size_t layer_count() const { return layers_.size(); }

  // Named handles.
  std::size_t value_w() const { return value_w_; }
  std::size_t value_b() const { return value_b_; }
  std::size_t feature_table() const { return feature_table_; }
  std::size_t time_omega() const { return time_omega_; }
  std::size_t time_phi() const { return time_phi_; }
  std::size_t cls_token() const { return cls_token_; }
  std::size_t mask_token() const { return mask_token_; }
  std::size_t value_head_w() const { return value_head_w_; }
  std::size_t value_head_b() const { return value_head_b_; }
  std::size_t proj_w() const { return proj_w_; }
  std::size_t proj_b() const { return proj_b_; }
  std::size_t classifier_w() const { return cls_w_; }
  std::size_t classifier_b() const { return cls_b_; }
  const LayerParams& layer(std::size_t l) const { return layers_.at(l); }

  // Parameters of the encoder proper (embeddings, layers, final norm, value
  // head, projection), i.e. everything except the classifier.
  std::vector<std::size_t> backbone_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (i != cls_w_ && i != cls_b_) out.push_back(i);
    return out;
  }

  // Re-initialises the classifier head (linear evaluation / fine-tuning).
  void reset_classifier(std::size_t classes, std::uint64_t seed) {
    cfg_.classes = classes;
    std::mt19937_64 rng(seed);
    params_.value(cls_w_) = init_normal(cfg_.d, classes, 1.0 / std::sqrt(double(cfg_.d)), &rng);
    params_.value(cls_b_) = NdArray<T>(1, classes);
  }

  // ---- graph builders -----------------------------------------------------

  Var time_encode(Graph<T>& g, Var times) const {
    Var lin = g.add(g.matmul(times, g.param(params_, time_omega_)), g.param(params_, time_phi_));
    if (cfg_.d == 1) return lin;
    return g.concat_cols({g.slice_cols(lin, 0, 1), g.sin(g.slice_cols(lin, 1, cfg_.d))});
  }

  // `values` is a Tx1 node so callers may differentiate w.r.t. raw values.
  Var embed(Graph<T>& g, const SequenceInput& in, Var values, const std::vector<std::size_t>& mask) const {
    const std::size_t n = in.size();
    if (n == 0) throw ContractError("embed: empty sequence");
    if (in.v.size() != n || in.f.size() != n)
      throw DimensionError("embed: t/v/f lengths differ");
    if (g.rows(values) != n || g.cols(values) != 1)
      throw DimensionError("embed: values must be a Tx1 column");
    for (auto f : in.f)
      if (f >= cfg_.vocab)
        throw IndexError("embed: feature index " + std::to_string(f) + " outside vocabulary of size " +
                         std::to_string(cfg_.vocab));

    NdArray<T> times(n, 1);
    for (std::size_t j = 0; j < n; ++j) times[j] = static_cast<T>(in.t[j]);

    Var value_emb;
    if (mask.empty()) {
      value_emb = g.add(g.matmul(values, g.param(params_, value_w_)), g.param(params_, value_b_));
    } else {
      auto col_mask = std::make_shared<std::vector<std::uint8_t>>(n, 0);
      auto row_mask = std::make_shared<std::vector<std::uint8_t>>(n * cfg_.d, 0);
      NdArray<T> indicator(n, 1);
      for (auto j : mask) {
        if (j >= n) throw IndexError("embed: mask index " + std::to_string(j) + " out of range");
        (*col_mask)[j] = 1;
        std::fill_n(row_mask->begin() + static_cast<std::ptrdiff_t>(j * cfg_.d), cfg_.d, 1);
        indicator[j] = T(1);
      }
      Var hidden = g.masked_fill(values, col_mask, T(0));
      Var mapped = g.add(g.matmul(hidden, g.param(params_, value_w_)), g.param(params_, value_b_));
      value_emb = g.add(g.masked_fill(mapped, row_mask, T(0)),
                        g.matmul(g.constant(std::move(indicator)), g.param(params_, mask_token_)));
    }
    Var feat = g.gather_rows(g.param(params_, feature_table_), in.f);
    Var tokens = g.add(g.add(value_emb, feat), time_encode(g, g.constant(std::move(times))));
    return g.concat_rows({tokens, g.param(params_, cls_token_)});
  }

  Var embed(Graph<T>& g, const SequenceInput& in, const std::vector<std::size_t>& mask = {}) const {
    NdArray<T> values(std::max<std::size_t>(in.size(), 1), 1);
    for (std::size_t j = 0; j < in.size(); ++j) values[j] = static_cast<T>(in.v[j]);
    return embed(g, in, g.constant(std::move(values)), mask);
  }

  Var encode(Graph<T>& g, Var tokens) const {
    const std::size_t n = g.rows(tokens);
    const std::size_t d = cfg_.d;
    const std::size_t hd = d / cfg_.heads;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));
    auto causal = causal_mask(n);
    Var x = tokens;
    for (const auto& L : layers_) {
      Var h = affine_norm(g, x, L.ln1_g, L.ln1_b);
      Var q = linear(g, h, L.wq, L.bq);
      Var k = linear(g, h, L.wk, L.bk);
      Var v = linear(g, h, L.wv, L.bv);
      std::vector<Var> heads;
      for (std::size_t hi = 0; hi < cfg_.heads; ++hi) {
        Var qh = cfg_.heads == 1 ? q : g.slice_cols(q, hi * hd, (hi + 1) * hd);
        Var kh = cfg_.heads == 1 ? k : g.slice_cols(k, hi * hd, (hi + 1) * hd);
        Var vh = cfg_.heads == 1 ? v : g.slice_cols(v, hi * hd, (hi + 1) * hd);
        Var scores = g.scale(g.matmul(qh, kh, true), inv_sqrt);
        Var att = g.row_softmax(g.masked_fill(scores, causal, kMaskedScore));
        heads.push_back(g.matmul(att, vh));
      }
      Var merged = cfg_.heads == 1 ? heads[0] : g.concat_cols(heads);
      x = g.add(x, linear(g, merged, L.wo, L.bo));
      Var h2 = affine_norm(g, x, L.ln2_g, L.ln2_b);
      Var ff = linear(g, g.gelu(linear(g, h2, L.ff1_w, L.ff1_b)), L.ff2_w, L.ff2_b);
      x = g.add(x, ff);
    }
    return affine_norm(g, x, lnf_g_, lnf_b_);
  }

  // Final-layer class token output (1 x d).
  Var cls_output(Graph<T>& g, Var outputs) const { return g.gather_rows(outputs, {g.rows(outputs) - 1}); }

  // Unit-norm sequence embedding z (1 x p, or 1 x d without projection).
  Var sequence_embedding(Graph<T>& g, Var outputs) const {
    Var cls = cls_output(g, outputs);
    if (cfg_.use_projection) cls = linear(g, cls, proj_w_, proj_b_);
    return g.l2_normalize_rows(cls);
  }

  // One prediction per masked index (|M| x 1), in the order given.
  Var predict_values(Graph<T>& g, Var outputs, const std::vector<std::size_t>& mask) const {
    if (mask.empty()) throw ContractError("predict_values: mask set is empty");
    for (auto j : mask)
      if (j + 1 >= g.rows(outputs)) throw IndexError("predict_values: index is not an event position");
    return linear(g, g.gather_rows(outputs, mask), value_head_w_, value_head_b_);
  }

  // Classifier logits (1 x C) from the class token.
  Var classify(Graph<T>& g, Var outputs) const { return linear(g, cls_output(g, outputs), cls_w_, cls_b_); }

  // Convenience: forward a sequence and return the class-token features.
  NdArray<T> cls_features(const SequenceInput& in) const {
    Graph<T> g;
    Var out = cls_output(g, encode(g, embed(g, in)));
    return g.forward(out);
  }

 private:
  static constexpr T kMaskedScore = T(-1e30);

  Var linear(Graph<T>& g, Var x, std::size_t w, std::size_t b) const {
    return g.add(g.matmul(x, g.param(params_, w)), g.param(params_, b));
  }
  Var affine_norm(Graph<T>& g, Var x, std::size_t gain, std::size_t bias) const {
    return g.add(g.multiply(g.layer_norm(x), g.param(params_, gain)), g.param(params_, bias));
  }

  // Entry (i, j) is masked when j > i.
  static numerics::Mask causal_mask(std::size_t n) {
    auto m = std::make_shared<std::vector<std::uint8_t>>(n * n, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) (*m)[i * n + j] = 1;
    return m;
  }

  static NdArray<T> init_normal(std::size_t r, std::size_t c, double sd, std::mt19937_64* rng) {
    NdArray<T> out(r, c);
    if (!rng) return out;
    std::normal_distribution<double> normal(0.0, sd);
    for (auto& v : out.values()) v = static_cast<T>(normal(*rng));
    return out;
  }
  static NdArray<T> init_uniform(std::size_t r, std::size_t c, double lo, double hi, std::mt19937_64* rng) {
    NdArray<T> out(r, c);
    if (!rng) return out;
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : out.values()) v = static_cast<T>(u(*rng));
    return out;
  }
  static NdArray<T> ones(std::size_t c, std::mt19937_64* rng) { return NdArray<T>(1, c, rng ? T(1) : T(0)); }

  void build(std::mt19937_64* rng) {
    const std::size_t d = cfg_.d;
    const double s_d = 1.0 / std::sqrt(double(d));
    value_w_ = params_.add("embed.value.w", init_normal(1, d, 1.0, rng));
    value_b_ = params_.add("embed.value.b", NdArray<T>(1, d));
    feature_table_ = params_.add("embed.feature", init_normal(cfg_.vocab, d, 1.0, rng));
    // Linear component starts on the scale of a 48 h stay; periodic ones span
    // periods from a few hours to a few days.
    NdArray<T> omega = init_uniform(1, d, 0.05, 1.5, rng);
    if (rng) omega[0] = T(1.0 / 48.0);
    time_omega_ = params_.add("embed.time.omega", std::move(omega));
    time_phi_ = params_.add("embed.time.phi", init_uniform(1, d, 0.0, 2.0 * M_PI, rng));
    if (rng) params_.value(time_phi_)[0] = T(0);
    cls_token_ = params_.add("embed.cls", init_normal(1, d, 1.0, rng));
    mask_token_ = params_.add("embed.mask", init_normal(1, d, 1.0, rng));

    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      LayerParams L{};
      L.ln1_g = params_.add(p + "ln1.g", ones(d, rng));
      L.ln1_b = params_.add(p + "ln1.b", NdArray<T>(1, d));
      L.wq = params_.add(p + "attn.wq", init_normal(d, d, s_d, rng));
      L.bq = params_.add(p + "attn.bq", NdArray<T>(1, d));
      L.wk = params_.add(p + "attn.wk", init_normal(d, d, s_d, rng));
      L.bk = params_.add(p + "attn.bk", NdArray<T>(1, d));
      L.wv = params_.add(p + "attn.wv", init_normal(d, d, s_d, rng));
      L.bv = params_.add(p + "attn.bv", NdArray<T>(1, d));
      L.wo = params_.add(p + "attn.wo", init_normal(d, d, s_d / std::sqrt(2.0 * cfg_.layers), rng));
      L.bo = params_.add(p + "attn.bo", NdArray<T>(1, d));
      L.ln2_g = params_.add(p + "ln2.g", ones(d, rng));
      L.ln2_b = params_.add(p + "ln2.b", NdArray<T>(1, d));
      L.ff1_w = params_.add(p + "ff1.w", init_normal(d, cfg_.ff, s_d, rng));
      L.ff1_b = params_.add(p + "ff1.b", NdArray<T>(1, cfg_.ff));
      L.ff2_w = params_.add(p + "ff2.w",
                            init_normal(cfg_.ff, d, 1.0 / std::sqrt(double(cfg_.ff) * 2.0 * cfg_.layers), rng));
      L.ff2_b = params_.add(p + "ff2.b", NdArray<T>(1, d));
      layers_.push_back(L);
    }
    lnf_g_ = params_.add("final_ln.g", ones(d, rng));
    lnf_b_ = params_.add("final_ln.b", NdArray<T>(1, d));
    value_head_w_ = params_.add("head.value.w", init_normal(d, 1, 0.02, rng));
    value_head_b_ = params_.add("head.value.b", NdArray<T>(1, 1));
    const std::size_t p = cfg_.use_projection ? cfg_.proj : d;
    proj_w_ = params_.add("head.proj.w", cfg_.use_projection ? init_normal(d, p, s_d, rng)
                                                             : NdArray<T>::identity(d));
    proj_b_ = params_.add("head.proj.b", NdArray<T>(1, p));
    cls_w_ = params_.add("head.classifier.w", init_normal(d, cfg_.classes, s_d, rng));
    cls_b_ = params_.add("head.classifier.b", NdArray<T>(1, cfg_.classes));
  }

  ModelConfig cfg_;
  ParamStore<T> params_;
  std::vector<LayerParams> layers_;
  std::size_t value_w_ = 0, value_b_ = 0, feature_table_ = 0, time_omega_ = 0, time_phi_ = 0;
  std::size_t cls_token_ = 0, mask_token_ = 0, lnf_g_ = 0, lnf_b_ = 0;
  std::size_t value_head_w_ = 0, value_head_b_ = 0, proj_w_ = 0, proj_b_ = 0, cls_w_ = 0, cls_b_ = 0;
};

}  // namespace tgcl::model
