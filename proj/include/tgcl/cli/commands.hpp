#pragma once

// Command implementations behind the `tgcl` executable. Each command reads
// and writes files only; errors propagate as exceptions and are mapped to
// exit codes by exit_code().

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tgcl/cli/config.hpp"
#include "tgcl/data/ingest.hpp"
#include "tgcl/data/normalizer.hpp"
#include "tgcl/data/synth.hpp"
#include "tgcl/data/transforms.hpp"
#include "tgcl/eval/protocols.hpp"
#include "tgcl/eval/report.hpp"
#include "tgcl/model/checkpoint.hpp"
#include "tgcl/objectives/pretrain.hpp"

namespace tgcl::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

struct Common {
  std::string out;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::ostream* log = &std::cerr;
};

inline int exit_code(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const IoError&) {
    return 2;
  } catch (const std::exception&) {
    return 1;
  }
}

namespace detail {

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory '" + dir + "'");
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  out.flush();
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

// train/val/test JSONL + normalizer.json, raw (unstandardized) values.
inline void write_data_dir(const std::string& dir, const data::SplitSet& s, const data::Normalizer& norm) {
  ensure_dir(dir);
  data::write_jsonl_file(join(dir, "train.jsonl"), s.train);
  data::write_jsonl_file(join(dir, "val.jsonl"), s.val);
  data::write_jsonl_file(join(dir, "test.jsonl"), s.test);
  norm.save(join(dir, "normalizer.json"));
}

struct LoadedData {
  data::Normalizer norm;
  data::Dataset train, val, test;
};

inline data::Dataset load_split(const std::string& dir, const std::string& name, const data::Normalizer& norm,
                                data::Split split) {
  data::IngestOptions opts;
  opts.vocab = &norm.vocabulary();
  auto ds = data::ingest_file(join(dir, name + ".jsonl"), opts).dataset;
  auto applied = data::apply_normalizer(ds, norm).dataset;
  applied.split = split;
  return applied;
}

inline LoadedData load_data_dir(const std::string& dir) {
  LoadedData d;
  d.norm = data::Normalizer::load(join(dir, "normalizer.json"));
  d.train = load_split(dir, "train", d.norm, data::Split::Train);
  d.val = load_split(dir, "val", d.norm, data::Split::Val);
  d.test = load_split(dir, "test", d.norm, data::Split::Test);
  return d;
}

inline std::vector<std::string> vocab_names(const data::Vocabulary& v) {
  std::vector<std::string> out;
  for (const auto& e : v.entries()) out.push_back(e.name);
  return out;
}

inline model::ModelConfig model_config(const RunConfig& c, std::size_t vocab) {
  model::ModelConfig m;
  m.d = c.count("model.d");
  m.heads = c.count("model.heads");
  m.layers = c.count("model.layers");
  m.ff = c.count("model.ff");
  m.proj = c.count("model.proj");
  m.use_projection = c.flag("model.use_projection");
  m.vocab = vocab;
  m.validate();
  return m;
}

inline Json model_json(const model::ModelConfig& m) {
  return Json{{"model.d", m.d},         {"model.heads", m.heads}, {"model.layers", m.layers},
              {"model.ff", m.ff},       {"model.proj", m.proj},   {"model.use_projection", m.use_projection},
              {"model.vocab", m.vocab}};
}

}  // namespace detail

inline objectives::PretrainConfig pretrain_config(const RunConfig& c, std::uint64_t seed, std::size_t threads) {
  objectives::PretrainConfig p;
  p.objective = objectives::parse_objective(c.str("pretrain.objective"));
  p.gcl.tau = c.num("pretrain.tau");
  p.gcl.gamma = c.num("pretrain.gamma");
  p.gcl.lambda_mask = c.num("pretrain.lambda_mask");
  p.gcl.exclude_self = c.flag("pretrain.exclude_self");
  p.gcl.strict_eq2 = c.flag("pretrain.strict_eq2");
  p.contrastive_enabled = c.flag("pretrain.contrastive");
  p.mask_rate = c.num("pretrain.mask_rate");
  p.optim.kind = objectives::parse_optimizer(c.str("pretrain.optimizer"));
  p.optim.beta1 = c.num("pretrain.beta1");
  p.optim.beta2 = c.num("pretrain.beta2");
  p.optim.eps = c.num("pretrain.eps");
  p.optim.lr = c.num("pretrain.lr");
  p.optim.weight_decay = c.num("pretrain.weight_decay");
  p.warmup_epochs = c.count("pretrain.warmup_epochs");
  p.epochs = c.count("pretrain.epochs");
  p.batch_size = c.count("pretrain.batch_size");
  p.max_len = c.count("pretrain.max_len");
  p.augment.global_frac = {c.num("augment.global_frac_lo"), c.num("augment.global_frac_hi")};
  p.augment.local_frac = {c.num("augment.local_frac_lo"), c.num("augment.local_frac_hi")};
  p.augment.p_local = c.num("augment.p_local");
  p.augment.n_regions = {c.count("augment.regions_lo"), c.count("augment.regions_hi")};
  p.augment.noise_sigma = c.num("augment.noise_sigma");
  p.seed = seed;
  p.threads = threads;
  p.validate();
  return p;
}

inline eval::LinearConfig linear_config(const RunConfig& c) {
  eval::LinearConfig l;
  l.lr = c.num("linear.lr");
  l.epochs = c.count("linear.epochs");
  l.weight_decay = c.num("linear.weight_decay");
  l.validate();
  return l;
}

inline eval::SemiConfig semi_config(const RunConfig& c) {
  eval::SemiConfig s;
  s.fraction = c.num("semi.label_fraction");
  s.head_lr = c.num("semi.head_lr");
  s.backbone_lr = c.num("semi.backbone_lr");
  s.max_epochs = c.count("semi.max_epochs");
  s.patience = c.count("semi.patience");
  s.batch_size = c.count("semi.batch_size");
  s.max_len = c.count("semi.max_len");
  s.validate();
  return s;
}

// ---- synth / ingest ---------------------------------------------------------

inline void cmd_synth(const RunConfig& c, const Common& opt) {
  data::SynthConfig s;
  s.n_stays = c.count("synth.n_stays");
  s.n_features = c.count("synth.n_features");
  s.horizon_hours = c.num("synth.horizon_hours");
  s.rate_lo = c.num("synth.rate_lo");
  s.rate_hi = c.num("synth.rate_hi");
  s.label_noise = c.num("synth.label_noise");
  s.walk_sigma = c.num("synth.walk_sigma");
  s.obs_noise = c.num("synth.obs_noise");
  s.mortality_threshold = c.num("synth.mortality_threshold");
  const auto split = data::split_dataset(data::synth_generate(s, opt.seed), opt.seed);
  const auto fit = data::fit_normalizer(split.train);
  for (const auto& w : fit.warnings) *opt.log << "warning: " << w << "\n";
  detail::write_data_dir(opt.out, split, fit.normalizer);
  *opt.log << "synth: " << split.train.size() << "/" << split.val.size() << "/" << split.test.size()
           << " stays, " << fit.normalizer.size() << " features -> " << opt.out << "\n";
}

struct IngestArgs {
  std::string input;
  std::string features;    // optional kinds/bounds document
  std::string normalizer;  // optional: reuse an existing normalizer (and its vocabulary)
};

inline void cmd_ingest(const RunConfig& c, const Common& opt, const IngestArgs& a) {
  data::FeatureSpec spec;
  if (!a.features.empty()) spec = data::load_feature_spec(a.features);
  std::optional<data::Normalizer> fixed;
  if (!a.normalizer.empty()) fixed = data::Normalizer::load(a.normalizer);

  data::IngestOptions io;
  if (!a.features.empty()) io.spec = &spec;
  if (fixed) io.vocab = &fixed->vocabulary();
  auto res = data::ingest_file(a.input, io);
  for (const auto& [name, n] : res.unknown_features)
    *opt.log << "warning: feature '" << name << "' (" << n << " events) is " << (fixed ? "dropped" : "undeclared")
             << "\n";
  if (res.dropped_stays) *opt.log << "warning: " << res.dropped_stays << " stays had no usable events\n";
  data::Dataset ds = std::move(res.dataset);
  if (const double h = c.num("data.window_hours"); h > 0.0) {
    auto w = data::window(ds, h);
    if (w.removed) *opt.log << "warning: " << w.removed << " stays have no events in the first " << h << " hours\n";
    ds = std::move(w.dataset);
  }
  ds.validate();
  const auto split = data::split_dataset(ds, opt.seed);
  data::Normalizer norm;
  if (fixed) {
    norm = *fixed;
  } else {
    auto fit = data::fit_normalizer(split.train, spec);
    for (const auto& w : fit.warnings) *opt.log << "warning: " << w << "\n";
    norm = fit.normalizer;
  }
  detail::write_data_dir(opt.out, split, norm);
  *opt.log << "ingest: " << ds.size() << " stays, " << norm.size() << " features -> " << opt.out << "\n";
}

// ---- pretrain -----------------------------------------------------------------

struct PretrainArgs {
  std::string data;
};

inline Json epoch_json(const objectives::EpochLog& l) {
  Json j;
  j["epoch"] = l.epoch;
  j["train_loss"] = l.train_loss;
  j["train_contrastive"] = l.train_contrastive;
  j["train_masked"] = l.train_masked;
  j["val_loss"] = l.val_loss;
  j["criterion"] = l.criterion;
  j["lr"] = l.lr;
  j["improved"] = l.improved;
  if (l.u) {
    j["u_mean"] = l.u->mean;
    j["u_min"] = l.u->min;
    j["u_max"] = l.u->max;
    j["u_visited"] = l.u->visited;
  }
  return j;
}

inline void cmd_pretrain(const RunConfig& c, const Common& opt, const PretrainArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto pc = pretrain_config(c, opt.seed, opt.threads);
  const auto select_by = c.str("pretrain.select_by");
  if (select_by != "val-loss" && select_by != "linear-eval")
    throw ConfigError("select_by must be 'val-loss' or 'linear-eval', got '" + select_by + "'");
  for (const auto& k : ignored_keys(c, objectives::uses_contrastive(pc.objective),
                                    objectives::uses_estimator(pc.objective),
                                    objectives::uses_reconstruction(pc.objective)))
    *opt.log << "warning: '" << k << "' has no effect with objective " << objectives::objective_name(pc.objective)
             << "; ignored\n";

  auto d = detail::load_data_dir(a.data);
  const auto mc = detail::model_config(c, d.norm.size());
  model::Model<float> m(mc, opt.seed);
  detail::ensure_dir(opt.out);
  const auto ckpt = detail::join(opt.out, "model.ckpt");
  const auto names = detail::vocab_names(d.norm.vocabulary());

  Json meta;
  meta["objective"] = objectives::objective_name(pc.objective);
  meta["seed"] = opt.seed;
  meta["config"] = c.section_json({"model", "pretrain", "augment"});

  std::ofstream log(detail::join(opt.out, "train_log.jsonl"), std::ios::binary);
  if (!log) throw IoError("cannot write training log in '" + opt.out + "'");
  detail::write_text(detail::join(opt.out, "config.txt"), c.dump());

  objectives::CriterionFn<float> criterion;
  if (select_by == "linear-eval") {
    const auto lc = linear_config(c);
    criterion = [&](const model::Model<float>& cur) {
      model::Model<float> probe = cur;
      auto r = eval::linear_probe(probe, d.train, d.val, eval::Task::Mortality, lc, opt.threads);
      return -r.metrics["auc_roc"].get<double>();
    };
  }
  objectives::EpochHook<float> on_epoch = [&](const objectives::EpochLog& l, const model::Model<float>& cur) {
    log << epoch_json(l).dump() << "\n";
    log.flush();
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %zu  train %.5f  val %.5f%s", l.epoch, l.train_loss, l.val_loss,
                  l.improved ? "  *" : "");
    *opt.log << buf;
    if (l.u) *opt.log << "  u[mean " << l.u->mean << " min " << l.u->min << " max " << l.u->max << "]";
    *opt.log << "\n";
    if (l.improved) {
      Json mj = meta;
      mj["epoch"] = l.epoch;
      mj["criterion"] = l.criterion;
      model::save_checkpoint(cur, names, ckpt, mj.dump());
    }
  };
  auto r = objectives::pretrain(m, d.train, d.val, pc, on_epoch, criterion);
  if (!log) throw IoError("failed writing training log");
  if (r.skipped_stays) *opt.log << "note: " << r.skipped_stays << " stays too short for two views were skipped\n";
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  *opt.log << "pretrain: best epoch " << r.best_epoch << " (criterion " << r.best_criterion << "), " << secs
           << " s -> " << ckpt << "\n";
}

// ---- eval ---------------------------------------------------------------------

struct EvalArgs {
  std::string data;
  std::string checkpoint;  // empty with random_init
  bool random_init = false;
};

inline model::Checkpoint<float> open_checkpoint(const std::string& path, const data::Vocabulary& vocab) {
  try {
    return model::load_checkpoint<float>(path, &vocab);
  } catch (const ParseError& e) {
    throw LoadError("checkpoint '" + path + "': " + e.what());
  }
}

inline eval::MetricsReport run_eval(const RunConfig& c, const Common& opt, const EvalArgs& a,
                                    const detail::LoadedData& d) {
  const auto protocol = c.str("eval.protocol");
  model::Model<float> m;
  std::string objective = "random";
  Json pretrain_cfg;
  if (a.random_init) {
    m = model::Model<float>(detail::model_config(c, d.norm.size()), opt.seed);
  } else {
    if (a.checkpoint.empty()) throw ConfigError("eval needs --checkpoint or --random-init");
    auto ck = open_checkpoint(a.checkpoint, d.norm.vocabulary());
    m = std::move(ck.model);
    if (!ck.meta.empty()) {
      auto meta = nlohmann::json::parse(ck.meta, nullptr, false);
      if (meta.is_object() && meta.contains("objective")) objective = meta["objective"].get<std::string>();
      if (meta.is_object() && meta.contains("config")) pretrain_cfg = meta["config"];
    }
  }
  eval::MetricsReport rep;
  if (protocol == "linear") {
    rep = eval::linear_eval(m, d.train, d.test, eval::parse_task(c.str("eval.task")), linear_config(c), opt.seed,
                            opt.threads);
  } else if (protocol == "semi") {
    rep = eval::semi_supervised(m, d.train, d.val, d.test, eval::parse_task(c.str("eval.task")), semi_config(c),
                                opt.seed, opt.threads);
  } else if (protocol == "impute") {
    eval::ImputeConfig ic;
    ic.mask_rate = c.num("impute.mask_rate");
    rep = eval::impute_eval(m, d.test, ic, opt.seed, opt.threads);
  } else {
    throw ConfigError("protocol must be linear, semi or impute; got '" + protocol + "'");
  }
  Json cfg;
  cfg["objective"] = objective;
  cfg["checkpoint"] = a.random_init ? std::string("random-init") : a.checkpoint;
  cfg["data"] = a.data;
  for (const auto& [k, v] : rep.config.items()) cfg[k] = v;
  const auto mj = detail::model_json(m.config());
  for (const auto& [k, v] : mj.items()) cfg[k] = v;
  if (!pretrain_cfg.is_null()) cfg["pretrained_with"] = pretrain_cfg;
  rep.config = std::move(cfg);
  return rep;
}

inline void cmd_eval(const RunConfig& c, const Common& opt, const EvalArgs& a) {
  const auto d = detail::load_data_dir(a.data);
  auto rep = run_eval(c, opt, a, d);
  detail::write_text(opt.out, rep.to_json().dump(2) + "\n");
  *opt.log << "eval: " << rep.protocol << "/" << rep.task << " " << rep.metrics.dump() << " -> " << opt.out << "\n";
}

// ---- impute -------------------------------------------------------------------

struct ImputeArgs {
  std::string data;
  std::string checkpoint;
  std::string queries;
};

// Query lines: {"stay_id": ..., "events": [{"t","f","v"}...], "queries": [{"t","f"}...]}
// with raw values; predictions are written back in raw units.
inline void cmd_impute(const RunConfig&, const Common& opt, const ImputeArgs& a) {
  const auto norm = data::Normalizer::load(detail::join(a.data, "normalizer.json"));
  const auto& vocab = norm.vocabulary();
  auto ck = open_checkpoint(a.checkpoint, vocab);
  std::ifstream in(a.queries);
  if (!in) throw IoError("cannot open '" + a.queries + "'");
  std::ostringstream out;
  std::string line;
  std::size_t n = 0, answered = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto doc = nlohmann::json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw ParseError("malformed JSON", n);
    data::StaySequence stay;
    stay.stay_id = doc.value("stay_id", std::string());
    try {
      for (const auto& ev : doc.value("events", nlohmann::json::array())) {
        const auto f = vocab.at(ev.at("f").get<std::string>());
        const auto& st = norm.stats(f);
        double v = ev.at("v").get<double>();
        if (st.kind == data::FeatureKind::Continuous) v = (v - st.mean) / st.std;
        stay.events.push_back({ev.at("t").get<double>(), v, f});
      }
      stay.sort_events();
      std::vector<eval::Query> qs;
      std::vector<std::string> qnames;
      for (const auto& q : doc.at("queries")) {
        qnames.push_back(q.at("f").get<std::string>());
        qs.push_back({q.at("t").get<double>(), vocab.at(qnames.back())});
      }
      const auto pred = eval::impute(ck.model, stay, qs);
      Json o;
      o["stay_id"] = stay.stay_id;
      o["predictions"] = Json::array();
      for (std::size_t k = 0; k < qs.size(); ++k) {
        const auto& st = norm.stats(qs[k].f);
        const double v = st.kind == data::FeatureKind::Continuous ? pred[k] * st.std + st.mean : pred[k];
        o["predictions"].push_back({{"t", qs[k].t}, {"f", qnames[k]}, {"v", v}});
      }
      out << o.dump() << "\n";
      answered += qs.size();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("query line: ") + e.what(), n);
    }
  }
  detail::write_text(opt.out, out.str());
  *opt.log << "impute: " << answered << " queries -> " << opt.out << "\n";
}

// ---- report -------------------------------------------------------------------

inline std::string cmd_report(const std::vector<std::string>& paths, const Common& opt) {
  std::vector<eval::MetricsReport> reports;
  for (const auto& p : paths) {
    auto j = nlohmann::json::parse(detail::read_text(p), nullptr, false);
    if (j.is_discarded()) throw ParseError("report '" + p + "' is not valid JSON");
    reports.push_back(eval::MetricsReport::from_json(j));
  }
  const auto table = eval::build_table(reports);
  const auto text = eval::render_table(table);
  if (!opt.out.empty()) detail::write_text(opt.out, eval::table_json(table).dump(2) + "\n");
  return text;
}

// ---- grid sweeps ----------------------------------------------------------------

// "key=v1,v2,..." specs -> every combination, first key varying slowest.
inline std::vector<std::vector<std::pair<std::string, std::string>>> grid_points(
    const std::vector<std::string>& specs) {
  std::vector<std::vector<std::pair<std::string, std::string>>> points{{}};
  for (const auto& spec : specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("grid spec must be key=v1,v2,...; got '" + spec + "'");
    const auto key = RunConfig::canonical(spec.substr(0, eq));
    std::vector<std::string> vals;
    std::stringstream ss(spec.substr(eq + 1));
    for (std::string v; std::getline(ss, v, ',');)
      if (!v.empty()) vals.push_back(v);
    if (vals.empty()) throw ConfigError("grid spec '" + spec + "' lists no values");
    std::vector<std::vector<std::pair<std::string, std::string>>> next;
    for (const auto& p : points)
      for (const auto& v : vals) {
        auto q = p;
        q.emplace_back(key, v);
        next.push_back(std::move(q));
      }
    points = std::move(next);
  }
  return points;
}

}  // namespace tgcl::cli
