// tgcl: synth | ingest | pretrain | eval | impute | report
//
// Config resolution: defaults, then --config file, then --set key=value in
// order, then the dedicated flags (--objective, --epochs, ...). --grid
// key=v1,v2 runs pretrain or eval once per combination.

#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tgcl/cli/commands.hpp"

namespace {

using namespace tgcl::cli;

struct Shared {
  std::string config, out;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::vector<std::string> sets, grid;
  std::optional<std::string> objective, protocol, task, select_by;
  std::optional<double> label_fraction;
  std::optional<std::size_t> epochs, batch_size;
};

void add_shared(CLI::App* sub, Shared& s, bool out_required = true) {
  sub->add_option("--config", s.config, "key=value config file");
  sub->add_option("--seed", s.seed, "global seed");
  auto* o = sub->add_option("--out", s.out, "output path");
  if (out_required) o->required();
  sub->add_option("--threads", s.threads, "worker threads")->check(CLI::PositiveNumber);
  sub->add_option("--set", s.sets, "config override key=value (repeatable)");
}

RunConfig resolve(const Shared& s) {
  RunConfig c;
  if (!s.config.empty()) c.load_file(s.config);
  for (const auto& a : s.sets) c.set_assignment(a);
  if (s.objective) c.set("pretrain.objective", *s.objective);
  if (s.select_by) c.set("pretrain.select_by", *s.select_by);
  if (s.epochs) c.set("pretrain.epochs", std::to_string(*s.epochs));
  if (s.batch_size) c.set("pretrain.batch_size", std::to_string(*s.batch_size));
  if (s.protocol) c.set("eval.protocol", *s.protocol);
  if (s.task) c.set("eval.task", *s.task);
  if (s.label_fraction) {
    std::ostringstream v;
    v.precision(17);
    v << *s.label_fraction;
    c.set("semi.label_fraction", v.str());
  }
  return c;
}

Common common(const Shared& s) {
  Common c;
  c.out = s.out;
  c.seed = s.seed;
  c.threads = s.threads;
  return c;
}

template <class Run>
void sweep(const Shared& s, const std::string& out_pattern, Run run) {
  const auto base = resolve(s);
  if (s.grid.empty()) {
    run(base, common(s));
    return;
  }
  const auto points = grid_points(s.grid);
  detail::ensure_dir(s.out);
  Json index = Json::array();
  for (std::size_t k = 0; k < points.size(); ++k) {
    RunConfig c = base;
    Json p;
    for (const auto& [key, v] : points[k]) {
      c.set(key, v);
      p[key] = v;
    }
    Common opt = common(s);
    opt.out = detail::join(s.out, out_pattern + std::to_string(k) + (out_pattern == "report_" ? ".json" : ""));
    std::cerr << "grid " << k + 1 << "/" << points.size() << ": " << p.dump() << "\n";
    run(c, opt);
    index.push_back({{"index", k}, {"out", opt.out}, {"values", p}});
  }
  detail::write_text(detail::join(s.out, "grid.json"), index.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tgcl: contrastive and masked pretraining for irregular clinical time series"};
  app.require_subcommand(1);
  Shared s;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset directory");
  add_shared(synth, s);

  IngestArgs ia;
  auto* ingest = app.add_subcommand("ingest", "window, split and normalize a JSONL event file");
  add_shared(ingest, s);
  ingest->add_option("--input", ia.input, "events JSONL")->required();
  ingest->add_option("--features", ia.features, "feature kinds/bounds JSON");
  ingest->add_option("--normalizer", ia.normalizer, "reuse this normalizer.json");

  PretrainArgs pa;
  auto* pretrain = app.add_subcommand("pretrain", "pretrain an encoder");
  add_shared(pretrain, s);
  pretrain->add_option("--data", pa.data, "dataset directory")->required();
  pretrain->add_option("--objective", s.objective, "gcl | simclr | masked | combined | forecast");
  pretrain->add_option("--epochs", s.epochs);
  pretrain->add_option("--batch-size", s.batch_size);
  pretrain->add_option("--select-by", s.select_by, "val-loss | linear-eval");
  pretrain->add_option("--grid", s.grid, "sweep key=v1,v2,... (repeatable)");

  EvalArgs ea;
  auto* evalc = app.add_subcommand("eval", "run an evaluation protocol and write a report");
  add_shared(evalc, s);
  evalc->add_option("--data", ea.data, "dataset directory")->required();
  evalc->add_option("--checkpoint", ea.checkpoint);
  evalc->add_flag("--random-init", ea.random_init, "evaluate a freshly initialized encoder");
  evalc->add_option("--protocol", s.protocol, "linear | semi | impute");
  evalc->add_option("--task", s.task, "mortality | phenotype");
  evalc->add_option("--label-fraction", s.label_fraction);
  evalc->add_option("--grid", s.grid, "sweep key=v1,v2,... (repeatable)");

  ImputeArgs ima;
  auto* impute = app.add_subcommand("impute", "answer imputation queries");
  add_shared(impute, s);
  impute->add_option("--data", ima.data, "dataset directory (for the normalizer)")->required();
  impute->add_option("--checkpoint", ima.checkpoint)->required();
  impute->add_option("--queries", ima.queries, "query JSONL")->required();

  std::vector<std::string> paths;
  auto* report = app.add_subcommand("report", "tabulate report files");
  add_shared(report, s, false);
  report->add_option("reports", paths, "report JSON files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      cmd_synth(resolve(s), common(s));
    } else if (ingest->parsed()) {
      cmd_ingest(resolve(s), common(s), ia);
    } else if (pretrain->parsed()) {
      sweep(s, "grid_", [&](const RunConfig& c, const Common& o) { cmd_pretrain(c, o, pa); });
    } else if (evalc->parsed()) {
      sweep(s, "report_", [&](const RunConfig& c, const Common& o) { cmd_eval(c, o, ea); });
    } else if (impute->parsed()) {
      cmd_impute(resolve(s), common(s), ima);
    } else if (report->parsed()) {
      std::cout << cmd_report(paths, common(s));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(std::current_exception());
  }
  return 0;
}
