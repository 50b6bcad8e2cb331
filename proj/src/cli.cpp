#include "scnaps/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "scnaps/config.hpp"
#include "scnaps/errors.hpp"
#include "scnaps/evaluator.hpp"
#include "scnaps/invariants.hpp"
#include "scnaps/oracles.hpp"
#include "scnaps/trainer.hpp"

namespace scnaps::cli {

namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string head;
  std::optional<double> beta;
  bool no_adapt = false;
  bool autoregressive = false;

  std::string checkpoint;
  std::string results;
  bool exact_shots = false;
  std::string variants;
  std::optional<int> folds;
  std::optional<std::size_t> queries;
};

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

void add_common(CLI::App* cmd, Options& o, bool config_required = true) {
  auto* c = cmd->add_option("--config", o.config, "run configuration file");
  if (config_required) c->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--workers", o.workers, "episode-level worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--head", o.head, "mahalanobis|mahalanobis-tr|l2|l1|cosine|dot|linear, optional +p");
  cmd->add_option("--beta", o.beta, "ridge added to every class covariance");
  cmd->add_flag("--no-adapt", o.no_adapt, "disable FiLM task adaptation");
  cmd->add_flag("--autoregressive", o.autoregressive, "condition FiLM on earlier block activations");
}

struct Run {
  config::RunConfig cfg;
  std::vector<config::LoadedFamily> families;
  fs::path out;
};

void apply_head(config::RunConfig& cfg, const std::string& spec) {
  const auto h = heads::parse_head(spec);
  cfg.train.model.head.kind = h.kind;
  cfg.train.model.head.projection = h.projection;
}

Run prepare(const Options& o) {
  Run r;
  r.cfg = config::load_run_config(o.config);
  auto& t = r.cfg.train;
  if (!o.out.empty()) r.cfg.out = o.out;
  if (o.seed) t.seed = *o.seed;
  if (o.workers) t.workers = *o.workers;
  if (!o.head.empty()) apply_head(r.cfg, o.head);
  if (o.beta) t.model.head.beta = *o.beta;
  if (o.no_adapt) t.model.backbone.adapt = false;
  if (o.autoregressive) t.model.backbone.autoregressive = true;
  if (o.folds) r.cfg.eval.folds = *o.folds;
  if (o.queries) r.cfg.eval.oracle_queries = *o.queries;
  if (!o.checkpoint.empty()) r.cfg.eval.checkpoint = fs::absolute(o.checkpoint);
  if (!o.variants.empty()) {
    r.cfg.eval.variants.clear();
    std::stringstream ss(o.variants);
    std::string v;
    while (std::getline(ss, v, ',')) {
      heads::parse_head(v);
      r.cfg.eval.variants.push_back(v);
    }
  }

  r.families = config::load_families(r.cfg);
  t.model.validate();
  t.protocol.validate();
  r.out = r.cfg.out;
  fs::create_directories(r.out);
  std::ofstream resolved(r.out / "config.resolved.ini");
  resolved << config::render_run_config(r.cfg);
  if (!resolved) throw IoError("cannot write " + (r.out / "config.resolved.ini").string());
  return r;
}

trainer::TrainResult train_into(const trainer::TrainConfig& tc, const std::vector<episodes::TaskSource>& train,
                                const std::vector<episodes::TaskSource>& validation, const fs::path& dir,
                                std::ostream& out) {
  fs::create_directories(dir);
  auto result = trainer::train(tc, train, validation, [&](const trainer::LogRow& row) {
    if (row.validation_accuracy)
      out << "episode " << row.episode << " loss " << row.loss << " validation " << pct(*row.validation_accuracy)
          << "%" << std::endl;
  });
  save_checkpoint(result.best, dir / "checkpoint.bin");
  trainer::write_log_csv(result.log, dir / "train_log.csv");
  evaluator::write_param_counts_csv(count_trainable_params(result.best.params), dir / "param_counts.csv");
  out << "best validation accuracy " << pct(result.best.validation_accuracy) << "% at episode "
      << result.best.episode << std::endl;
  return result;
}

int cmd_gen_data(const Options& o, std::ostream& out) {
  Run r = prepare(o);
  const fs::path dir = r.out / "data";
  fs::create_directories(dir);
  for (const auto& f : r.families) {
    const std::string& name = f.config.name;
    data::write_csv(f.dataset, dir / (name + ".csv"));
    if (f.dataset.ground_truth()) data::write_ground_truth(f.dataset, dir / (name + ".ground_truth.json"));
    std::ofstream split(dir / (name + ".split.csv"));
    split << "class,part\n";
    if (f.config.held_out) {
      for (int c : f.dataset.classes()) split << c << ",test\n";
    } else {
      for (const char* part : {"train", "validation", "test"})
        for (int c : f.split.part(part)) split << c << ',' << part << '\n';
    }
    if (!split) throw IoError("cannot write split file for family '" + name + "'");
    out << name << ": " << f.dataset.size() << " examples, " << f.dataset.classes().size() << " classes, "
        << f.dataset.dim() << " features" << std::endl;
  }
  return 0;
}

int cmd_train(const Options& o, std::ostream& out) {
  Run r = prepare(o);
  train_into(r.cfg.train, config::train_sources(r.families), config::validation_sources(r.families), r.out, out);
  return 0;
}

std::vector<std::pair<std::string, evaluator::Summary>> evaluate_families(const Run& r, const Model& model,
                                                                          const fs::path& dir,
                                                                          std::vector<evaluator::AblationEntry>* entries,
                                                                          const std::string& variant) {
  std::vector<std::pair<std::string, evaluator::Summary>> rows;
  std::vector<double> all;
  for (std::size_t i = 0; i < r.families.size(); ++i) {
    const auto stream = config::test_stream(r.cfg, r.families, i);
    auto ev = evaluator::evaluate(model, stream, r.cfg.eval.episodes, r.cfg.train.workers);
    const std::string& name = r.families[i].config.name;
    evaluator::write_results(ev.results, dir / ("results." + name + ".jsonl"));
    for (const auto& res : ev.results) all.push_back(res.accuracy);
    rows.emplace_back(name, ev.summary);
    if (entries) entries->push_back({variant, name, std::move(ev)});
  }
  if (r.families.size() > 1) rows.emplace_back("overall", evaluator::summarize(all));
  evaluator::write_summary_csv(rows, dir / "summary.csv");
  return rows;
}

int cmd_eval(const Options& o, std::ostream& out) {
  Run r = prepare(o);
  const fs::path path = r.cfg.eval.checkpoint.empty() ? r.out / "checkpoint.bin" : r.cfg.eval.checkpoint;
  const Checkpoint ck = load_checkpoint(path);
  if (ck.config_fingerprint != r.cfg.train.model.fingerprint())
    throw ConfigError("checkpoint " + path.string() + " was trained with a different model configuration");
  const Model model(r.cfg.train.model, ck.params);
  for (const auto& [name, s] : evaluate_families(r, model, r.out, nullptr, ""))
    out << name << ": " << pct(s.mean) << "% +/- " << pct(s.ci_halfwidth) << " over " << s.count << " tasks"
        << std::endl;
  return 0;
}

int cmd_curves(const Options& o, std::ostream& out) {
  evaluator::ShotGrouping grouping = o.exact_shots ? evaluator::ShotGrouping::exact : evaluator::ShotGrouping::buckets;
  fs::path dir = o.out.empty() ? fs::path("curves") : fs::path(o.out);
  if (!o.config.empty()) {
    const auto cfg = config::load_run_config(o.config);
    if (!o.exact_shots) grouping = cfg.eval.shot_grouping;
    if (o.out.empty()) dir = cfg.out;
  }
  const auto results = evaluator::read_results(o.results);
  if (results.empty()) throw ConfigError("results file " + o.results + " holds no episodes");
  fs::create_directories(dir);
  {
    std::ofstream resolved(dir / "config.resolved.ini");
    resolved << "[curves]\nresults = " << fs::absolute(o.results).string()
             << "\nshot_grouping = " << (grouping == evaluator::ShotGrouping::exact ? "exact" : "buckets") << "\n";
  }
  const auto shots = evaluator::accuracy_by_shots(results, grouping);
  const auto ways = evaluator::accuracy_by_ways(results);
  evaluator::write_curve_csv(shots, dir / "shots.csv");
  evaluator::write_curve_csv(ways, dir / "ways.csv");
  out << "shots:";
  for (const auto& p : shots) out << ' ' << p.group << '=' << pct(p.mean_accuracy);
  out << "\nways:";
  for (const auto& p : ways) out << ' ' << p.group << '=' << pct(p.mean_accuracy);
  out << std::endl;
  return 0;
}

int cmd_ablate(const Options& o, std::ostream& out) {
  Run r = prepare(o);
  std::vector<evaluator::AblationEntry> entries;
  for (const auto& variant : r.cfg.eval.variants) {
    out << "== " << variant << std::endl;
    Run v = r;
    apply_head(v.cfg, variant);
    v.families = config::load_families(v.cfg);
    const auto result = train_into(v.cfg.train, config::train_sources(v.families),
                                   config::validation_sources(v.families), r.out / variant, out);
    const Model model(v.cfg.train.model, result.best.params);
    evaluate_families(v, model, r.out / variant, &entries, variant);
  }
  const auto table = evaluator::ablation_table(entries);
  evaluator::write_ablation_csv(table, r.out / "ablation.csv");
  for (std::size_t i = 0; i < table.variants.size(); ++i) {
    out << table.variants[i];
    for (std::size_t f = 0; f < table.families.size(); ++f)
      out << "  " << table.families[f] << ' ' << pct(table.cells[i][f].mean) << "+/-"
          << pct(table.cells[i][f].ci_halfwidth);
    out << std::endl;
  }
  return 0;
}

int cmd_xval(const Options& o, std::ostream& out) {
  Run r = prepare(o);
  std::vector<std::string> names;
  for (const auto& f : r.families)
    if (!f.config.held_out) names.push_back(f.config.name);
  const auto folds = data::kfold_splits(names, r.cfg.eval.folds, r.cfg.train.seed);

  std::ofstream csv(r.out / "xval.csv");
  csv << "fold,family,role,mean_accuracy,ci_halfwidth,count\n";
  for (const auto& fold : folds) {
    out << "== fold " << fold.index << std::endl;
    const fs::path dir = r.out / ("fold" + std::to_string(fold.index));
    const auto result = train_into(r.cfg.train, config::train_sources(r.families, &fold.in_domain),
                                   config::validation_sources(r.families, &fold.in_domain), dir, out);
    const Model model(r.cfg.train.model, result.best.params);
    for (std::size_t i = 0; i < r.families.size(); ++i) {
      const auto& f = r.families[i];
      const bool held = std::find(fold.held_out.begin(), fold.held_out.end(), f.config.name) != fold.held_out.end();
      const bool in = std::find(fold.in_domain.begin(), fold.in_domain.end(), f.config.name) != fold.in_domain.end();
      const std::vector<int>& classes = held || f.config.held_out ? f.dataset.classes() : f.split.test;
      const episodes::EpisodeStream stream({{f.config.name, &f.dataset, classes}}, r.cfg.train.protocol,
                                           r.cfg.eval.episodes, derive_seed(r.cfg.train.seed, 1000 + i));
      const auto ev = evaluator::evaluate(model, stream, r.cfg.eval.episodes, r.cfg.train.workers);
      const char* role = in ? "in_domain" : "out_of_domain";
      char line[160];
      std::snprintf(line, sizeof line, "%.17g,%.17g,%zu", ev.summary.mean, ev.summary.ci_halfwidth,
                    ev.summary.count);
      csv << fold.index << ',' << f.config.name << ',' << role << ',' << line << '\n';
      out << f.config.name << " (" << role << "): " << pct(ev.summary.mean) << "% +/- "
          << pct(ev.summary.ci_halfwidth) << std::endl;
    }
  }
  if (!csv) throw IoError("failed writing xval.csv");
  return 0;
}

int cmd_oracle(const Options& o, std::ostream& out, std::ostream& err) {
  Run r = prepare(o);
  std::vector<oracle::OracleRow> rows;
  for (std::size_t i = 0; i < r.families.size(); ++i) {
    const auto& f = r.families[i];
    if (!f.dataset.ground_truth()) continue;
    const std::uint64_t seed = derive_seed(r.cfg.train.seed, 2000 + i);
    const auto bayes = oracle::bayes_optimal_accuracy(f.dataset, f.test_classes(), r.cfg.train.protocol,
                                                      r.cfg.eval.oracle_queries, seed);
    const auto iso = oracle::isotropic_discriminant_accuracy(f.dataset, f.test_classes(), r.cfg.train.protocol,
                                                             r.cfg.eval.oracle_queries, seed);
    rows.push_back({f.config.name, bayes});
    rows.push_back({f.config.name + "/isotropic", iso});
    out << f.config.name << ": bayes " << pct(bayes.accuracy) << "% +/- " << pct(bayes.ci_halfwidth)
        << ", isotropic " << pct(iso.accuracy) << "% +/- " << pct(iso.ci_halfwidth) << std::endl;
  }
  oracle::write_oracle_csv(rows, r.out / "oracle.csv");

  const auto checks = invariants::run_suite(r.cfg.eval.invariant_instances, r.cfg.train.seed);
  invariants::write_report_csv(checks, r.out / "invariants.csv");
  std::size_t failed = 0;
  for (const auto& c : checks) {
    out << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << std::endl;
    failed += !c.passed;
  }
  if (failed) {
    err << "error: invariant: " << failed << " of " << checks.size() << " checks failed" << std::endl;
    return 1;
  }
  return 0;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot classification with covariance-regularized Mahalanobis heads", "scnaps"};
  app.require_subcommand(1, 1);
  Options o;

  auto* gen = app.add_subcommand("gen-data", "write datasets, ground truth and class splits");
  auto* train = app.add_subcommand("train", "meta-train and keep the best checkpoint");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on every family's test episodes");
  auto* ablate = app.add_subcommand("ablate", "train and evaluate each head variant on paired episodes");
  auto* curves = app.add_subcommand("curves", "accuracy-by-shots and accuracy-by-ways CSVs from a results file");
  auto* xval = app.add_subcommand("xval", "leave-families-out cross-validation");
  auto* oracle_cmd = app.add_subcommand("oracle", "Bayes ceilings and the invariant suite");
  for (auto* cmd : {gen, train, eval, ablate, xval, oracle_cmd}) add_common(cmd, o);
  add_common(curves, o, false);
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint file (default OUT/checkpoint.bin)");
  curves->add_option("--results", o.results, "results file written by eval")->required()->check(CLI::ExistingFile);
  curves->add_flag("--exact-shots", o.exact_shots, "group by exact shot count instead of buckets");
  ablate->add_option("--variants", o.variants, "comma-separated head variants");
  xval->add_option("--folds", o.folds, "number of folds")->check(CLI::PositiveNumber);
  oracle_cmd->add_option("--queries", o.queries, "Monte-Carlo queries per family")->check(CLI::PositiveNumber);

  std::vector<const char*> argv{"scnaps"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << one_line(e.what()) << std::endl;
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(o, out);
    if (train->parsed()) return cmd_train(o, out);
    if (eval->parsed()) return cmd_eval(o, out);
    if (ablate->parsed()) return cmd_ablate(o, out);
    if (curves->parsed()) return cmd_curves(o, out);
    if (xval->parsed()) return cmd_xval(o, out);
    if (oracle_cmd->parsed()) return cmd_oracle(o, out, err);
  } catch (const Error& e) {
    err << "error: " << e.kind() << ": " << one_line(e.what()) << std::endl;
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error: io: " << one_line(e.what()) << std::endl;
    return 1;
  } catch (const std::exception& e) {
    err << "error: internal: " << one_line(e.what()) << std::endl;
    return 1;
  }
  return 2;
}

}  // namespace scnaps::cli
