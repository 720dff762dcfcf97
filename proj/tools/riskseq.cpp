// Command-line front end: one subcommand per pipeline stage plus
// `reproduce-all`, which chains every stage under a single seed.
//
// Configuration comes from a flat JSON file (--config) whose keys mirror the
// long flags; flags override file values, which override built-in defaults.
// Unknown config keys are rejected. The resolved config hash is echoed on
// stdout and embedded in every report document.
//
// Exit codes: 0 success; 1 an experiment ran but its result checks failed
// (or an unexpected runtime error); 2 usage, schema, or IO problems.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "riskseq/common.hpp"
#include "riskseq/eval.hpp"
#include "riskseq/experiments.hpp"
#include "riskseq/gbdt.hpp"
#include "riskseq/models.hpp"
#include "riskseq/portfolio.hpp"
#include "riskseq/seqgen.hpp"
#include "riskseq/serve.hpp"
#include "riskseq/synthgen.hpp"
#include "riskseq/tabprep.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace riskseq;

namespace {

// Files the active subcommand intends to write. On failure, files this run
// created are removed; files that already existed and were overwritten get a
// side marker instead of being deleted. reproduce-all marks its whole output
// directory with an INCOMPLETE file.
struct OutputGuard {
  struct Tracked {
    std::string path;
    bool existed = false;
    fs::file_time_type mtime{};
  };
  std::vector<Tracked> files;
  std::string marker_dir;

  void track(const std::string& p) {
    if (p.empty()) return;
    Tracked t;
    t.path = p;
    std::error_code ec;
    t.existed = fs::exists(p, ec) && !ec;
    if (t.existed) t.mtime = fs::last_write_time(p, ec);
    files.push_back(std::move(t));
  }
  void on_failure(const std::string& msg) {
    for (const auto& t : files) {
      std::error_code ec;
      if (!t.existed) {
        fs::remove(t.path, ec);
        continue;
      }
      auto now_mtime = fs::last_write_time(t.path, ec);
      if (!ec && now_mtime != t.mtime) {
        std::ofstream m(t.path + ".incomplete");
        m << msg << "\n";
      }
    }
    if (!marker_dir.empty() && fs::exists(marker_dir)) {
      std::ofstream m(fs::path(marker_dir) / "INCOMPLETE");
      m << msg << "\n";
    }
  }
};

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw SchemaError("config file " + path + ": " + e.what());
  }
  if (!j.is_object()) throw SchemaError("config file must be a flat JSON object: " + path);
  return j;
}

struct KeyBinding {
  CLI::Option* opt = nullptr;  // flag with count() > 0 wins over the file
  std::function<void(const json&)> set;
};

void apply_config(const json& j, const std::map<std::string, KeyBinding>& keys) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto k = keys.find(it.key());
    if (k == keys.end()) throw SchemaError("unknown config key: " + it.key());
    if (k->second.opt && k->second.opt->count() > 0) continue;
    k->second.set(it.value());
  }
}

json metric_json(const metrics::MetricReport& m) {
  return json{{"gini", m.gini},           {"recall_at_fraction", m.recall_at_fraction},
              {"fraction", m.fraction},   {"n", m.n},
              {"n_positive", m.n_positive}, {"absent", m.absent}};
}

json report_header(const char* format, const exp::ExperimentConfig& cfg, std::uint64_t seed) {
  return json{{"format", format},         {"version", 1},
              {"library", kLibraryVersion}, {"config_hash", cfg.config_hash()},
              {"seed", seed},             {"config", cfg.to_json()}};
}

// ---------------------------------------------------------------------------
// Subcommand bodies. Each returns the process exit code.

int cmd_synth(const exp::ExperimentConfig& cfg, std::uint64_t seed, const std::string& out,
              const std::string& csv, double drift, int drift_start) {
  PortfolioConfig pc = cfg.portfolio_config(seed);
  pc.drift_strength = drift;
  pc.drift_start_month = drift_start;
  Portfolio p = synth::generate_portfolio(pc);
  save_portfolio_jsonl(p, out);
  if (!csv.empty()) save_portfolio_csv(p, csv);
  std::size_t defaulters = 0;
  for (const auto& m : p.members)
    if (m.default_month) ++defaulters;
  std::cout << "wrote " << out << ": " << p.members.size() << " members, " << pc.months
            << " months, " << defaulters << " defaulters\n";
  return 0;
}

int cmd_prep(const exp::ExperimentConfig& cfg, std::uint64_t seed,
             const std::string& portfolio_path, const std::string& out, int end) {
  Portfolio p = load_portfolio_jsonl(portfolio_path);
  const int base_end = end > 0 ? end : p.config.months;
  auto rows = seq::build_last_month_rows(p, base_end, cfg.n_windows, exp::sample_seed(seed));

  const std::uint64_t spl = exp::split_seed(seed);
  std::vector<std::size_t> train_idx;
  for (std::size_t i = 0; i < rows.member_ids.size(); ++i)
    if (!exp::is_validation_member(rows.member_ids[i], spl, cfg.valid_fraction))
      train_idx.push_back(i);
  if (train_idx.empty()) throw ValidationError("no training rows after the member split");

  DataTable train_table = exp::subset_table(rows.table, train_idx);
  auto artifacts = prep::fit(train_table, gbdt::make_splits_provider(cfg.gbdt), cfg.laplace_k);
  prep::save_artifacts(artifacts, out);
  std::cout << "wrote " << out << ": fit on " << train_table.n_rows() << " rows, "
            << artifacts.n_outputs() << " output features\n";
  return 0;
}

int cmd_gbdt(const exp::ExperimentConfig& cfg, std::uint64_t seed,
             const std::string& portfolio_path, const std::string& artifacts_path,
             const std::string& out, const std::string& report_path, int end) {
  Portfolio p = load_portfolio_jsonl(portfolio_path);
  auto artifacts = prep::load_artifacts(artifacts_path);
  const int base_end = end > 0 ? end : p.config.months;
  auto rows = seq::build_last_month_rows(p, base_end, cfg.n_windows, exp::sample_seed(seed));

  const std::uint64_t spl = exp::split_seed(seed);
  std::vector<std::size_t> train_idx, valid_idx;
  for (std::size_t i = 0; i < rows.member_ids.size(); ++i) {
    if (exp::is_validation_member(rows.member_ids[i], spl, cfg.valid_fraction))
      valid_idx.push_back(i);
    else
      train_idx.push_back(i);
  }
  if (train_idx.empty() || valid_idx.empty())
    throw ValidationError("member split left one side empty; adjust valid_fraction");

  DataTable train_table = exp::subset_table(rows.table, train_idx);
  DataTable valid_table = exp::subset_table(rows.table, valid_idx);
  auto train_X = prep::apply(train_table, artifacts);
  auto valid_X = prep::apply(valid_table, artifacts);

  auto model = gbdt::fit(train_X, train_table.labels, cfg.gbdt);
  auto scores = gbdt::predict(model, valid_X);
  auto rep = metrics::report(scores, valid_table.labels, cfg.recall_fraction);

  gbdt::save_model(model, out);
  if (!report_path.empty()) {
    json doc = report_header("riskseq-gbdt-eval", cfg, seed);
    doc["model"] = out;
    doc["valid"] = metric_json(rep);
    exp::write_json(doc, report_path);
  }
  std::cout << "wrote " << out << ": " << model.trees.size() << " trees, valid gini "
            << rep.gini << ", recall@" << rep.fraction << " " << rep.recall_at_fraction << "\n";
  return 0;
}

int cmd_seq(const exp::ExperimentConfig& cfg, std::uint64_t seed,
            const std::string& portfolio_path, const std::string& artifacts_path,
            const std::string& out_train, const std::string& out_valid, int end) {
  Portfolio p = load_portfolio_jsonl(portfolio_path);
  auto artifacts = prep::load_artifacts(artifacts_path);
  const int base_end = end > 0 ? end : p.config.months;

  auto full = seq::build_dataset(p, artifacts, base_end, cfg.n_windows, exp::sample_seed(seed));
  const std::uint64_t spl = exp::split_seed(seed);
  auto train_ds = exp::member_subset(full, spl, cfg.valid_fraction, false);
  auto valid_ds = exp::member_subset(full, spl, cfg.valid_fraction, true);
  if (train_ds.samples.empty() || valid_ds.samples.empty())
    throw ValidationError("member split left one side empty; adjust valid_fraction");

  seq::save_dataset(train_ds, out_train);
  seq::save_dataset(valid_ds, out_valid);
  std::cout << "wrote " << out_train << " (" << train_ds.samples.size() << " windows) and "
            << out_valid << " (" << valid_ds.samples.size() << " windows), "
            << full.n_features << " features\n";
  return 0;
}

int cmd_train(const exp::ExperimentConfig& cfg, std::uint64_t seed,
              const std::string& train_path, const std::string& valid_path,
              const std::string& kind, const std::string& out, const std::string& log_path) {
  auto train_ds = seq::load_dataset(train_path);
  auto valid_ds = seq::load_dataset(valid_path);

  models::ArchitectureSpec spec;
  spec.kind = kind;
  spec.n_features = train_ds.n_features;
  models::TrainConfig tc = cfg.train;
  tc.seed = seed;

  auto res = models::train(spec, train_ds, valid_ds, tc);
  models::save_checkpoint(res.checkpoint, out);
  if (!log_path.empty()) models::write_training_log(res.log, log_path);
  std::cout << "wrote " << out << ": " << kind << ", " << res.checkpoint.params.size()
            << " params, best epoch " << res.checkpoint.best_epoch << ", valid gini "
            << res.checkpoint.valid_gini << "\n";
  return 0;
}

int cmd_eval(const exp::ExperimentConfig& cfg, std::uint64_t seed, const std::string& ckpt_path,
             const std::string& data_path, const std::string& report_path,
             double exposure_threshold) {
  auto ckpt = models::load_checkpoint(ckpt_path);
  auto ds = seq::load_dataset(data_path);
  auto records = models::score(ckpt, ds);

  auto overall = metrics::report(records, cfg.recall_fraction);
  auto high_exp = metrics::segment_high_exposure(records, exposure_threshold, cfg.recall_fraction);

  bool binnable = true;
  for (const auto& r : records)
    if (r.label == 1 && !r.months_to_default) binnable = false;

  json doc = report_header("riskseq-eval", cfg, seed);
  doc["model"] = ckpt.spec.kind;
  doc["checkpoint"] = ckpt_path;
  doc["data"] = data_path;
  doc["overall"] = metric_json(overall);
  doc["high_exposure"] = metric_json(high_exp);
  doc["high_exposure"]["threshold"] = exposure_threshold;
  if (binnable) {
    auto bins = metrics::bin_by_default_date(records, cfg.recall_fraction);
    doc["bins"] = json{{"near_0_6", metric_json(bins.near_term)},
                       {"mid_6_12", metric_json(bins.mid_term)},
                       {"long_12_18", metric_json(bins.long_term)}};
  }
  if (!report_path.empty()) exp::write_json(doc, report_path);

  std::cout << ckpt.spec.kind << " on " << data_path << ": gini " << overall.gini
            << ", recall@" << overall.fraction << " " << overall.recall_at_fraction
            << " (n=" << overall.n << ", positives=" << overall.n_positive << ")\n";
  if (high_exp.absent)
    std::cout << "high-exposure segment: no rows above " << exposure_threshold << "\n";
  else
    std::cout << "high-exposure segment (> " << exposure_threshold << "): gini "
              << high_exp.gini << " over " << high_exp.n << " rows\n";
  return 0;
}

int cmd_sweep(const exp::ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds,
              const std::vector<int>& lengths, const std::string& out, const std::string& csv) {
  std::vector<std::vector<exp::SeqlenPoint>> runs;
  for (std::uint64_t s : seeds) {
    auto data = exp::prepare(cfg, s);
    runs.push_back(exp::run_seqlen(cfg, data, lengths, s));
    std::cout << "seed " << s << ":";
    for (const auto& pt : runs.back()) std::cout << " L" << pt.length << "=" << pt.gini;
    std::cout << "\n";
  }
  json doc = exp::seqlen_report(cfg, seeds, runs);
  exp::write_json(doc, out);
  if (!csv.empty()) exp::write_seqlen_csv(seeds, runs, csv);
  std::cout << "wrote " << out << "\n";

  const json& checks = doc["checks"];
  if (checks.contains("g12_ge_g3")) {
    const bool ok = checks["g12_ge_g3"].get<bool>() && checks["g3_ge_g1"].get<bool>() &&
                    checks["total_ge_margin"].get<bool>();
    std::cout << "monotone-improvement check: " << (ok ? "pass" : "fail") << "\n";
    return ok ? 0 : 1;
  }
  return 0;
}

int cmd_bins(const exp::ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds,
             const std::string& out, const std::string& table1) {
  std::vector<exp::OrderingResult> runs;
  for (std::uint64_t s : seeds) {
    runs.push_back(exp::run_ordering(cfg, s));
    const auto& r = runs.back();
    std::cout << "seed " << s << ": gbdt=" << r.gbdt.valid_gini << " mlp=" << r.mlp.valid_gini
              << " lstm=" << r.lstm.valid_gini << " tcn=" << r.tcn.valid_gini
              << " ens=" << r.ensemble_gini << " gap_near=" << r.gap_near
              << " gap_long=" << r.gap_long << "\n";
  }
  json t2 = exp::bins_report(cfg, runs);
  exp::write_json(t2, out);
  if (!table1.empty()) exp::write_json(exp::ordering_report(cfg, runs), table1);
  std::cout << "wrote " << out << "\n";

  const bool ok = t2["checks"]["gap_long_exceeds_gap_near"].get<bool>();
  std::cout << "gap-widens-with-horizon check: " << (ok ? "pass" : "fail") << "\n";
  return ok ? 0 : 1;
}

int cmd_online(const exp::ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds,
               const std::string& out) {
  std::vector<exp::OnlineResult> runs;
  for (std::uint64_t s : seeds) {
    runs.push_back(exp::run_online(cfg, s));
    const auto& r = runs.back();
    std::cout << "seed " << s << ": base=" << r.base_valid_gini
              << " stale=" << r.base_on_drift_gini << " finetuned=" << r.finetuned_gini
              << " reinit=" << r.reinit_gini << "\n";
  }
  json doc = exp::online_report(cfg, runs);
  exp::write_json(doc, out);
  std::cout << "wrote " << out << "\n";

  const bool ok = doc["checks"]["finetuned_at_least_reinit"].get<bool>();
  std::cout << "fine-tune-beats-reinit check: " << (ok ? "pass" : "fail") << "\n";
  return ok ? 0 : 1;
}

int cmd_serve_bench(const exp::ExperimentConfig& cfg, std::uint64_t seed,
                    const std::string& model_path, const std::string& artifacts_path,
                    const std::string& store_path, const std::string& portfolio_path,
                    int calls, const std::string& out_csv, bool cached, bool service,
                    const std::string& save_store) {
  auto artifacts = prep::load_artifacts(artifacts_path);
  auto ckpt = models::load_checkpoint(model_path);
  serve::SequenceStore store(artifacts, ckpt);

  std::optional<Portfolio> p;
  if (!portfolio_path.empty()) p = load_portfolio_jsonl(portfolio_path);

  const std::size_t n_store = std::size_t(std::max(cfg.latency_store_members, 1));
  if (!store_path.empty())
    store.load_entries(store_path);
  else if (p)
    exp::preload_store(store, *p, artifacts, n_store, exp::sample_seed(seed));

  if (!save_store.empty()) {
    store.save_entries(save_store);
    std::cout << "wrote " << save_store << ": " << store.n_members() << " member buffers\n";
  }

  if (service) {
    std::size_t served = serve::run_service(store, std::cin, std::cout);
    std::cerr << "served " << served << " requests\n";
    return 0;
  }

  // Bench calls: realistic final-month transactions when a portfolio is
  // given, otherwise deterministic synthetic rows against cold buffers.
  std::vector<serve::RawTransaction> base_calls;
  if (p) {
    const int end = p->config.months;
    const std::size_t n = std::min<std::size_t>(n_store, p->members.size());
    const std::uint64_t smp = exp::sample_seed(seed);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& m = p->members[i];
      const Transaction& txn = seq::sample_month(m, end - 1, smp);
      serve::RawTransaction raw;
      raw.member_id = m.member_id;
      raw.numeric = txn.numeric;
      raw.categorical = txn.categorical;
      raw.ts = txn.ts;
      base_calls.push_back(std::move(raw));
    }
  } else {
    const std::size_t n_num = artifacts.numeric.size();
    const std::size_t n_cat = artifacts.categorical.size();
    for (std::size_t i = 0; i < n_store; ++i) {
      serve::RawTransaction raw;
      raw.member_id = i + 1;
      raw.numeric.resize(n_num);
      for (std::size_t f = 0; f < n_num; ++f)
        raw.numeric[f] = 1.0 + 0.01 * double((i * 7 + f * 13) % 100);
      raw.categorical.resize(n_cat);
      for (std::size_t f = 0; f < n_cat; ++f) raw.categorical[f] = int((i + f) % 3);
      raw.ts = 0.0;
      base_calls.push_back(std::move(raw));
    }
  }
  if (base_calls.empty()) throw ValidationError("no members available for the benchmark");

  std::vector<serve::RawTransaction> bench;
  bench.reserve(std::size_t(calls));
  for (int i = 0; i < calls; ++i) bench.push_back(base_calls[std::size_t(i) % base_calls.size()]);

  auto print_report = [](const char* label, const serve::LatencyReport& rep) {
    std::cout << label << ": n=" << rep.n_calls << " total p50=" << rep.p50.total_us
              << "us p95=" << rep.p95.total_us << "us p99=" << rep.p99.total_us
              << "us (infer p50=" << rep.p50.infer_us << "us)\n";
  };

  auto rep = serve::latency_bench(store, bench, out_csv, false);
  print_report("full path", rep);
  std::cout << "wrote " << out_csv << "\n";
  bool ok = rep.p50.total_us < 10000.0;

  if (cached) {
    if (ckpt.spec.kind != "lstm")
      throw ValidationError("--cached requires an lstm checkpoint, got " + ckpt.spec.kind);
    const std::string cached_csv = out_csv + ".cached.csv";
    auto crep = serve::latency_bench(store, bench, cached_csv, true);
    print_report("cached path", crep);
    std::cout << "wrote " << cached_csv << "\n";
    ok = ok && crep.p50.total_us < 10000.0;
  }
  std::cout << "p50-under-10ms check: " << (ok ? "pass" : "fail") << "\n";
  return ok ? 0 : 1;
}

int cmd_reproduce_all(const exp::ExperimentConfig& cfg, std::uint64_t seed,
                      const std::string& out_dir) {
  json summary = exp::reproduce_all(cfg, seed, out_dir);
  std::cout << "table1 medians:";
  for (auto it = summary["table1"]["medians"].begin(); it != summary["table1"]["medians"].end();
       ++it)
    std::cout << " " << it.key() << "=" << it.value().dump();
  std::cout << "\n";
  std::cout << "bins medians: " << summary["table2"]["medians"].dump() << "\n";
  std::cout << "seqlen medians: " << summary["fig6"]["medians"].dump() << "\n";
  std::cout << "online medians: " << summary["fig7"]["medians"].dump() << "\n";
  std::cout << "serving: " << summary["serving"].dump() << "\n";
  std::cout << "wrote " << (fs::path(out_dir) / "summary.json").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  exp::ExperimentConfig cfg;
  std::uint64_t seed = 42;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<int> lengths{1, 3, 6, 12};
  std::string config_path;
  bool sync_flag = false;

  CLI::App app{"riskseq: monthly credit-risk sequence models, end to end"};
  app.require_subcommand(1);
  app.fallthrough();

  std::map<std::string, KeyBinding> keys;
  auto bind = [&keys](CLI::Option* opt, const std::string& key, auto& target) {
    keys[key] = KeyBinding{opt, [&target, key](const json& v) {
                             try {
                               target = v.get<std::decay_t<decltype(target)>>();
                             } catch (const json::exception&) {
                               throw SchemaError("config key '" + key + "' has the wrong type");
                             }
                           }};
  };

  app.add_option("--config", config_path, "flat JSON config file");

  bind(app.add_option("--seed", seed, "base RNG seed"), "seed", seed);
  bind(app.add_option("--seeds", seeds, "seed list for multi-seed experiments")
           ->delimiter(','),
       "seeds", seeds);
  bind(app.add_option("--lengths", lengths, "sequence lengths for the sweep")->delimiter(','),
       "lengths", lengths);

  bind(app.add_option("--members", cfg.members, "portfolio size"), "members", cfg.members);
  bind(app.add_option("--months", cfg.months, "observed months"), "months", cfg.months);
  bind(app.add_option("--numeric-features", cfg.n_numeric, "numeric feature count"),
       "numeric_features", cfg.n_numeric);
  bind(app.add_option("--categorical-features", cfg.n_categorical, "categorical feature count"),
       "categorical_features", cfg.n_categorical);
  bind(app.add_option("--default-rate", cfg.default_rate, "portfolio default rate"),
       "default_rate", cfg.default_rate);
  bind(app.add_option("--missing-rate", cfg.missing_rate, "numeric missing-cell rate"),
       "missing_rate", cfg.missing_rate);

  bind(app.add_option("--valid-fraction", cfg.valid_fraction, "validation member fraction"),
       "valid_fraction", cfg.valid_fraction);
  bind(app.add_option("--recall-fraction", cfg.recall_fraction, "recall review fraction"),
       "recall_fraction", cfg.recall_fraction);
  bind(app.add_option("--windows", cfg.n_windows, "shifted windows per member"), "windows",
       cfg.n_windows);
  bind(app.add_option("--ensemble-weight", cfg.ensemble_weight, "gbdt weight in the ensemble"),
       "ensemble_weight", cfg.ensemble_weight);
  bind(app.add_option("--laplace-k", cfg.laplace_k, "target-encoding smoothing"), "laplace_k",
       cfg.laplace_k);

  bind(app.add_option("--batch-size", cfg.train.batch_size, "training batch size"), "batch_size",
       cfg.train.batch_size);
  bind(app.add_option("--base-lr", cfg.train.base_lr, "initial learning rate"), "base_lr",
       cfg.train.base_lr);
  bind(app.add_option("--lr-decay", cfg.train.lr_decay, "per-epoch lr decay factor"), "lr_decay",
       cfg.train.lr_decay);
  bind(app.add_option("--max-epochs", cfg.train.max_epochs, "epoch cap"), "max_epochs",
       cfg.train.max_epochs);
  bind(app.add_option("--patience", cfg.train.patience, "early-stopping patience"), "patience",
       cfg.train.patience);
  bind(app.add_option("--loss-mode", cfg.train.loss_mode, "per_step_masked | last_step")
           ->check(CLI::IsMember({"per_step_masked", "last_step"})),
       "loss_mode", cfg.train.loss_mode);
  {
    auto* sync_opt = app.add_flag("--sync", sync_flag, "assemble batches synchronously");
    keys["async_batches"] =
        KeyBinding{sync_opt, [&cfg](const json& v) {
                     try {
                       cfg.train.async_batches = v.get<bool>();
                     } catch (const json::exception&) {
                       throw SchemaError("config key 'async_batches' has the wrong type");
                     }
                   }};
  }

  bind(app.add_option("--gbdt-trees", cfg.gbdt.n_trees, "boosting rounds"), "gbdt_trees",
       cfg.gbdt.n_trees);
  bind(app.add_option("--gbdt-depth", cfg.gbdt.max_depth, "tree depth cap"), "gbdt_depth",
       cfg.gbdt.max_depth);
  bind(app.add_option("--gbdt-learning-rate", cfg.gbdt.learning_rate, "shrinkage"),
       "gbdt_learning_rate", cfg.gbdt.learning_rate);
  bind(app.add_option("--gbdt-min-child-weight", cfg.gbdt.min_child_weight, "min rows per leaf"),
       "gbdt_min_child_weight", cfg.gbdt.min_child_weight);

  bind(app.add_option("--online-months", cfg.online_months, "months in the drifted portfolio"),
       "online_months", cfg.online_months);
  bind(app.add_option("--drift-strength", cfg.drift_strength, "drift strength for online runs"),
       "drift_strength", cfg.drift_strength);
  bind(app.add_option("--drift-start-month", cfg.drift_start_month, "drift onset month"),
       "drift_start_month", cfg.drift_start_month);
  bind(app.add_option("--online-base-end", cfg.online_base_end, "base training window end"),
       "online_base_end", cfg.online_base_end);
  bind(app.add_option("--online-eval-end", cfg.online_eval_end, "drifted evaluation window end"),
       "online_eval_end", cfg.online_eval_end);
  bind(app.add_option("--epochs-per-update", cfg.epochs_per_update, "passes per monthly update"),
       "epochs_per_update", cfg.epochs_per_update);

  bind(app.add_option("--store-members", cfg.latency_store_members, "members in the bench store"),
       "store_members", cfg.latency_store_members);
  bind(app.add_option("--bench-calls", cfg.latency_calls, "benchmark call count"), "bench_calls",
       cfg.latency_calls);

  // --- subcommands ---
  std::string synth_out, synth_csv;
  double synth_drift = 0.0;
  int synth_drift_start = -1;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic portfolio");
  synth_cmd->add_option("--out", synth_out, "portfolio JSONL path")->required();
  synth_cmd->add_option("--csv", synth_csv, "also write a flattened CSV");
  synth_cmd->add_option("--drift", synth_drift, "bake in a drift event of this strength");
  synth_cmd->add_option("--drift-start", synth_drift_start, "drift onset month");

  std::string prep_portfolio, prep_out;
  int prep_end = 0;
  auto* prep_cmd = app.add_subcommand("prep", "fit preprocessing on training members");
  prep_cmd->add_option("--portfolio", prep_portfolio, "portfolio JSONL")->required();
  prep_cmd->add_option("--out", prep_out, "artifacts JSON path")->required();
  prep_cmd->add_option("--end", prep_end, "window end month (default: last observed)");

  std::string gbdt_portfolio, gbdt_artifacts, gbdt_out, gbdt_report;
  int gbdt_end = 0;
  auto* gbdt_cmd = app.add_subcommand("gbdt", "train and evaluate the tree model");
  gbdt_cmd->add_option("--portfolio", gbdt_portfolio, "portfolio JSONL")->required();
  gbdt_cmd->add_option("--artifacts", gbdt_artifacts, "preprocessing artifacts")->required();
  gbdt_cmd->add_option("--out", gbdt_out, "model JSON path")->required();
  gbdt_cmd->add_option("--report", gbdt_report, "metrics report JSON path");
  gbdt_cmd->add_option("--end", gbdt_end, "window end month (default: last observed)");

  std::string seq_portfolio, seq_artifacts, seq_out_train, seq_out_valid;
  int seq_end = 0;
  auto* seq_cmd = app.add_subcommand("seq", "build train/valid sequence datasets");
  seq_cmd->add_option("--portfolio", seq_portfolio, "portfolio JSONL")->required();
  seq_cmd->add_option("--artifacts", seq_artifacts, "preprocessing artifacts")->required();
  seq_cmd->add_option("--out-train", seq_out_train, "training dataset path")->required();
  seq_cmd->add_option("--out-valid", seq_out_valid, "validation dataset path")->required();
  seq_cmd->add_option("--end", seq_end, "window end month (default: last observed)");

  std::string train_train, train_valid, train_kind = "tcn", train_out, train_log;
  auto* train_cmd = app.add_subcommand("train", "train a neural model");
  train_cmd->add_option("--train", train_train, "training dataset")->required();
  train_cmd->add_option("--valid", train_valid, "validation dataset")->required();
  train_cmd->add_option("--kind", train_kind, "mlp | lstm | tcn")
      ->check(CLI::IsMember({"mlp", "lstm", "tcn"}));
  train_cmd->add_option("--out", train_out, "checkpoint JSON path")->required();
  train_cmd->add_option("--log", train_log, "per-epoch training log CSV");

  std::string eval_ckpt, eval_data, eval_report;
  double eval_exposure = synth::kHighExposureThreshold;
  auto* eval_cmd = app.add_subcommand("eval", "score a dataset with a checkpoint");
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint JSON")->required();
  eval_cmd->add_option("--data", eval_data, "sequence dataset")->required();
  eval_cmd->add_option("--report", eval_report, "metrics report JSON path");
  eval_cmd->add_option("--exposure-threshold", eval_exposure, "high-exposure segment cut");

  std::string sweep_out, sweep_csv;
  auto* sweep_cmd = app.add_subcommand("sweep-seqlen", "history-length sweep for the tcn");
  sweep_cmd->add_option("--out", sweep_out, "report JSON path")->required();
  sweep_cmd->add_option("--csv", sweep_csv, "per-seed sweep table CSV");

  std::string bins_out, bins_table1;
  auto* bins_cmd = app.add_subcommand("bins", "model comparison by months-to-default bin");
  bins_cmd->add_option("--out", bins_out, "bins report JSON path")->required();
  bins_cmd->add_option("--table1", bins_table1, "also write the model-ordering report");

  std::string online_out;
  auto* online_cmd = app.add_subcommand("online", "monthly fine-tuning vs re-init under drift");
  online_cmd->add_option("--out", online_out, "report JSON path")->required();

  std::string sb_model, sb_artifacts, sb_store, sb_portfolio, sb_out = "latency.csv",
                                                              sb_save_store;
  int sb_calls = -1;
  bool sb_cached = false, sb_service = false;
  auto* sb_cmd = app.add_subcommand("serve-bench", "latency benchmark / stdin scoring service");
  sb_cmd->add_option("--model", sb_model, "checkpoint JSON")->required();
  sb_cmd->add_option("--artifacts", sb_artifacts, "preprocessing artifacts")->required();
  sb_cmd->add_option("--store", sb_store, "JSONL store snapshot to load");
  sb_cmd->add_option("--portfolio", sb_portfolio, "portfolio for realistic buffers and calls");
  sb_cmd->add_option("--calls", sb_calls, "benchmark call count (default: bench_calls)");
  sb_cmd->add_option("--out", sb_out, "latency CSV path");
  sb_cmd->add_flag("--cached", sb_cached, "also bench the incremental lstm path");
  sb_cmd->add_flag("--service", sb_service, "serve line-delimited JSON requests from stdin");
  sb_cmd->add_option("--save-store", sb_save_store, "persist the store snapshot and continue");

  std::string repro_dir;
  auto* repro_cmd = app.add_subcommand("reproduce-all", "full pipeline under one seed");
  repro_cmd->add_option("--out-dir", repro_dir, "output directory (default: repro-seed<seed>)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  OutputGuard guard;
  try {
    if (!config_path.empty()) apply_config(load_config_file(config_path), keys);
    if (sync_flag) cfg.train.async_batches = false;

    if (cfg.online_eval_end <= cfg.online_base_end)
      throw ValidationError("online_eval_end must exceed online_base_end");
    cfg.online_update_ends.clear();
    for (int e = cfg.online_base_end + 1; e < cfg.online_eval_end; ++e)
      cfg.online_update_ends.push_back(e);

    std::cout << "config " << cfg.config_hash() << " seed " << seed << "\n";

    if (synth_cmd->parsed()) {
      guard.track(synth_out);
      guard.track(synth_csv);
      return cmd_synth(cfg, seed, synth_out, synth_csv, synth_drift, synth_drift_start);
    }
    if (prep_cmd->parsed()) {
      guard.track(prep_out);
      return cmd_prep(cfg, seed, prep_portfolio, prep_out, prep_end);
    }
    if (gbdt_cmd->parsed()) {
      guard.track(gbdt_out);
      guard.track(gbdt_report);
      return cmd_gbdt(cfg, seed, gbdt_portfolio, gbdt_artifacts, gbdt_out, gbdt_report, gbdt_end);
    }
    if (seq_cmd->parsed()) {
      guard.track(seq_out_train);
      guard.track(seq_out_valid);
      return cmd_seq(cfg, seed, seq_portfolio, seq_artifacts, seq_out_train, seq_out_valid,
                     seq_end);
    }
    if (train_cmd->parsed()) {
      guard.track(train_out);
      guard.track(train_log);
      return cmd_train(cfg, seed, train_train, train_valid, train_kind, train_out, train_log);
    }
    if (eval_cmd->parsed()) {
      guard.track(eval_report);
      return cmd_eval(cfg, seed, eval_ckpt, eval_data, eval_report, eval_exposure);
    }
    if (sweep_cmd->parsed()) {
      guard.track(sweep_out);
      guard.track(sweep_csv);
      return cmd_sweep(cfg, seeds, lengths, sweep_out, sweep_csv);
    }
    if (bins_cmd->parsed()) {
      guard.track(bins_out);
      guard.track(bins_table1);
      return cmd_bins(cfg, seeds, bins_out, bins_table1);
    }
    if (online_cmd->parsed()) {
      guard.track(online_out);
      return cmd_online(cfg, seeds, online_out);
    }
    if (sb_cmd->parsed()) {
      guard.track(sb_out);
      guard.track(sb_save_store);
      const int calls = sb_calls >= 0 ? sb_calls : cfg.latency_calls;
      return cmd_serve_bench(cfg, seed, sb_model, sb_artifacts, sb_store, sb_portfolio, calls,
                             sb_out, sb_cached, sb_service, sb_save_store);
    }
    if (repro_cmd->parsed()) {
      if (repro_dir.empty()) repro_dir = "repro-seed" + std::to_string(seed);
      guard.marker_dir = repro_dir;
      return cmd_reproduce_all(cfg, seed, repro_dir);
    }
    std::cerr << "error: no subcommand selected\n";
    return 2;
  } catch (const IoError& e) {
    guard.on_failure(e.what());
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const SchemaError& e) {
    guard.on_failure(e.what());
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    guard.on_failure(e.what());
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    guard.on_failure(e.what());
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
