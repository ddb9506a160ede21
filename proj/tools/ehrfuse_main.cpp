// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface: gen-data, train, eval, sweep-missing, fls, ablate,
// report. Every command is deterministic given (config, seed, inputs) and
// embeds the config fingerprint in its outputs. Exit codes: 0 success,
// 1 runtime failure, 2 config/usage error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "ehrfuse/config.hpp"
#include "ehrfuse/ioutil.hpp"
#include "ehrfuse/metrics.hpp"
#include "ehrfuse/model.hpp"
#include "ehrfuse/report.hpp"
#include "ehrfuse/synth.hpp"
#include "ehrfuse/train.hpp"

namespace fs = std::filesystem;
using namespace ehrfuse;

namespace {

struct Common {
  std::string config_path;
  std::string preset = "desk";
  std::string out;
  std::string data;
  std::string task;
  std::string maa;
  uint64_t seed = 0;
  bool seed_set = false;
};

RunConfig make_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? default_config(c.preset)
                                        : load_config_file(c.config_path, c.preset);
  if (c.seed_set) cfg.master_seed = c.seed;
  if (!c.task.empty()) cfg.train.task = c.task;
  if (!c.maa.empty()) cfg.model.maa = c.maa;
  cfg.validate();
  return cfg;
}

std::string key_table_footer() {
  std::ostringstream os;
  os << "Config keys (desk default | paper default):\n";
  for (const auto& row : config_key_table()) {
    os << "  " << row[0] << " = " << row[1] << " | " << row[2];
    if (!row[3].empty()) os << "  -- " << row[3];
    os << "\n";
  }
  return os.str();
}

cohort::Cohort load_data_dir(const RunConfig& cfg, const std::string& dir) {
  const cohort::Manifest manifest = cohort::load_manifest(dir + "/manifest.json");
  if (manifest.data_fp != data_fingerprint(cfg)) {
    throw std::runtime_error("data fingerprint mismatch: manifest has " + manifest.data_fp +
                             ", config expects " + data_fingerprint(cfg));
  }
  cohort::Cohort c;
  c.train = cohort::load_cohort(dir + "/train.jsonl", manifest.schema_version);
  c.val = cohort::load_cohort(dir + "/val.jsonl", manifest.schema_version);
  c.test = cohort::load_cohort(dir + "/test.jsonl", manifest.schema_version);
  return c;
}

int cmd_gen_data(const Common& common) {
  const RunConfig cfg = make_config(common);
  fs::create_directories(common.out);
  auto result = synth::generate(cfg.synth, cfg.master_seed);
  cohort::save_cohort(common.out + "/train.jsonl", result.cohort.train);
  cohort::save_cohort(common.out + "/val.jsonl", result.cohort.val);
  cohort::save_cohort(common.out + "/test.jsonl", result.cohort.test);
  cohort::Manifest manifest;
  manifest.image_h = cfg.synth.image_h;
  manifest.image_w = cfg.synth.image_w;
  manifest.text_vocab = cfg.synth.text_vocab;
  manifest.data_fp = data_fingerprint(cfg);
  cohort::save_manifest(common.out + "/manifest.json", manifest,
                        {{"run_fingerprint", run_fingerprint(cfg)}});
  nlohmann::json rep = synth::report_to_json(result.report);
  rep["data_fingerprint"] = data_fingerprint(cfg);
  rep["run_fingerprint"] = run_fingerprint(cfg);
  {
    std::ofstream os(common.out + "/generation_report.json", std::ios::trunc);
    os << rep.dump(2) << "\n";
    if (!os) throw std::runtime_error("write failed: generation_report.json");
  }
  std::cout << "generated " << result.report.train.patients << "/" << result.report.val.patients
            << "/" << result.report.test.patients << " patients (train/val/test)\n"
            << "realized image missing (train): " << io::fmt(result.report.train.image_missing)
            << ", text missing: " << io::fmt(result.report.train.text_missing) << "\n"
            << "data fingerprint: " << manifest.data_fp << "\n";
  return 0;
}

int cmd_train(const Common& common) {
  const RunConfig cfg = make_config(common);
  const cohort::Cohort raw = load_data_dir(cfg, common.data);
  fs::create_directories(common.out);

  const auto stats = cohort::fit_normalization(raw.train);
  const cohort::Cohort normalized = train::normalize_cohort(raw, stats);
  const model::CheckpointMeta meta{canonical_json(cfg), model_fingerprint(cfg),
                                   data_fingerprint(cfg)};

  std::vector<train::LogRow> log;
  std::vector<train::TrainedRun> runs;
  for (double lr : cfg.train.lrs) {
    for (uint64_t seed : cfg.train.seeds) {
      const std::string rid = train::run_id(lr, seed);
      auto res = train::train_single_run(cfg, normalized, lr, seed,
                                         common.out + "/state_" + rid + ".bin");
      log.insert(log.end(), res.rows.begin(), res.rows.end());
      if (!res.best_params.empty()) {
        model::FusionModel m(model::spec_from_config(cfg),
                             rng::derive(cfg.master_seed, "init", seed));
        for (auto& [id, p] : m.params) p.data = res.best_params.at(id);
        model::save_model(common.out + "/ckpt_" + rid + ".bin", m, train::stats_to_pairs(stats),
                          meta);
      }
      runs.push_back({lr, seed, std::move(res)});
    }
  }
  report::write_training_log(common.out + "/training_log.csv", run_fingerprint(cfg), log);
  report::write_summary(common.out + "/summary.csv", run_fingerprint(cfg), runs);
  for (const auto& run : runs) {
    std::cout << run.result.run_id << ": best val AUPRC " << io::fmt(run.result.best_val_auprc)
              << " at epoch " << run.result.best_epoch << (run.result.diverged ? " (diverged)" : "")
              << "\n";
  }
  return 0;
}

int cmd_eval(const Common& common, const std::string& ckpt_path, const std::string& split,
             const std::string& attn_path) {
  const RunConfig cfg = make_config(common);
  auto loaded = model::load_model(ckpt_path, cfg);
  const cohort::Manifest manifest = cohort::load_manifest(common.data + "/manifest.json");
  if (loaded.data_fp != manifest.data_fp) {
    throw std::runtime_error("checkpoint was trained on data " + loaded.data_fp +
                             " but this directory holds " + manifest.data_fp);
  }
  auto records = cohort::load_cohort(common.data + "/" + split + ".jsonl", 1);
  for (auto& r : records) cohort::apply_normalization(r, loaded.stats);

  const auto task = cohort::task_from_string(cfg.train.task);
  const uint64_t eval_seed = rng::derive(cfg.master_seed, "eval_windows");
  auto eval = metrics::evaluate(loaded.model, records, task, eval_seed,
                                cfg.train.eval_windows_per_class);

  metrics::MetricReport rep;
  metrics::MetricRow row;
  row.condition = "baseline";
  row.auprc_seeds = {eval.auprc};
  row.auroc_seeds = {eval.auroc};
  row.auprc_mean = eval.auprc;
  row.auroc_mean = eval.auroc;
  rep.rows.push_back(row);
  report::write_metric_report(common.out, run_fingerprint(cfg), rep);

  if (!attn_path.empty()) {
    auto rows = metrics::attention_report(loaded.model, records, task, eval_seed,
                                          cfg.train.eval_windows_per_class);
    report::write_attention_report(attn_path, run_fingerprint(cfg), rows);
  }
  std::cout << split << " AUPRC " << io::fmt(eval.auprc) << ", AUROC " << io::fmt(eval.auroc)
            << " over " << eval.scored.size() << " windows\n";
  return 0;
}

int cmd_sweep(const Common& common, const std::vector<std::string>& ckpt_paths,
              const std::string& split, const std::string& svg_path) {
  const RunConfig cfg = make_config(common);
  std::vector<model::LoadedModel> loaded;
  for (const auto& p : ckpt_paths) loaded.push_back(model::load_model(p, cfg));
  const cohort::Manifest manifest = cohort::load_manifest(common.data + "/manifest.json");
  for (const auto& l : loaded) {
    if (l.data_fp != manifest.data_fp)
      throw std::runtime_error("checkpoint/data fingerprint mismatch");
  }
  auto records = cohort::load_cohort(common.data + "/" + split + ".jsonl", 1);
  for (auto& r : records) cohort::apply_normalization(r, loaded.front().stats);

  std::vector<model::FusionModel*> models;
  for (auto& l : loaded) models.push_back(&l.model);
  const auto task = cohort::task_from_string(cfg.train.task);
  auto rep = metrics::missing_sweep(models, records, task, cfg.sweep,
                                    rng::derive(cfg.master_seed, "eval_windows"),
                                    cfg.train.eval_windows_per_class,
                                    rng::derive(cfg.master_seed, "sweep"));
  report::write_metric_report(common.out, run_fingerprint(cfg), rep);
  if (!svg_path.empty()) {
    report::write_sweep_svg(svg_path, rep,
                            "missing-" + cfg.sweep.modality + " robustness (" +
                                cfg.train.task + ")");
  }
  std::cout << "sweep rows: " << rep.rows.size() << "\n";
  return 0;
}

int cmd_fls(const Common& common, int layer_lo, int layer_hi) {
  const RunConfig cfg = make_config(common);
  const cohort::Cohort raw = load_data_dir(cfg, common.data);
  const int hi = layer_hi > 0 ? layer_hi : cfg.model.layers;
  auto res = metrics::fls_search(cfg, layer_lo, hi, raw);
  report::write_metric_report(common.out, run_fingerprint(cfg), res.report);
  std::cout << "selected fusion layer: " << res.selected_layer << "\n";
  return 0;
}

int cmd_ablate(const Common& common, std::vector<std::string> arms) {
  const RunConfig cfg = make_config(common);
  const cohort::Cohort raw = load_data_dir(cfg, common.data);
  if (arms.empty()) {
    arms = {"default", "no_ts_umse", "no_imgtxt_umse", "no_all_umse", "absolute_time"};
  }
  metrics::MetricReport combined;
  combined.seeds = cfg.train.seeds;
  for (const auto& arm : arms) {
    auto rep = metrics::ablate(cfg, arm, raw);
    combined.rows.insert(combined.rows.end(), rep.rows.begin(), rep.rows.end());
  }
  report::write_metric_report(common.out, run_fingerprint(cfg), combined);
  for (const auto& row : combined.rows) {
    std::cout << row.condition << ": test AUPRC " << io::fmt(row.auprc_mean) << ", AUROC "
              << io::fmt(row.auroc_mean) << "\n";
  }
  return 0;
}

int cmd_report(const std::string& in_dir, const std::string& out_path) {
  const std::string log_path = in_dir + "/training_log.csv";
  std::ifstream is(log_path);
  if (!is) throw std::runtime_error("missing training log: " + log_path);
  std::string fingerprint = "unknown";
  std::string line;
  struct Best {
    double lr = 0;
    std::string seed;
    int epoch = 0;
    double auprc = -1, auroc = 0;
  };
  std::map<std::string, Best> best;
  std::vector<std::string> order;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.rfind("# config_fingerprint=", 0) == 0) {
      fingerprint = line.substr(21);
      continue;
    }
    if (line.rfind("run_id,", 0) == 0) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 7) continue;
    const std::string rid = cells[0];
    const double auprc = std::stod(cells[5]);
    if (!best.count(rid)) order.push_back(rid);
    auto& b = best[rid];
    if (auprc > b.auprc) {
      b.lr = std::stod(cells[1]);
      b.seed = cells[2];
      b.epoch = std::stoi(cells[3]);
      b.auprc = auprc;
      b.auroc = std::stod(cells[6]);
    }
  }
  std::ofstream os(out_path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + out_path);
  os << "# config_fingerprint=" << fingerprint << "\n";
  os << "run_id,lr,seed,best_epoch,best_val_auprc,best_val_auroc\n";
  for (const auto& rid : order) {
    const auto& b = best[rid];
    os << rid << ',' << io::fmt(b.lr) << ',' << b.seed << ',' << b.epoch << ','
       << io::fmt(b.auprc) << ',' << io::fmt(b.auroc) << "\n";
  }
  std::cout << "summarized " << order.size() << " runs\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ehrfuse: multi-modal set-embedding fusion on synthetic EHR-like cohorts"};
  app.require_subcommand(1);
  app.footer(key_table_footer());

  Common common;
  std::string split = "test";
  std::string attn_path, svg_path;
  std::vector<std::string> ckpts, arms;
  int layer_lo = 1, layer_hi = 0;
  std::string report_in;

  auto add_common = [&](CLI::App* sub, bool needs_out, bool needs_data) {
    sub->add_option("--config", common.config_path, "config file (JSON, merged over preset)");
    sub->add_option("--preset", common.preset, "default bundle: desk or paper")
        ->check(CLI::IsMember({"desk", "paper"}));
    sub->add_option("--seed", common.seed, "override master_seed")
        ->each([&](const std::string&) { common.seed_set = true; });
    sub->add_option("--task", common.task, "override train.task")
        ->check(CLI::IsMember({"mortality", "vasopressor", "intubation"}));
    sub->add_option("--maa", common.maa, "override model.maa")
        ->check(CLI::IsMember({"aa", "tsa", "ctaa"}));
    auto* out = sub->add_option("--out", common.out, "output path");
    if (needs_out) out->required();
    auto* data = sub->add_option("--data", common.data, "data directory from gen-data");
    if (needs_data) data->required();
  };

  auto* gen = app.add_subcommand("gen-data", "generate synthetic cohort files + manifest");
  add_common(gen, true, false);

  auto* tr = app.add_subcommand("train", "run the lr x seed training sweep");
  add_common(tr, true, true);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_common(ev, true, true);
  ev->add_option("--checkpoint", ckpts, "checkpoint file")->required()->expected(1);
  ev->add_option("--split", split, "train|val|test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--attn", attn_path, "also write the CTAA attention report CSV here");

  auto* sw = app.add_subcommand("sweep-missing", "missing-modality robustness sweep");
  add_common(sw, true, true);
  sw->add_option("--checkpoint", ckpts, "checkpoint files (one per seed)")->required();
  sw->add_option("--split", split, "train|val|test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  sw->add_option("--svg", svg_path, "also write a line chart SVG here");

  auto* fl = app.add_subcommand("fls", "fusion layer search over l_fusion candidates");
  add_common(fl, true, true);
  fl->add_option("--layer-lo", layer_lo, "first candidate layer");
  fl->add_option("--layer-hi", layer_hi, "last candidate layer (default model.layers)");

  auto* ab = app.add_subcommand("ablate", "embedding/time ablation arms");
  add_common(ab, true, true);
  ab->add_option("--arm", arms,
                 "arms to run (default: default no_ts_umse no_imgtxt_umse no_all_umse "
                 "absolute_time)");

  auto* rp = app.add_subcommand("report", "summarize a training output directory");
  rp->add_option("--in", report_in, "directory holding training_log.csv")->required();
  rp->add_option("--out", common.out, "summary CSV path")->required();

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_gen_data(common);
    if (tr->parsed()) return cmd_train(common);
    if (ev->parsed()) return cmd_eval(common, ckpts.front(), split, attn_path);
    if (sw->parsed()) return cmd_sweep(common, ckpts, split, svg_path);
    if (fl->parsed()) return cmd_fls(common, layer_lo, layer_hi);
    if (ab->parsed()) return cmd_ablate(common, arms);
    if (rp->parsed()) return cmd_report(report_in, common.out);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
