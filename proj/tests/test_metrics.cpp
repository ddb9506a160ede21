// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0
//
// Ranking metrics against independent brute-force oracles, plus the
// evaluation/sweep/search machinery.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "ehrfuse/metrics.hpp"
#include "ehrfuse/synth.hpp"
#include "ehrfuse/train.hpp"

using namespace ehrfuse;
using namespace ehrfuse::metrics;

namespace {

// Oracle 1: exhaustive positive/negative pair counting.
double auroc_oracle(const std::vector<Scored>& set) {
  double num = 0.0;
  int64_t pairs = 0;
  for (const auto& p : set) {
    if (p.label != 1) continue;
    for (const auto& n : set) {
      if (n.label != 0) continue;
      ++pairs;
      if (p.score > n.score) num += 1.0;
      else if (p.score == n.score) num += 0.5;
    }
  }
  return num / static_cast<double>(pairs);
}

// Oracle 2: average precision by rescanning the whole set at every distinct
// threshold (precision at tie-group end).
double auprc_oracle(const std::vector<Scored>& set) {
  std::set<double, std::greater<>> thresholds;
  int64_t pos = 0;
  for (const auto& s : set) {
    thresholds.insert(s.score);
    pos += s.label;
  }
  double ap = 0.0, recall_prev = 0.0;
  for (double th : thresholds) {
    int64_t tp = 0, fp = 0;
    for (const auto& s : set) {
      if (s.score >= th) (s.label == 1 ? tp : fp)++;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - recall_prev) * precision;
    recall_prev = recall;
  }
  return ap;
}

RunConfig micro_cfg() {
  RunConfig cfg = default_config("desk");
  cfg.master_seed = 99;
  cfg.synth.train_patients = 40;
  cfg.synth.val_patients = 10;
  cfg.synth.test_patients = 10;
  cfg.synth.image_h = 14;
  cfg.synth.image_w = 14;
  cfg.synth.text_vocab = 64;
  cfg.synth.stay_max = 96.0;
  cfg.synth.image_missing = 0.4;
  cfg.synth.text_missing = 0.4;
  cfg.model.d = 8;
  cfg.model.d_enc = 6;
  cfg.model.layers = 1;
  cfg.model.heads = 2;
  cfg.model.bottleneck_tokens = 2;
  cfg.model.dropout = 0.0;
  cfg.model.t_text = 4;
  cfg.model.static_dim = 4;
  cfg.model.classifier_hidden = 8;
  cfg.train.epochs = 1;
  cfg.train.batch_size = 4;
  cfg.train.lrs = {1e-3};
  cfg.train.seeds = {1};
  cfg.train.steps_per_epoch_cap = 4;
  cfg.train.task = "vasopressor";
  cfg.train.eval_windows_per_class = 2;
  return cfg;
}

}  // namespace

TEST_CASE("auroc worked examples") {
  CHECK(auroc({{0.9, 1}, {0.8, 1}, {0.1, 0}}) == 1.0);
  CHECK(auroc({{0.1, 1}, {0.2, 1}, {0.9, 0}}) == 0.0);
  CHECK(auroc({{0.5, 1}, {0.5, 0}}) == 0.5);
  CHECK_THROWS_AS(auroc({{0.5, 1}, {0.4, 1}}), std::invalid_argument);
}

TEST_CASE("auprc worked examples") {
  CHECK(auprc({{0.9, 1}, {0.8, 1}, {0.1, 0}}) == 1.0);
  CHECK(std::abs(auprc({{0.9, 1}, {0.8, 0}, {0.1, 1}}) - 5.0 / 6.0) <= 1e-12);
  CHECK(auprc({{0.3, 1}, {0.2, 1}}) == 1.0);  // all-positive labels
  CHECK_THROWS_AS(auprc({{0.5, 0}}), std::invalid_argument);
}

TEST_CASE("metrics match brute-force oracles on 1000 random tied instances") {
  rng::Stream s(404);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = static_cast<int>(s.uniform_int(2, 50));
    std::vector<Scored> set;
    bool has_pos = false, has_neg = false;
    for (int i = 0; i < n; ++i) {
      // scores from a discrete grid force plenty of ties
      const double score = std::floor(s.uniform(0.0, 8.0)) / 8.0;
      const int label = s.bernoulli(0.4) ? 1 : 0;
      set.push_back({score, label});
      (label == 1 ? has_pos : has_neg) = true;
    }
    if (!has_pos) set[0].label = 1;
    if (!has_neg) set[static_cast<size_t>(n) - 1].label = 0;

    CHECK(std::abs(auroc(set) - auroc_oracle(set)) <= 1e-12);
    CHECK(std::abs(auprc(set) - auprc_oracle(set)) <= 1e-12);
  }
}

TEST_CASE("auroc is invariant under strictly monotone score transforms") {
  rng::Stream s(405);
  std::vector<Scored> set;
  for (int i = 0; i < 30; ++i) {
    set.push_back({std::floor(s.uniform(0.0, 6.0)), i % 3 == 0 ? 1 : 0});
  }
  auto transformed = set;
  for (auto& x : transformed) x.score = std::exp(0.5 * x.score) + 3.0;
  CHECK(auroc(set) == auroc(transformed));
}

TEST_CASE("evaluate: determinism, constant model, oracle scores") {
  RunConfig cfg = micro_cfg();
  auto raw = synth::generate(cfg.synth, cfg.master_seed).cohort;
  auto stats = cohort::fit_normalization(raw.train);
  auto data = train::normalize_cohort(raw, stats);
  const auto task = cohort::Task::vasopressor;
  const uint64_t eval_seed = rng::derive(cfg.master_seed, "eval_windows");

  model::FusionModel m(model::spec_from_config(cfg), 3);

  auto a = evaluate(m, data.test, task, eval_seed, 2);
  auto b = evaluate(m, data.test, task, eval_seed, 2);
  REQUIRE(a.scored.size() == b.scored.size());
  for (size_t i = 0; i < a.scored.size(); ++i) {
    CHECK(a.scored[i].score == b.scored[i].score);
    CHECK(a.scored[i].label == b.scored[i].label);
  }

  SUBCASE("an all-zero model outputs probability one-half everywhere: AUROC 0.5") {
    for (auto& [id, p] : m.params) {
      for (int64_t i = 0; i < p.data.size(); ++i) p.data[i] = 0.0;
    }
    auto r = evaluate(m, data.test, task, eval_seed, 2);
    for (const auto& sc : r.scored) CHECK(sc.score == 0.5);
    CHECK(r.auroc == 0.5);
  }

  SUBCASE("scores equal to the labels give AUPRC 1") {
    std::vector<Scored> oracle;
    for (const auto& sc : a.scored) oracle.push_back({static_cast<double>(sc.label), sc.label});
    CHECK(auprc(oracle) == 1.0);
    CHECK(auroc(oracle) == 1.0);
  }
}

TEST_CASE("missing_sweep: baseline bitwise at f=0, full masking at f=1, nesting") {
  RunConfig cfg = micro_cfg();
  auto raw = synth::generate(cfg.synth, cfg.master_seed).cohort;
  auto stats = cohort::fit_normalization(raw.train);
  auto data = train::normalize_cohort(raw, stats);
  const auto task = cohort::Task::vasopressor;
  const uint64_t eval_seed = rng::derive(cfg.master_seed, "eval_windows");

  model::FusionModel m(model::spec_from_config(cfg), 7);
  std::vector<model::FusionModel*> models = {&m};

  SweepConfig sweep;
  sweep.modality = "image";
  sweep.fractions = {0.0, 0.5, 1.0};

  auto rep = missing_sweep(models, data.test, task, sweep, eval_seed, 2, 555);
  REQUIRE(rep.rows.size() == 3);

  SUBCASE("f=0 reproduces the baseline bitwise") {
    auto base = evaluate(m, data.test, task, eval_seed, 2);
    CHECK(rep.rows[0].auprc_seeds[0] == base.auprc);
    CHECK(rep.rows[0].auroc_seeds[0] == base.auroc);
  }

  SUBCASE("f=1 equals evaluating with every image masked by hand") {
    auto windows = inference_windows(data.test, task, eval_seed, 2);
    for (auto& w : windows) w.presence.has_image = false;
    auto manual = evaluate_windows(m, data.test, windows, task);
    CHECK(rep.rows[2].auprc_seeds[0] == manual.auprc);
    CHECK(rep.rows[2].auroc_seeds[0] == manual.auroc);
  }

  SUBCASE("reruns are identical (seeded prefix selection)") {
    auto rep2 = missing_sweep(models, data.test, task, sweep, eval_seed, 2, 555);
    for (size_t i = 0; i < rep.rows.size(); ++i) {
      CHECK(rep.rows[i].auprc_seeds == rep2.rows[i].auprc_seeds);
      CHECK(rep.rows[i].case_percent == rep2.rows[i].case_percent);
    }
    auto rep3 = missing_sweep(models, data.test, task, sweep, eval_seed, 2, 556);
    // a different sweep seed may pick a different masked subset at f=0.5
    CHECK(rep3.rows[0].auprc_seeds == rep.rows[0].auprc_seeds);  // f=0 unaffected
  }
}

TEST_CASE("fls_search: row bookkeeping and argmax selection") {
  RunConfig cfg = micro_cfg();
  cfg.model.layers = 2;
  auto raw = synth::generate(cfg.synth, cfg.master_seed).cohort;

  auto res = fls_search(cfg, 1, 2, raw);
  REQUIRE(res.report.rows.size() == 2);
  CHECK(res.report.rows[0].condition == "l_fusion=1");
  CHECK(res.report.rows[1].condition == "l_fusion=2");

  size_t argmax = res.report.rows[0].auprc_mean >= res.report.rows[1].auprc_mean ? 0 : 1;
  CHECK(res.selected_layer == static_cast<int>(argmax) + 1);
  CHECK(res.report.rows[argmax].selected);

  CHECK_THROWS_AS(fls_search(cfg, 0, 2, raw), std::invalid_argument);
  CHECK_THROWS_AS(fls_search(cfg, 1, 9, raw), std::invalid_argument);
}

TEST_CASE("ablate: arm tags round-trip and configs map correctly") {
  RunConfig cfg = micro_cfg();
  CHECK(ablation_config(cfg, "no_ts_umse").model.umse_arm == "no_ts");
  CHECK(ablation_config(cfg, "no_imgtxt_umse").model.umse_arm == "no_imgtxt");
  CHECK(ablation_config(cfg, "no_all_umse").model.umse_arm == "no_all");
  CHECK(ablation_config(cfg, "absolute_time").model.time_mode == "absolute");
  CHECK_THROWS_AS(ablation_config(cfg, "bogus"), std::invalid_argument);

  auto raw = synth::generate(cfg.synth, cfg.master_seed).cohort;
  auto rep = ablate(cfg, "no_all_umse", raw);
  REQUIRE(rep.rows.size() == 1);
  CHECK(rep.rows[0].condition == "no_all_umse");
  CHECK(rep.rows[0].auprc_seeds.size() == cfg.train.seeds.size());
}

TEST_CASE("attention_report: grouping, normalization, absent-modality zeros") {
  RunConfig cfg = micro_cfg();
  cfg.model.maa = "ctaa";
  auto raw = synth::generate(cfg.synth, cfg.master_seed).cohort;
  auto stats = cohort::fit_normalization(raw.train);
  auto data = train::normalize_cohort(raw, stats);
  model::FusionModel m(model::spec_from_config(cfg), 5);

  auto rows = attention_report(m, data.test, cohort::Task::vasopressor,
                               rng::derive(cfg.master_seed, "eval_windows"), 2);
  CHECK_FALSE(rows.empty());
  for (const auto& r : rows) {
    CHECK(std::abs(r.attention[0] + r.attention[1] + r.attention[2] - 1.0) <= 1e-9);
    if (r.group.find("img") == std::string::npos) CHECK(r.attention[1] == 0.0);
    if (r.group.find("txt") == std::string::npos) CHECK(r.attention[2] == 0.0);
    if (r.group == "ts+img+txt") {
      // zero-initialized ctaa logits: uniform attention
      for (double a : r.attention) CHECK(a == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
    }
  }

  SUBCASE("a non-ctaa model is refused") {
    RunConfig tsa = micro_cfg();
    model::FusionModel mt(model::spec_from_config(tsa), 5);
    CHECK_THROWS_AS(attention_report(mt, data.test, cohort::Task::vasopressor, 1, 2),
                    std::invalid_argument);
  }
}
