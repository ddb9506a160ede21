// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0
//
// Exact ranking metrics and the evaluation machinery around them: fixed
// inference windows, missing-modality sweeps, fusion layer search, embedding
// ablations and attention reporting.

#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ehrfuse/cohort.hpp"
#include "ehrfuse/config.hpp"
#include "ehrfuse/model.hpp"

namespace ehrfuse::metrics {

struct Scored {
  double score = 0.0;
  int label = 0;
};

// Rank formulation with tie averaging: P(score_pos > score_neg) + P(tie)/2.
// Requires at least one positive and one negative.
double auroc(const std::vector<Scored>& set);

// Average precision over distinct thresholds, ties grouped with precision
// evaluated at group end. Requires at least one positive.
double auprc(const std::vector<Scored>& set);

struct EvalResult {
  std::vector<Scored> scored;
  double auprc = 0.0;
  double auroc = 0.0;
};

// The fixed evaluation windows of a split: up to per_class positives and
// negatives per patient, deterministic in (eval_seed, patient id, task).
std::vector<cohort::Window> inference_windows(const std::vector<cohort::PatientRecord>& split,
                                              cohort::Task task, uint64_t eval_seed,
                                              int per_class);

EvalResult evaluate_windows(model::FusionModel& m,
                            const std::vector<cohort::PatientRecord>& split,
                            const std::vector<cohort::Window>& windows, cohort::Task task);

EvalResult evaluate(model::FusionModel& m, const std::vector<cohort::PatientRecord>& split,
                    cohort::Task task, uint64_t eval_seed, int per_class);

struct MetricRow {
  std::string condition;
  double fraction = std::numeric_limits<double>::quiet_NaN();
  double case_percent = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> auprc_seeds;
  std::vector<double> auroc_seeds;
  double auprc_mean = 0.0;
  double auroc_mean = 0.0;
  bool selected = false;
};

struct MetricReport {
  std::string fingerprint;
  std::vector<uint64_t> seeds;
  std::vector<MetricRow> rows;
};

// Degrades the fixed evaluation windows: for each fraction f, the first
// floor(f*n_m) of a seeded shuffle of the modality-bearing windows lose that
// modality (prefix selection, so subsets nest across fractions). f=0 is the
// untouched baseline. One entry in `models` per training seed.
MetricReport missing_sweep(const std::vector<model::FusionModel*>& models,
                           const std::vector<cohort::PatientRecord>& split, cohort::Task task,
                           const SweepConfig& sweep, uint64_t eval_seed, int per_class,
                           uint64_t sweep_seed);

struct FlsResult {
  MetricReport report;  // one row per candidate l_fusion, validation metrics
  int selected_layer = 0;
};

// Trains one model per fusion starting layer (first learning rate of the
// sweep set, all seeds) and selects the argmax validation AUPRC; ties go to
// the smaller layer.
FlsResult fls_search(const RunConfig& base, int layer_lo, int layer_hi,
                     const cohort::Cohort& raw);

// Ablation arms: default | no_ts_umse | no_imgtxt_umse | no_all_umse |
// absolute_time. Trains under otherwise identical config/seeds and reports
// test metrics tagged with the arm name.
MetricReport ablate(const RunConfig& base, const std::string& arm, const cohort::Cohort& raw);
RunConfig ablation_config(const RunConfig& base, const std::string& arm);

struct AttnRow {
  std::string group;  // presence pattern, e.g. "ts+img+txt"
  int windows = 0;
  std::array<double, 3> attention{0.0, 0.0, 0.0};
};

// Mean modality attention weights over the fixed evaluation windows, grouped
// by presence pattern. Requires a CTAA head.
std::vector<AttnRow> attention_report(model::FusionModel& m,
                                      const std::vector<cohort::PatientRecord>& split,
                                      cohort::Task task, uint64_t eval_seed, int per_class);

}  // namespace ehrfuse::metrics
