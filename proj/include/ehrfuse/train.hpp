// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0
//
// Optimization loop: balanced-batch epochs over fresh random training
// windows, decoupled-weight-decay adaptive updates, missing-modal
// augmentation, optional multi-token multi-task loss, per-epoch validation
// and best-snapshot selection by validation AUPRC. Every random stream is
// derived from (master seed, run, epoch), so interrupted runs resume onto
// the identical trajectory.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ehrfuse/autodiff.hpp"
#include "ehrfuse/cohort.hpp"
#include "ehrfuse/config.hpp"
#include "ehrfuse/model.hpp"

namespace ehrfuse::train {

// Numeric twin of the tape's bce primitive: mean of -[y log p + (1-y)
// log(1-p)] with probabilities clamped 1e-7 from the boundaries.
double bce_loss(const std::vector<double>& probs, const std::vector<double>& labels);

struct AdamW {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments;  // (m, v) per parameter

  // Clips the global gradient norm (clip_norm > 0), then applies the
  // bias-corrected moment update plus decoupled weight decay. Non-finite
  // gradients abort the step with a NumericFault.
  void step(ad::ParameterSet& params, double lr, double weight_decay, double clip_norm);
};

// Masks present image/text modalities independently per window; labels,
// observations and time-series presence are untouched.
void mma_augment(std::vector<cohort::Window>& windows, double p_img, double p_txt,
                 rng::Stream& stream);

struct LogRow {
  std::string run_id;
  double lr = 0.0;
  uint64_t seed = 0;
  int epoch = 0;
  double train_loss = 0.0;
  double val_auprc = 0.0;
  double val_auroc = 0.0;
  bool has_attn = false;
  std::array<double, 3> attn{0.0, 0.0, 0.0};
  bool diverged = false;
};

struct RunResult {
  std::string run_id;
  std::vector<LogRow> rows;
  std::map<std::string, Tensor> best_params;
  double best_val_auprc = -1.0;
  int best_epoch = -1;
  bool diverged = false;
};

std::string run_id(double lr, uint64_t seed);

// `cohort` must already be normalized. If state_path is non-empty, training
// state is saved there after every epoch and picked up on restart.
// stop_after_epoch > 0 interrupts the run after that epoch (resume test
// hook); 0 runs to completion.
RunResult train_single_run(const RunConfig& cfg, const cohort::Cohort& cohort, double lr,
                           uint64_t seed, const std::string& state_path = "",
                           int stop_after_epoch = 0);

struct TrainedRun {
  double lr = 0.0;
  uint64_t seed = 0;
  RunResult result;
};

struct TrainOutput {
  std::vector<LogRow> log;
  std::vector<TrainedRun> runs;  // lr-major, seed-minor order
  cohort::NormalizationStats stats;
};

// Full protocol: fits normalization on the training split, then trains every
// (lr, seed) sweep point on the normalized cohort.
TrainOutput train(const RunConfig& cfg, const cohort::Cohort& raw);

// Normalization helpers shared by the run orchestration and the CLI.
cohort::Cohort normalize_cohort(const cohort::Cohort& raw, const cohort::NormalizationStats& st);
std::vector<std::pair<double, double>> stats_to_pairs(const cohort::NormalizationStats& st);
cohort::NormalizationStats stats_from_pairs(const std::vector<std::pair<double, double>>& pairs);

}  // namespace ehrfuse::train
