// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic EHR-like cohort generator. Per patient, a mean-reverting AR(1)
// latent risk drives irregular Poisson-sampled time-series features; an
// image-only latent and a text-cluster latent carry signal the time series
// does not; task onsets are first threshold crossings of a hazard score with
// thresholds calibrated to prevalence targets by a cohort-level quantile.
// Everything is a pure function of the master seed.

#pragma once

#include <array>
#include <cstdint>

#include <json.hpp>

#include "ehrfuse/cohort.hpp"
#include "ehrfuse/config.hpp"

namespace ehrfuse::synth {

struct SplitReport {
  int patients = 0;
  double image_missing = 0.0;
  double text_missing = 0.0;
  std::array<double, 3> prevalence{0.0, 0.0, 0.0};  // by Task
  double pct_irregular = 0.0;                       // patients with >= 1 irregular feature
  double pct_asynchronous = 0.0;
};

struct GenerationReport {
  SplitReport train, val, test;
  std::array<double, 3> thresholds{0.0, 0.0, 0.0};
};

struct Output {
  cohort::Cohort cohort;
  GenerationReport report;
};

Output generate(const SynthConfig& cfg, uint64_t master_seed);

nlohmann::json report_to_json(const GenerationReport& rep);

}  // namespace ehrfuse::synth
