// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0
//
// Unified multi-modal set embedding: every observation becomes value
// embedding + time embedding + feature-type embedding, with the time and
// feature-type embedders shared across modalities (single parameter
// instances, one gradient accumulator each). No positional encoding exists
// anywhere; observation order carries no information.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ehrfuse/autodiff.hpp"
#include "ehrfuse/cohort.hpp"
#include "ehrfuse/featurizer.hpp"
#include "ehrfuse/init.hpp"

namespace ehrfuse::umse {

enum class TimeMode { relative, absolute };
TimeMode time_mode_from_string(const std::string& s);

// Which modalities keep their time/feature-type contributions (ablation
// arms replace them with zeros).
struct UmseArm {
  bool ts_umse = true;
  bool imgtxt_umse = true;
};
UmseArm arm_from_string(const std::string& s);  // default | no_ts | no_imgtxt | no_all

// The time embedder consumes raw hours (the delta in relative mode), so its
// weight starts scaled down by the horizon length to keep a 24 h span inside
// the responsive range of tanh.
inline constexpr double kTimeWeightInitScale = 1.0 / 24.0;

struct UmseSpec {
  int d = 32;
  int d_enc = 16;
  int t_text = 16;
  int vocab = 512;
  int image_h = 56;
  int image_w = 56;
  int k_images = 1;
  int k_texts = 1;
  TimeMode time_mode = TimeMode::relative;
  UmseArm arm;
  uint64_t featurizer_seed = 7777;
};

// Parameter catalog (ids under "umse."): trainable value embedders per
// modality, one shared time embedder, one shared feature-type table.
std::vector<ad::ParamSpec> param_specs(const UmseSpec& spec);

// Eagerly selected window inputs: time-series observations inside the
// horizon; the K most recent image/text observations with time <= t_current
// (no horizon floor for those).
struct ComposeInput {
  std::vector<double> ts_values;
  std::vector<double> ts_time;  // already delta-and-scaled per mode
  std::vector<int32_t> ts_ft;
  std::vector<Tensor> image_feats;  // 49 x d_enc each (frozen featurizer output)
  std::vector<double> image_time;
  std::vector<std::vector<int32_t>> text_ids;  // padded/truncated to t_text
  std::vector<std::vector<double>> text_pad;   // 1.0 marks a pad row
  std::vector<double> text_time;
  bool has_image = false;
  bool has_text = false;
};

double encode_time(double t_occurrence, double t_current, TimeMode mode);

ComposeInput compose_input(const cohort::PatientRecord& r, const cohort::Window& w,
                           const UmseSpec& spec, const ImageFeaturizer& imgf);

struct Tokens {
  ad::Tape::V ts = -1;
  ad::Tape::V image = -1;
  ad::Tape::V text = -1;
  std::vector<double> text_pad;  // per text token row, aligned with `text`
  int n_ts = 0;
  int n_image = 0;
  int n_text = 0;
};

Tokens build_tokens(ad::Tape& tape, const ComposeInput& in, ad::ParameterSet& params,
                    const TextFeaturizer& txtf, const UmseSpec& spec);

// Single-observation embedders (the batched build_tokens path is the same
// arithmetic; these exist as the unit surface).
ad::Tape::V embed_time(ad::Tape& tape, ad::ParameterSet& params, double t_occurrence,
                       double t_current, TimeMode mode);
ad::Tape::V embed_feature_type(ad::Tape& tape, ad::ParameterSet& params, int ft);
ad::Tape::V embed_value_ts(ad::Tape& tape, ad::ParameterSet& params, double v);
ad::Tape::V embed_value_image(ad::Tape& tape, ad::ParameterSet& params,
                              const ImageFeaturizer& imgf, const Tensor& pixels);
struct TextEmbedding {
  ad::Tape::V tokens = -1;
  std::vector<double> pad;  // 1.0 on pad rows
};
TextEmbedding embed_value_text(ad::Tape& tape, ad::ParameterSet& params,
                               const TextFeaturizer& txtf, const std::vector<int32_t>& ids,
                               int t_text);

}  // namespace ehrfuse::umse
