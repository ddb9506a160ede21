// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0
//
// Skip-Bottleneck fusion transformer. Modality towers share no layer
// parameters; information crosses modalities only through the bottleneck
// token state, which after every fused layer is the presence-masked mean of
// the towers' temporary bottleneck outputs (absent modalities are skipped
// exactly, not approximated). Towers of absent modalities are not executed
// at all under reference semantics; a filler mode exists to demonstrate
// that running them on fabricated input cannot change the output.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ehrfuse/autodiff.hpp"
#include "ehrfuse/cohort.hpp"
#include "ehrfuse/config.hpp"
#include "ehrfuse/embedding.hpp"
#include "ehrfuse/featurizer.hpp"

namespace ehrfuse::model {

enum class Maa { aa, tsa, ctaa };
Maa maa_from_string(const std::string& s);
const char* maa_name(Maa m);

// Modality subsets always include the time series.
struct Subset {
  bool image = false;
  bool text = false;
  std::string key() const {
    return std::string("s") + (image ? "1" : "0") + (text ? "1" : "0");
  }
};

struct ModelSpec {
  int d = 32;
  int layers = 2;
  int heads = 4;
  int bottleneck = 4;
  int l_fusion = 1;
  Maa maa = Maa::tsa;
  double tau = 0.2;
  double dropout = 0.1;
  int static_dim = 8;
  int classifier_hidden = 32;
  bool multi_token = false;
  bool ts_only = false;
  umse::UmseSpec umse;
};

ModelSpec spec_from_config(const RunConfig& cfg);

enum class FillerKind { none, zeros, ones, random };  // none = reference semantics

struct FusionModel {
  ModelSpec spec;
  ad::ParameterSet params;
  ImageFeaturizer imgf;
  TextFeaturizer txtf;

  FusionModel(const ModelSpec& s, uint64_t init_seed);
  static std::vector<ad::ParamSpec> param_catalog(const ModelSpec& s);

  bool has_tower(int modality) const;  // 0 ts, 1 image, 2 text
};

struct ForwardResult {
  ad::Tape::V prob = -1;   // 1x1, strictly inside (0,1)
  ad::Tape::V logit = -1;  // pre-sigmoid
  double probability = 0.0;
  std::array<double, 3> attention{0.0, 0.0, 0.0};  // (ts, image, text) weights
  std::array<int, 3> token_counts{0, 0, 0};
  // Per-modality classifier logits; NaN where the modality carries no head.
  std::array<double, 3> modality_logits;
};

// Builds the window's graph on the given tape. Dropout applies only when the
// tape carries an rng stream (training tapes); evaluation tapes run with
// dropout 0. `subset` restricts the window's presence (multi-token heads and
// masking experiments); it never adds a modality the window does not have.
ForwardResult forward_window(ad::Tape& tape, FusionModel& m, const cohort::PatientRecord& r,
                             const cohort::Window& w, FillerKind filler = FillerKind::none,
                             std::optional<Subset> subset = std::nullopt,
                             rng::Stream* filler_rng = nullptr);

// Fresh-tape single-window evaluation (no dropout).
ForwardResult eval_window(FusionModel& m, const cohort::PatientRecord& r,
                          const cohort::Window& w, FillerKind filler = FillerKind::none,
                          rng::Stream* filler_rng = nullptr);

// One encoder layer of one tower; exposed as the unit surface. `z_fsn`
// absent means a plain (pre-fusion) layer. pad_flags has one entry per
// token row, 1.0 marking rows attention must never attend to.
struct TowerLayerOut {
  ad::Tape::V tokens = -1;
  ad::Tape::V fsn = -1;  // -1 when z_fsn was absent
};
TowerLayerOut tower_layer_forward(ad::Tape& tape, ad::ParameterSet& params, const ModelSpec& spec,
                                  const std::string& tower, int layer, ad::Tape::V tokens,
                                  std::optional<ad::Tape::V> z_fsn,
                                  const std::vector<double>& pad_flags, double dropout_rate);

// Presence-masked bottleneck mean: (z_ts + [img] + [txt]) / count.
ad::Tape::V skip_average(ad::Tape& tape, ad::Tape::V z_ts, std::optional<ad::Tape::V> z_img,
                         std::optional<ad::Tape::V> z_txt);

// The softmax weights the CTAA (and AA, with zero logits) head assigns,
// renormalized over present modalities; absent entries are exactly zero.
std::array<double, 3> maa_weights(const FusionModel& m, bool has_image, bool has_text);

struct CheckpointMeta {
  std::string config_json;
  std::string model_fp;
  std::string data_fp;
};

void save_model(const std::string& path, const FusionModel& m,
                const std::vector<std::pair<double, double>>& norm_stats,
                const CheckpointMeta& meta);

struct LoadedModel {
  FusionModel model;
  cohort::NormalizationStats stats;
  std::string data_fp;
  std::string config_json;
};

// Rebuilds the model from `cfg` and loads parameters; refuses checkpoints
// whose stored model fingerprint disagrees with the requested config.
LoadedModel load_model(const std::string& path, const RunConfig& cfg);

}  // namespace ehrfuse::model
