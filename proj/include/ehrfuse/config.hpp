// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one hierarchical JSON document with two preset
// baselines (desk, paper). Canonical serialization sorts keys, so its hash
// is the config fingerprint embedded in every artifact.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace ehrfuse {

struct SynthConfig {
  int train_patients = 2000;
  int val_patients = 250;
  int test_patients = 250;
  double image_missing = 0.76;
  double text_missing = 0.49;
  double prev_mortality = 0.10;
  double prev_vasopressor = 0.27;
  double prev_intubation = 0.39;
  double vital_rate = 0.35;   // observations per hour per vital feature
  double lab_rate = 0.12;     // observations per hour per lab feature
  double image_rate = 0.02;   // captures per hour for image-bearing patients
  int image_h = 56;
  int image_w = 56;
  int text_vocab = 512;
  int text_len_min = 4;
  int text_len_max = 12;
  int text_clusters = 4;
  double signal_ts = 1.0;     // hazard weight on the time-series latent
  double signal_image = 1.6;  // hazard weight on the image-only latent
  double signal_text = 1.3;   // hazard weight on the text-cluster interaction
  double stay_min = 48.0;
  double stay_max = 168.0;
};

struct ModelConfig {
  int d = 32;
  int d_enc = 16;
  int layers = 2;
  int heads = 4;
  int bottleneck_tokens = 4;
  int l_fusion = 1;             // first fused layer, 1-based; layers = late fusion
  std::string maa = "tsa";      // aa | tsa | ctaa
  double tau = 0.2;
  double dropout = 0.1;
  int t_text = 16;
  std::string time_mode = "relative";  // relative | absolute
  std::string umse_arm = "default";    // default | no_ts | no_imgtxt | no_all
  int k_images = 1;             // most recent image observations per window
  int k_texts = 1;
  int static_dim = 8;
  int classifier_hidden = 32;
  bool multi_token = false;
  bool ts_only = false;         // unimodal reference: image/text towers disabled
  uint64_t featurizer_seed = 7777;
};

struct TrainConfig {
  int epochs = 8;
  int batch_size = 8;
  std::vector<double> lrs = {1e-3};
  double weight_decay = 0.01;
  std::vector<uint64_t> seeds = {1, 2, 3};
  bool mma_enabled = false;
  double mma_p_img = 0.3;
  double mma_p_txt = 0.3;
  double clip_norm = 1.0;       // 0 disables clipping
  int steps_per_epoch_cap = 200;  // 0 = uncapped
  std::string task = "mortality";
  int eval_windows_per_class = 5;
};

struct SweepConfig {
  std::string modality = "image";  // image | text | both
  std::vector<double> fractions = {0.0, 0.25, 0.5, 0.75, 1.0};
};

struct RunConfig {
  uint64_t master_seed = 1234;
  std::string preset = "desk";
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;
  SweepConfig sweep;

  void validate() const;  // throws std::invalid_argument naming the field
};

RunConfig default_config(const std::string& preset);  // "desk" or "paper"

// Merges a user JSON document over the preset defaults. Unknown keys and
// type mismatches are errors naming the offending dotted key.
RunConfig config_from_json(const nlohmann::json& user, const std::string& preset);
RunConfig load_config_file(const std::string& path, const std::string& preset);

nlohmann::json to_json(const RunConfig& cfg);
std::string canonical_json(const RunConfig& cfg);

std::string run_fingerprint(const RunConfig& cfg);
std::string model_fingerprint(const RunConfig& cfg);
std::string data_fingerprint(const RunConfig& cfg);

// Flattened key -> (desk default, paper default, description) listing used
// by the CLI --help output; covers every config key.
std::vector<std::array<std::string, 4>> config_key_table();

}  // namespace ehrfuse
