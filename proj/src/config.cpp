// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0

#include "ehrfuse/config.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include "ehrfuse/rng.hpp"

namespace ehrfuse {

using nlohmann::json;

namespace {

json synth_to_json(const SynthConfig& s) {
  return json{{"train_patients", s.train_patients},
              {"val_patients", s.val_patients},
              {"test_patients", s.test_patients},
              {"image_missing", s.image_missing},
              {"text_missing", s.text_missing},
              {"prev_mortality", s.prev_mortality},
              {"prev_vasopressor", s.prev_vasopressor},
              {"prev_intubation", s.prev_intubation},
              {"vital_rate", s.vital_rate},
              {"lab_rate", s.lab_rate},
              {"image_rate", s.image_rate},
              {"image_h", s.image_h},
              {"image_w", s.image_w},
              {"text_vocab", s.text_vocab},
              {"text_len_min", s.text_len_min},
              {"text_len_max", s.text_len_max},
              {"text_clusters", s.text_clusters},
              {"signal_ts", s.signal_ts},
              {"signal_image", s.signal_image},
              {"signal_text", s.signal_text},
              {"stay_min", s.stay_min},
              {"stay_max", s.stay_max}};
}

json model_to_json(const ModelConfig& m) {
  return json{{"d", m.d},
              {"d_enc", m.d_enc},
              {"layers", m.layers},
              {"heads", m.heads},
              {"bottleneck_tokens", m.bottleneck_tokens},
              {"l_fusion", m.l_fusion},
              {"maa", m.maa},
              {"tau", m.tau},
              {"dropout", m.dropout},
              {"t_text", m.t_text},
              {"time_mode", m.time_mode},
              {"umse_arm", m.umse_arm},
              {"k_images", m.k_images},
              {"k_texts", m.k_texts},
              {"static_dim", m.static_dim},
              {"classifier_hidden", m.classifier_hidden},
              {"multi_token", m.multi_token},
              {"ts_only", m.ts_only},
              {"featurizer_seed", m.featurizer_seed}};
}

json train_to_json(const TrainConfig& t) {
  return json{{"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"lrs", t.lrs},
              {"weight_decay", t.weight_decay},
              {"seeds", t.seeds},
              {"mma_enabled", t.mma_enabled},
              {"mma_p_img", t.mma_p_img},
              {"mma_p_txt", t.mma_p_txt},
              {"clip_norm", t.clip_norm},
              {"steps_per_epoch_cap", t.steps_per_epoch_cap},
              {"task", t.task},
              {"eval_windows_per_class", t.eval_windows_per_class}};
}

json sweep_to_json(const SweepConfig& s) {
  return json{{"modality", s.modality}, {"fractions", s.fractions}};
}

void merge_checked(json& base, const json& user, const std::string& prefix) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw std::invalid_argument("unknown config key: " + key);
    json& slot = base[it.key()];
    if (slot.is_object()) {
      if (!it.value().is_object())
        throw std::invalid_argument("config key " + key + " must be an object");
      merge_checked(slot, it.value(), key);
    } else {
      if (slot.is_number() && !it.value().is_number())
        throw std::invalid_argument("config key " + key + " must be a number");
      if (slot.is_string() && !it.value().is_string())
        throw std::invalid_argument("config key " + key + " must be a string");
      if (slot.is_boolean() && !it.value().is_boolean())
        throw std::invalid_argument("config key " + key + " must be a boolean");
      if (slot.is_array() && !it.value().is_array())
        throw std::invalid_argument("config key " + key + " must be an array");
      slot = it.value();
    }
  }
}

SynthConfig synth_from(const json& j) {
  SynthConfig s;
  s.train_patients = j.at("train_patients");
  s.val_patients = j.at("val_patients");
  s.test_patients = j.at("test_patients");
  s.image_missing = j.at("image_missing");
  s.text_missing = j.at("text_missing");
  s.prev_mortality = j.at("prev_mortality");
  s.prev_vasopressor = j.at("prev_vasopressor");
  s.prev_intubation = j.at("prev_intubation");
  s.vital_rate = j.at("vital_rate");
  s.lab_rate = j.at("lab_rate");
  s.image_rate = j.at("image_rate");
  s.image_h = j.at("image_h");
  s.image_w = j.at("image_w");
  s.text_vocab = j.at("text_vocab");
  s.text_len_min = j.at("text_len_min");
  s.text_len_max = j.at("text_len_max");
  s.text_clusters = j.at("text_clusters");
  s.signal_ts = j.at("signal_ts");
  s.signal_image = j.at("signal_image");
  s.signal_text = j.at("signal_text");
  s.stay_min = j.at("stay_min");
  s.stay_max = j.at("stay_max");
  return s;
}

ModelConfig model_from(const json& j) {
  ModelConfig m;
  m.d = j.at("d");
  m.d_enc = j.at("d_enc");
  m.layers = j.at("layers");
  m.heads = j.at("heads");
  m.bottleneck_tokens = j.at("bottleneck_tokens");
  m.l_fusion = j.at("l_fusion");
  m.maa = j.at("maa");
  m.tau = j.at("tau");
  m.dropout = j.at("dropout");
  m.t_text = j.at("t_text");
  m.time_mode = j.at("time_mode");
  m.umse_arm = j.at("umse_arm");
  m.k_images = j.at("k_images");
  m.k_texts = j.at("k_texts");
  m.static_dim = j.at("static_dim");
  m.classifier_hidden = j.at("classifier_hidden");
  m.multi_token = j.at("multi_token");
  m.ts_only = j.at("ts_only");
  m.featurizer_seed = j.at("featurizer_seed");
  return m;
}

TrainConfig train_from(const json& j) {
  TrainConfig t;
  t.epochs = j.at("epochs");
  t.batch_size = j.at("batch_size");
  t.lrs = j.at("lrs").get<std::vector<double>>();
  t.weight_decay = j.at("weight_decay");
  t.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  t.mma_enabled = j.at("mma_enabled");
  t.mma_p_img = j.at("mma_p_img");
  t.mma_p_txt = j.at("mma_p_txt");
  t.clip_norm = j.at("clip_norm");
  t.steps_per_epoch_cap = j.at("steps_per_epoch_cap");
  t.task = j.at("task");
  t.eval_windows_per_class = j.at("eval_windows_per_class");
  return t;
}

SweepConfig sweep_from(const json& j) {
  SweepConfig s;
  s.modality = j.at("modality");
  s.fractions = j.at("fractions").get<std::vector<double>>();
  return s;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
  if (preset != "desk" && preset != "paper") fail("preset must be desk or paper");
  if (synth.train_patients < 1 || synth.val_patients < 1 || synth.test_patients < 1)
    fail("synth patient counts must be >= 1");
  for (double r : {synth.image_missing, synth.text_missing, synth.prev_mortality,
                   synth.prev_vasopressor, synth.prev_intubation}) {
    if (r < 0.0 || r > 1.0) fail("synth rates must lie in [0,1]");
  }
  if (synth.stay_min < 3.0 || synth.stay_max > 1440.0 || synth.stay_min > synth.stay_max)
    fail("synth.stay range must satisfy 3 <= min <= max <= 1440");
  if (synth.image_h % 7 != 0 || synth.image_w % 7 != 0)
    fail("synth.image_h/image_w must be multiples of 7 (49-patch featurizer)");
  if (synth.text_clusters < 1 || synth.text_vocab < synth.text_clusters)
    fail("synth.text_vocab must cover text_clusters");
  if (synth.text_len_min < 1 || synth.text_len_min > synth.text_len_max)
    fail("synth.text_len range invalid");
  if (model.layers < 1) fail("model.layers must be >= 1");
  if (model.d < 1 || model.d % model.heads != 0) fail("model.d must be divisible by model.heads");
  if (model.bottleneck_tokens < 1) fail("model.bottleneck_tokens must be >= 1");
  if (model.l_fusion < 1 || model.l_fusion > model.layers)
    fail("model.l_fusion must lie in [1, model.layers]");
  if (model.maa != "aa" && model.maa != "tsa" && model.maa != "ctaa")
    fail("model.maa must be aa, tsa or ctaa");
  if (model.tau <= 0.0) fail("model.tau must be positive");
  if (model.dropout < 0.0 || model.dropout >= 1.0) fail("model.dropout must lie in [0,1)");
  if (model.time_mode != "relative" && model.time_mode != "absolute")
    fail("model.time_mode must be relative or absolute");
  if (model.umse_arm != "default" && model.umse_arm != "no_ts" && model.umse_arm != "no_imgtxt" &&
      model.umse_arm != "no_all")
    fail("model.umse_arm must be default, no_ts, no_imgtxt or no_all");
  if (model.k_images < 1 || model.k_texts < 1) fail("model.k_images/k_texts must be >= 1");
  if (model.t_text < 1) fail("model.t_text must be >= 1");
  if (train.batch_size < 2) fail("train.batch_size must be >= 2");
  if (train.lrs.empty()) fail("train.lrs must be non-empty");
  for (double lr : train.lrs)
    if (lr <= 0.0) fail("train.lrs entries must be positive");
  if (train.seeds.empty()) fail("train.seeds must be non-empty");
  for (double p : {train.mma_p_img, train.mma_p_txt})
    if (p < 0.0 || p > 1.0) fail("train.mma probabilities must lie in [0,1]");
  if (train.task != "mortality" && train.task != "vasopressor" && train.task != "intubation")
    fail("train.task must be mortality, vasopressor or intubation");
  if (train.eval_windows_per_class < 1) fail("train.eval_windows_per_class must be >= 1");
  if (sweep.modality != "image" && sweep.modality != "text" && sweep.modality != "both")
    fail("sweep.modality must be image, text or both");
  double prev = -1.0;
  for (double f : sweep.fractions) {
    if (f < 0.0 || f > 1.0 || f < prev) fail("sweep.fractions must be ascending in [0,1]");
    prev = f;
  }
}

RunConfig default_config(const std::string& preset) {
  RunConfig cfg;  // desk defaults live in the struct initializers
  cfg.preset = preset;
  if (preset == "paper") {
    cfg.synth.image_h = 224;
    cfg.synth.image_w = 224;
    cfg.synth.text_vocab = 28996;
    cfg.model.d = 256;
    cfg.model.d_enc = 96;
    cfg.model.layers = 6;
    cfg.model.t_text = 128;
    cfg.model.classifier_hidden = 256;
    cfg.model.static_dim = 32;
    cfg.train.epochs = 50;
    cfg.train.lrs = {1e-6, 3e-6, 1e-5, 3e-5, 1e-4};
    cfg.train.steps_per_epoch_cap = 0;
  } else if (preset != "desk") {
    throw std::invalid_argument("unknown preset: " + preset);
  }
  return cfg;
}

nlohmann::json to_json(const RunConfig& cfg) {
  return json{{"master_seed", cfg.master_seed},
              {"preset", cfg.preset},
              {"synth", synth_to_json(cfg.synth)},
              {"model", model_to_json(cfg.model)},
              {"train", train_to_json(cfg.train)},
              {"sweep", sweep_to_json(cfg.sweep)}};
}

RunConfig config_from_json(const nlohmann::json& user, const std::string& preset) {
  std::string base_preset = preset;
  if (user.contains("preset") && user.at("preset").is_string())
    base_preset = user.at("preset").get<std::string>();
  json merged = to_json(default_config(base_preset));
  merge_checked(merged, user, "");
  RunConfig cfg;
  cfg.master_seed = merged.at("master_seed");
  cfg.preset = merged.at("preset");
  cfg.synth = synth_from(merged.at("synth"));
  cfg.model = model_from(merged.at("model"));
  cfg.train = train_from(merged.at("train"));
  cfg.sweep = sweep_from(merged.at("sweep"));
  cfg.validate();
  return cfg;
}

RunConfig load_config_file(const std::string& path, const std::string& preset) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config file: " + path);
  json user;
  try {
    is >> user;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config parse error in " + path + ": " + e.what());
  }
  if (!user.is_object()) throw std::invalid_argument("config root must be a JSON object");
  return config_from_json(user, preset);
}

std::string canonical_json(const RunConfig& cfg) { return to_json(cfg).dump(); }

std::string run_fingerprint(const RunConfig& cfg) { return hex64(rng::fnv1a(canonical_json(cfg))); }

std::string model_fingerprint(const RunConfig& cfg) {
  return hex64(rng::fnv1a(model_to_json(cfg.model).dump()));
}

std::string data_fingerprint(const RunConfig& cfg) {
  json j = synth_to_json(cfg.synth);
  j["master_seed"] = cfg.master_seed;
  return hex64(rng::fnv1a(j.dump()));
}

namespace {

void flatten(const json& j, const std::string& prefix,
             std::vector<std::pair<std::string, std::string>>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it.value().is_object()) flatten(it.value(), key, out);
    else out.emplace_back(key, it.value().dump());
  }
}

const std::map<std::string, std::string>& key_descriptions() {
  static const std::map<std::string, std::string> d = {
      {"master_seed", "root seed; every derived stream is a pure function of it"},
      {"preset", "default bundle: desk (small, fast) or paper (full-scale protocol)"},
      {"synth.train_patients", "patients generated for the training split"},
      {"synth.val_patients", "patients generated for the validation split"},
      {"synth.test_patients", "patients generated for the test split"},
      {"synth.image_missing", "fraction of patients with no image observations"},
      {"synth.text_missing", "fraction of patients with no text observations"},
      {"synth.prev_mortality", "target fraction of patients with a mortality onset"},
      {"synth.prev_vasopressor", "target fraction with a vasopressor onset"},
      {"synth.prev_intubation", "target fraction with an intubation onset"},
      {"synth.vital_rate", "per-hour observation rate of each vital feature"},
      {"synth.lab_rate", "per-hour observation rate of each lab feature"},
      {"synth.image_rate", "per-hour capture rate for image-bearing patients"},
      {"synth.image_h", "pixel rows per image (multiple of 7)"},
      {"synth.image_w", "pixel columns per image (multiple of 7)"},
      {"synth.text_vocab", "token vocabulary size"},
      {"synth.text_len_min", "minimum generated text length"},
      {"synth.text_len_max", "maximum generated text length"},
      {"synth.text_clusters", "latent text clusters (risk-modifier groups)"},
      {"synth.signal_ts", "hazard weight of the time-series latent"},
      {"synth.signal_image", "hazard weight of the image-only latent"},
      {"synth.signal_text", "hazard weight of the text-cluster trend interaction"},
      {"synth.stay_min", "minimum stay length in hours"},
      {"synth.stay_max", "maximum stay length in hours (<= 1440)"},
      {"model.d", "model token dimension"},
      {"model.d_enc", "frozen featurizer output dimension"},
      {"model.layers", "encoder layers per modality tower"},
      {"model.heads", "attention heads (must divide d)"},
      {"model.bottleneck_tokens", "shared fusion token count B"},
      {"model.l_fusion", "first layer with bottleneck exchange; layers = late fusion"},
      {"model.maa", "modality attention head: aa, tsa or ctaa"},
      {"model.tau", "ctaa softmax temperature"},
      {"model.dropout", "dropout rate during training (0 in all invariance tests)"},
      {"model.t_text", "text tokens per observation after pad/truncate"},
      {"model.time_mode", "relative embeds t_occurrence - t_current; absolute is the ablation"},
      {"model.umse_arm", "embedding ablation: default, no_ts, no_imgtxt, no_all"},
      {"model.k_images", "most recent images composed per window"},
      {"model.k_texts", "most recent texts composed per window"},
      {"model.static_dim", "width of the age/gender branch"},
      {"model.classifier_hidden", "hidden width of the shared 2-layer classifier"},
      {"model.multi_token", "train auxiliary per-subset classifier heads"},
      {"model.ts_only", "unimodal reference: disable image/text towers"},
      {"model.featurizer_seed", "seed freezing the stub featurizer weights"},
      {"train.epochs", "training epochs per sweep point"},
      {"train.batch_size", "balanced batch size"},
      {"train.lrs", "learning-rate sweep set"},
      {"train.weight_decay", "decoupled weight decay"},
      {"train.seeds", "training seeds; metrics average over them"},
      {"train.mma_enabled", "apply missing-modal augmentation during training"},
      {"train.mma_p_img", "probability of masking a present image"},
      {"train.mma_p_txt", "probability of masking a present text"},
      {"train.clip_norm", "global gradient-norm clip; 0 disables"},
      {"train.steps_per_epoch_cap", "cap on optimizer steps per epoch; 0 = uncapped"},
      {"train.task", "prediction target: mortality, vasopressor or intubation"},
      {"train.eval_windows_per_class", "fixed inference windows per patient per class"},
      {"sweep.modality", "modality degraded by sweep-missing: image, text or both"},
      {"sweep.fractions", "ascending masking fractions over modality-bearing cases"},
  };
  return d;
}

}  // namespace

std::vector<std::array<std::string, 4>> config_key_table() {
  std::vector<std::pair<std::string, std::string>> desk, paper;
  flatten(to_json(default_config("desk")), "", desk);
  flatten(to_json(default_config("paper")), "", paper);
  std::vector<std::array<std::string, 4>> rows;
  const auto& desc = key_descriptions();
  for (size_t i = 0; i < desk.size(); ++i) {
    auto it = desc.find(desk[i].first);
    rows.push_back({desk[i].first, desk[i].second, paper[i].second,
                    it == desc.end() ? std::string() : it->second});
  }
  return rows;
}

}  // namespace ehrfuse
