// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0

#include "ehrfuse/model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "ehrfuse/checkpoint.hpp"
#include "ehrfuse/kernels.hpp"

namespace ehrfuse::model {

using ad::ParamKind;
using ad::ParamSpec;
using ad::Tape;

namespace {

constexpr double kMaskAddend = -1e30;
constexpr std::array<const char*, 3> kTowerNames = {"ts", "img", "txt"};

ad::Parameter& param(ad::ParameterSet& set, const std::string& id) {
  auto it = set.find(id);
  if (it == set.end()) throw std::invalid_argument("missing parameter: " + id);
  return it->second;
}

}  // namespace

Maa maa_from_string(const std::string& s) {
  if (s == "aa") return Maa::aa;
  if (s == "tsa") return Maa::tsa;
  if (s == "ctaa") return Maa::ctaa;
  throw std::invalid_argument("unknown maa head: " + s);
}

const char* maa_name(Maa m) {
  switch (m) {
    case Maa::aa: return "aa";
    case Maa::tsa: return "tsa";
    case Maa::ctaa: return "ctaa";
  }
  return "?";
}

ModelSpec spec_from_config(const RunConfig& cfg) {
  ModelSpec s;
  s.d = cfg.model.d;
  s.layers = cfg.model.layers;
  s.heads = cfg.model.heads;
  s.bottleneck = cfg.model.bottleneck_tokens;
  s.l_fusion = cfg.model.l_fusion;
  s.maa = maa_from_string(cfg.model.maa);
  s.tau = cfg.model.tau;
  s.dropout = cfg.model.dropout;
  s.static_dim = cfg.model.static_dim;
  s.classifier_hidden = cfg.model.classifier_hidden;
  s.multi_token = cfg.model.multi_token;
  s.ts_only = cfg.model.ts_only;
  if (s.multi_token && s.ts_only)
    throw std::invalid_argument("config: multi_token requires the full tri-modal model");
  s.umse.d = cfg.model.d;
  s.umse.d_enc = cfg.model.d_enc;
  s.umse.t_text = cfg.model.t_text;
  s.umse.vocab = cfg.synth.text_vocab;
  s.umse.image_h = cfg.synth.image_h;
  s.umse.image_w = cfg.synth.image_w;
  s.umse.k_images = cfg.model.k_images;
  s.umse.k_texts = cfg.model.k_texts;
  s.umse.time_mode = umse::time_mode_from_string(cfg.model.time_mode);
  s.umse.arm = umse::arm_from_string(cfg.model.umse_arm);
  s.umse.featurizer_seed = cfg.model.featurizer_seed;
  return s;
}

bool FusionModel::has_tower(int modality) const {
  return modality == 0 || !spec.ts_only;
}

std::vector<ParamSpec> FusionModel::param_catalog(const ModelSpec& s) {
  std::vector<ParamSpec> specs = umse::param_specs(s.umse);
  const int64_t d = s.d;
  const int64_t ffn = 4 * d;

  for (int m = 0; m < 3; ++m) {
    if (m > 0 && s.ts_only) continue;
    const std::string t = std::string("tower.") + kTowerNames[static_cast<size_t>(m)] + ".";
    for (int l = 1; l <= s.layers; ++l) {
      const std::string p = t + "l" + std::to_string(l) + ".";
      specs.push_back({p + "ln1.g", 1, d, ParamKind::norm_scale, true});
      specs.push_back({p + "ln1.b", 1, d, ParamKind::bias, true});
      for (const char* w : {"wq", "wk", "wv", "wo"})
        specs.push_back({p + "attn." + w, d, d, ParamKind::weight, true});
      for (const char* b : {"bq", "bk", "bv", "bo"})
        specs.push_back({p + "attn." + b, 1, d, ParamKind::bias, true});
      specs.push_back({p + "ln2.g", 1, d, ParamKind::norm_scale, true});
      specs.push_back({p + "ln2.b", 1, d, ParamKind::bias, true});
      specs.push_back({p + "ffn.w1", d, ffn, ParamKind::weight, true});
      specs.push_back({p + "ffn.b1", 1, ffn, ParamKind::bias, true});
      specs.push_back({p + "ffn.w2", ffn, d, ParamKind::weight, true});
      specs.push_back({p + "ffn.b2", 1, d, ParamKind::bias, true});
    }
  }

  specs.push_back({"cls.ts", 1, d, ParamKind::token, true});
  if (s.maa != Maa::tsa && !s.ts_only) {
    specs.push_back({"cls.img", 1, d, ParamKind::token, true});
    specs.push_back({"cls.txt", 1, d, ParamKind::token, true});
  }
  specs.push_back({"bottleneck.init", s.bottleneck, d, ParamKind::token, true});
  specs.push_back({"static.w", 2, s.static_dim, ParamKind::weight, true});
  specs.push_back({"static.b", 1, s.static_dim, ParamKind::bias, true});

  auto add_classifier = [&](const std::string& prefix) {
    const int64_t in = d + s.static_dim;
    const int64_t h = s.classifier_hidden;
    specs.push_back({prefix + ".w1", in, h, ParamKind::weight, true});
    specs.push_back({prefix + ".b1", 1, h, ParamKind::bias, true});
    specs.push_back({prefix + ".ln.g", 1, h, ParamKind::norm_scale, true});
    specs.push_back({prefix + ".ln.b", 1, h, ParamKind::bias, true});
    specs.push_back({prefix + ".w2", h, 1, ParamKind::weight, true});
    specs.push_back({prefix + ".b2", 1, 1, ParamKind::bias, true});
  };
  if (s.multi_token) {
    for (const char* k : {"s00", "s01", "s10", "s11"}) add_classifier(std::string("clf.") + k);
  } else {
    add_classifier("clf");
  }

  if (s.maa == Maa::ctaa) {
    specs.push_back({"ctaa.w", 1, 3, ParamKind::bias, true});  // zero-initialized logits
  }
  return specs;
}

FusionModel::FusionModel(const ModelSpec& s, uint64_t init_seed)
    : spec(s),
      params(ad::seeded_init(param_catalog(s), init_seed)),
      imgf(s.umse.image_h, s.umse.image_w, s.umse.d_enc, s.umse.featurizer_seed),
      txtf(s.umse.vocab, s.umse.d_enc, s.umse.featurizer_seed) {}

TowerLayerOut tower_layer_forward(Tape& tape, ad::ParameterSet& params, const ModelSpec& spec,
                                  const std::string& tower, int layer, Tape::V tokens,
                                  std::optional<Tape::V> z_fsn,
                                  const std::vector<double>& pad_flags, double dropout_rate) {
  const int64_t n_own = tape.value(tokens).rows();
  if (static_cast<int64_t>(pad_flags.size()) != n_own)
    throw std::invalid_argument("tower_layer_forward: pad flag count " +
                                std::to_string(pad_flags.size()) + " != token rows " +
                                std::to_string(n_own));

  Tape::V x = tokens;
  int64_t n_keys = n_own;
  if (z_fsn) {
    x = tape.concat_rows(x, *z_fsn);
    n_keys += tape.value(*z_fsn).rows();
  }

  std::vector<double> addends(static_cast<size_t>(n_keys), 0.0);
  for (size_t i = 0; i < pad_flags.size(); ++i) {
    if (pad_flags[i] > 0.0) addends[i] = kMaskAddend;  // bottleneck rows stay attendable
  }
  Tape::V mask = tape.constant(Tensor::row(addends));

  const std::string p = "tower." + tower + ".l" + std::to_string(layer) + ".";
  const int heads = spec.heads;
  const int64_t dh = spec.d / heads;

  Tape::V h1 = tape.layer_norm(x, tape.leaf(param(params, p + "ln1.g")),
                               tape.leaf(param(params, p + "ln1.b")));
  Tape::V q = tape.add_rowvec(tape.matmul(h1, tape.leaf(param(params, p + "attn.wq"))),
                              tape.leaf(param(params, p + "attn.bq")));
  Tape::V k = tape.add_rowvec(tape.matmul(h1, tape.leaf(param(params, p + "attn.wk"))),
                              tape.leaf(param(params, p + "attn.bk")));
  Tape::V v = tape.add_rowvec(tape.matmul(h1, tape.leaf(param(params, p + "attn.wv"))),
                              tape.leaf(param(params, p + "attn.bv")));

  Tape::V heads_out = -1;
  for (int h = 0; h < heads; ++h) {
    Tape::V qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
    Tape::V kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
    Tape::V vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
    Tape::V scores = tape.divide(tape.matmul(qh, kh, false, true),
                                 std::sqrt(static_cast<double>(dh)));
    scores = tape.add_rowvec(scores, mask);
    Tape::V attn = tape.softmax_rows(scores);
    Tape::V hv = tape.matmul(attn, vh);
    heads_out = heads_out < 0 ? hv : tape.concat_cols(heads_out, hv);
  }
  Tape::V attn_out = tape.add_rowvec(tape.matmul(heads_out, tape.leaf(param(params, p + "attn.wo"))),
                                     tape.leaf(param(params, p + "attn.bo")));
  attn_out = tape.dropout(attn_out, dropout_rate);
  Tape::V y1 = tape.add(x, attn_out);

  Tape::V h2 = tape.layer_norm(y1, tape.leaf(param(params, p + "ln2.g")),
                               tape.leaf(param(params, p + "ln2.b")));
  Tape::V f = tape.add_rowvec(tape.matmul(h2, tape.leaf(param(params, p + "ffn.w1"))),
                              tape.leaf(param(params, p + "ffn.b1")));
  f = tape.gelu(f);
  f = tape.add_rowvec(tape.matmul(f, tape.leaf(param(params, p + "ffn.w2"))),
                      tape.leaf(param(params, p + "ffn.b2")));
  f = tape.dropout(f, dropout_rate);
  Tape::V y = tape.add(y1, f);

  TowerLayerOut out;
  if (z_fsn) {
    out.tokens = tape.slice_rows(y, 0, n_own);
    out.fsn = tape.slice_rows(y, n_own, n_keys);
  } else {
    out.tokens = y;
  }
  return out;
}

Tape::V skip_average(Tape& tape, Tape::V z_ts, std::optional<Tape::V> z_img,
                     std::optional<Tape::V> z_txt) {
  Tape::V acc = z_ts;
  int count = 1;
  if (z_img) {
    acc = tape.add(acc, *z_img);
    ++count;
  }
  if (z_txt) {
    acc = tape.add(acc, *z_txt);
    ++count;
  }
  return tape.divide(acc, static_cast<double>(count));
}

namespace {

struct TowerState {
  bool executed = false;  // tower runs (present, or filler mode)
  bool present = false;   // contributes to fusion and to the decision head
  bool has_cls = false;
  Tape::V tokens = -1;
  std::vector<double> pad_flags;
};

Tape::V classifier_logit(Tape& tape, ad::ParameterSet& params, const std::string& head,
                         Tape::V cls_row, Tape::V static_repr) {
  Tape::V in = tape.concat_cols(cls_row, static_repr);
  Tape::V h = tape.add_rowvec(tape.matmul(in, tape.leaf(param(params, head + ".w1"))),
                              tape.leaf(param(params, head + ".b1")));
  h = tape.layer_norm(h, tape.leaf(param(params, head + ".ln.g")),
                      tape.leaf(param(params, head + ".ln.b")));
  h = tape.relu(h);
  return tape.add_rowvec(tape.matmul(h, tape.leaf(param(params, head + ".w2"))),
                         tape.leaf(param(params, head + ".b2")));
}

}  // namespace

ForwardResult forward_window(Tape& tape, FusionModel& m, const cohort::PatientRecord& r,
                             const cohort::Window& w, FillerKind filler,
                             std::optional<Subset> subset, rng::Stream* filler_rng) {
  const ModelSpec& spec = m.spec;
  const double rate = tape.has_rng() ? spec.dropout : 0.0;  // Tape::dropout is a no-op at rate 0

  bool has_img = w.presence.has_image && !spec.ts_only;
  bool has_txt = w.presence.has_text && !spec.ts_only;
  if (subset) {
    has_img = has_img && subset->image;
    has_txt = has_txt && subset->text;
  }

  cohort::Window masked = w;
  masked.presence.has_image = has_img;
  masked.presence.has_text = has_txt;
  umse::ComposeInput in = umse::compose_input(r, masked, spec.umse, m.imgf);
  if (in.ts_values.empty())
    throw std::invalid_argument("forward_window: window has no in-horizon time-series data");
  has_img = in.has_image;  // presence with no eligible observation collapses to absent
  has_txt = in.has_text;

  umse::Tokens tok = umse::build_tokens(tape, in, m.params, m.txtf, spec.umse);

  std::array<TowerState, 3> towers;
  towers[0].executed = true;
  towers[0].present = true;
  towers[0].has_cls = true;
  towers[0].tokens = tok.ts;
  towers[0].pad_flags.assign(static_cast<size_t>(tok.n_ts), 0.0);

  const bool run_filler = filler != FillerKind::none && !spec.ts_only;
  auto filler_tokens = [&](int rows) {
    Tensor t(rows, spec.d);
    if (filler == FillerKind::ones) {
      for (int64_t i = 0; i < t.size(); ++i) t[i] = 1.0;
    } else if (filler == FillerKind::random) {
      rng::Stream fallback(rng::derive(spec.umse.featurizer_seed, "filler"));
      rng::Stream& s = filler_rng ? *filler_rng : fallback;
      for (int64_t i = 0; i < t.size(); ++i) t[i] = s.normal();
    }
    return tape.constant(std::move(t));
  };

  if (m.has_tower(1)) {
    TowerState& img = towers[1];
    img.present = has_img;
    img.has_cls = spec.maa != Maa::tsa;
    if (has_img) {
      img.executed = true;
      img.tokens = tok.image;
      img.pad_flags.assign(static_cast<size_t>(tok.n_image), 0.0);
    } else if (run_filler) {
      img.executed = true;
      img.tokens = filler_tokens(ImageFeaturizer::kTokens * spec.umse.k_images);
      img.pad_flags.assign(static_cast<size_t>(ImageFeaturizer::kTokens * spec.umse.k_images),
                           0.0);
    }
  }
  if (m.has_tower(2)) {
    TowerState& txt = towers[2];
    txt.present = has_txt;
    txt.has_cls = spec.maa != Maa::tsa;
    if (has_txt) {
      txt.executed = true;
      txt.tokens = tok.text;
      txt.pad_flags = tok.text_pad;
    } else if (run_filler) {
      txt.executed = true;
      txt.tokens = filler_tokens(spec.umse.t_text * spec.umse.k_texts);
      txt.pad_flags.assign(static_cast<size_t>(spec.umse.t_text * spec.umse.k_texts), 0.0);
    }
  }

  // CLS tokens prepend as row 0 where the MAA rule places them.
  for (int mi = 0; mi < 3; ++mi) {
    TowerState& t = towers[static_cast<size_t>(mi)];
    if (!t.executed || !t.has_cls) continue;
    const std::string cls_id = std::string("cls.") + kTowerNames[static_cast<size_t>(mi)];
    t.tokens = tape.concat_rows(tape.leaf(param(m.params, cls_id)), t.tokens);
    t.pad_flags.insert(t.pad_flags.begin(), 0.0);
  }

  std::optional<Tape::V> z_fsn;
  for (int l = 1; l <= spec.layers; ++l) {
    const bool fused = l >= spec.l_fusion;
    if (fused && !z_fsn) z_fsn = tape.leaf(param(m.params, "bottleneck.init"));
    std::array<std::optional<Tape::V>, 3> fsn_out;
    for (int mi = 0; mi < 3; ++mi) {
      TowerState& t = towers[static_cast<size_t>(mi)];
      if (!t.executed) continue;
      TowerLayerOut out = tower_layer_forward(tape, m.params, spec,
                                              kTowerNames[static_cast<size_t>(mi)], l, t.tokens,
                                              fused ? z_fsn : std::nullopt, t.pad_flags, rate);
      t.tokens = out.tokens;
      if (fused && t.present) fsn_out[static_cast<size_t>(mi)] = out.fsn;
    }
    if (fused) {
      z_fsn = skip_average(tape, *fsn_out[0], fsn_out[1], fsn_out[2]);
    }
  }

  // Static branch: (age/100, gender) -> relu(affine).
  Tape::V stat = tape.constant(Tensor::row({r.age / 100.0, static_cast<double>(r.gender)}));
  stat = tape.relu(tape.add_rowvec(tape.matmul(stat, tape.leaf(param(m.params, "static.w"))),
                                   tape.leaf(param(m.params, "static.b"))));

  std::string head = "clf";
  if (spec.multi_token) {
    Subset eff{has_img, has_txt};
    head = "clf." + (subset ? subset->key() : eff.key());
  }

  std::array<std::optional<Tape::V>, 3> logits;
  for (int mi = 0; mi < 3; ++mi) {
    TowerState& t = towers[static_cast<size_t>(mi)];
    if (!t.present || !t.has_cls) continue;
    Tape::V cls = tape.slice_rows(t.tokens, 0, 1);
    logits[static_cast<size_t>(mi)] = classifier_logit(tape, m.params, head, cls, stat);
  }

  ForwardResult res;
  res.token_counts = {tok.n_ts, has_img ? tok.n_image : 0, has_txt ? tok.n_text : 0};
  res.modality_logits.fill(std::numeric_limits<double>::quiet_NaN());
  for (int mi = 0; mi < 3; ++mi) {
    if (logits[static_cast<size_t>(mi)])
      res.modality_logits[static_cast<size_t>(mi)] = tape.scalar(*logits[static_cast<size_t>(mi)]);
  }

  if (spec.maa == Maa::tsa) {
    res.logit = *logits[0];
    res.attention = {1.0, 0.0, 0.0};
  } else {
    // AA is the uniform-weight case of the same weighted combine: weights are
    // a softmax over per-modality logits (zeros for AA, w/tau for CTAA) with
    // absent modalities masked out, so they renormalize over present ones.
    Tape::V wvec;
    if (spec.maa == Maa::ctaa) {
      wvec = tape.divide(tape.leaf(param(m.params, "ctaa.w")), spec.tau);
    } else {
      wvec = tape.constant(Tensor(1, 3));
    }
    std::vector<double> mask_add(3, 0.0);
    for (int mi = 0; mi < 3; ++mi) {
      if (!towers[static_cast<size_t>(mi)].present) mask_add[static_cast<size_t>(mi)] = kMaskAddend;
    }
    Tape::V weights = tape.softmax_rows(tape.add(wvec, tape.constant(Tensor::row(mask_add))));
    Tape::V lvec = -1;
    for (int mi = 0; mi < 3; ++mi) {
      Tape::V li = logits[static_cast<size_t>(mi)] ? *logits[static_cast<size_t>(mi)]
                                                   : tape.constant(Tensor::scalar(0.0));
      lvec = lvec < 0 ? li : tape.concat_cols(lvec, li);
    }
    res.logit = tape.sum_all(tape.mul(weights, lvec));
    const Tensor& wt = tape.value(weights);
    res.attention = {wt[0], wt[1], wt[2]};
  }

  res.prob = tape.sigmoid(res.logit);
  res.probability = tape.scalar(res.prob);
  return res;
}

ForwardResult eval_window(FusionModel& m, const cohort::PatientRecord& r, const cohort::Window& w,
                          FillerKind filler, rng::Stream* filler_rng) {
  Tape tape;  // no rng: dropout off
  return forward_window(tape, m, r, w, filler, std::nullopt, filler_rng);
}

std::array<double, 3> maa_weights(const FusionModel& m, bool has_image, bool has_txt) {
  std::array<double, 3> raw{0.0, 0.0, 0.0};
  if (m.spec.maa == Maa::ctaa) {
    const Tensor& w = m.params.at("ctaa.w").data;
    for (int i = 0; i < 3; ++i) raw[static_cast<size_t>(i)] = w[i] / m.spec.tau;
  } else if (m.spec.maa == Maa::tsa) {
    return {1.0, 0.0, 0.0};
  }
  std::array<bool, 3> present = {true, has_image, has_txt};
  double in[3], out[3];
  for (int i = 0; i < 3; ++i)
    in[i] = present[static_cast<size_t>(i)] ? raw[static_cast<size_t>(i)] : kMaskAddend;
  kernels::active().softmax_row(in, out, 3);
  return {out[0], out[1], out[2]};
}

void save_model(const std::string& path, const FusionModel& m,
                const std::vector<std::pair<double, double>>& norm_stats,
                const CheckpointMeta& meta) {
  Checkpoint ckpt = snapshot(m.params);
  ckpt.config_json = meta.config_json;
  ckpt.model_fp = meta.model_fp;
  ckpt.data_fp = meta.data_fp;
  ckpt.norm_stats = norm_stats;
  save_checkpoint(path, ckpt);
}

LoadedModel load_model(const std::string& path, const RunConfig& cfg) {
  Checkpoint ckpt = load_checkpoint(path);
  const std::string want = model_fingerprint(cfg);
  if (ckpt.model_fp != want) {
    throw std::runtime_error("checkpoint model fingerprint " + ckpt.model_fp +
                             " does not match requested config " + want);
  }
  LoadedModel out{FusionModel(spec_from_config(cfg), 0), {}, ckpt.data_fp, ckpt.config_json};
  load_into(ckpt, out.model.params);
  if (ckpt.norm_stats.size() > static_cast<size_t>(cohort::kNumTsFeatures))
    throw std::runtime_error("checkpoint carries more normalization stats than features");
  for (size_t f = 0; f < ckpt.norm_stats.size(); ++f) {
    const auto [lo, hi] = ckpt.norm_stats[f];
    if (std::isnan(lo) && std::isnan(hi)) continue;  // feature not retained at fit time
    out.stats.per_feature[f] = cohort::NormalizationStats::Range{lo, hi};
  }
  return out;
}

}  // namespace ehrfuse::model
