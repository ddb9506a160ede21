// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0

#include "ehrfuse/embedding.hpp"

#include <algorithm>
#include <stdexcept>

namespace ehrfuse::umse {

using ad::ParamKind;
using ad::ParamSpec;
using ad::Tape;

TimeMode time_mode_from_string(const std::string& s) {
  if (s == "relative") return TimeMode::relative;
  if (s == "absolute") return TimeMode::absolute;
  throw std::invalid_argument("unknown time mode: " + s);
}

UmseArm arm_from_string(const std::string& s) {
  if (s == "default") return {true, true};
  if (s == "no_ts") return {false, true};
  if (s == "no_imgtxt") return {true, false};
  if (s == "no_all") return {false, false};
  throw std::invalid_argument("unknown umse arm: " + s);
}

std::vector<ParamSpec> param_specs(const UmseSpec& spec) {
  const int64_t d = spec.d;
  const int64_t de = spec.d_enc;
  return {
      {"umse.ts_value.w", 1, d, ParamKind::weight, true},
      {"umse.ts_value.b", 1, d, ParamKind::bias, true},
      {"umse.time.w", 1, d, ParamKind::weight, true, kTimeWeightInitScale},
      {"umse.time.b", 1, d, ParamKind::bias, true},
      {"umse.ft_table", cohort::kNumFeatureTypes, d, ParamKind::table, true},
      {"umse.image_proj.w", de, d, ParamKind::weight, true},
      {"umse.image_proj.b", 1, d, ParamKind::bias, true},
      {"umse.text_proj.w", de, d, ParamKind::weight, true},
      {"umse.text_proj.b", 1, d, ParamKind::bias, true},
  };
}

double encode_time(double t_occurrence, double t_current, TimeMode mode) {
  return mode == TimeMode::relative ? t_occurrence - t_current : t_occurrence;
}

namespace {

ad::Parameter& param(ad::ParameterSet& set, const std::string& id) {
  auto it = set.find(id);
  if (it == set.end()) throw std::invalid_argument("missing parameter: " + id);
  return it->second;
}

// column of encoded scalars -> tanh(x * W + b), rows n x d
Tape::V affine_tanh_rows(Tape& tape, ad::ParameterSet& params, const std::string& w_id,
                         const std::string& b_id, const std::vector<double>& xs) {
  Tape::V col = tape.constant(Tensor::col(xs));
  Tape::V pre = tape.matmul(col, tape.leaf(param(params, w_id)));
  pre = tape.add_rowvec(pre, tape.leaf(param(params, b_id)));
  return tape.tanh(pre);
}

}  // namespace

ad::Tape::V embed_time(Tape& tape, ad::ParameterSet& params, double t_occurrence,
                       double t_current, TimeMode mode) {
  return affine_tanh_rows(tape, params, "umse.time.w", "umse.time.b",
                          {encode_time(t_occurrence, t_current, mode)});
}

ad::Tape::V embed_feature_type(Tape& tape, ad::ParameterSet& params, int ft) {
  if (ft < 0 || ft >= cohort::kNumFeatureTypes)
    throw std::invalid_argument("embed_feature_type: id " + std::to_string(ft) + " out of range");
  return tape.lookup(tape.leaf(param(params, "umse.ft_table")), {static_cast<int32_t>(ft)});
}

ad::Tape::V embed_value_ts(Tape& tape, ad::ParameterSet& params, double v) {
  return affine_tanh_rows(tape, params, "umse.ts_value.w", "umse.ts_value.b", {v});
}

ad::Tape::V embed_value_image(Tape& tape, ad::ParameterSet& params, const ImageFeaturizer& imgf,
                              const Tensor& pixels) {
  Tape::V feat = tape.constant(imgf.apply(pixels));
  Tape::V proj = tape.matmul(feat, tape.leaf(param(params, "umse.image_proj.w")));
  return tape.add_rowvec(proj, tape.leaf(param(params, "umse.image_proj.b")));
}

TextEmbedding embed_value_text(Tape& tape, ad::ParameterSet& params, const TextFeaturizer& txtf,
                               const std::vector<int32_t>& ids, int t_text) {
  std::vector<int32_t> padded(static_cast<size_t>(t_text), 0);
  TextEmbedding out;
  out.pad.assign(static_cast<size_t>(t_text), 1.0);
  const size_t keep = std::min(ids.size(), static_cast<size_t>(t_text));
  for (size_t i = 0; i < keep; ++i) {
    padded[i] = ids[i];
    out.pad[i] = 0.0;
  }
  Tape::V feat = tape.constant(txtf.apply(padded));
  Tape::V proj = tape.matmul(feat, tape.leaf(param(params, "umse.text_proj.w")));
  out.tokens = tape.add_rowvec(proj, tape.leaf(param(params, "umse.text_proj.b")));
  return out;
}

ComposeInput compose_input(const cohort::PatientRecord& r, const cohort::Window& w,
                           const UmseSpec& spec, const ImageFeaturizer& imgf) {
  ComposeInput in;
  for (const auto& o : r.ts) {
    if (o.t < w.horizon_start || o.t > w.t_current) continue;
    in.ts_values.push_back(o.v);
    in.ts_time.push_back(encode_time(o.t, w.t_current, spec.time_mode));
    in.ts_ft.push_back(static_cast<int32_t>(o.f));
  }
  if (w.presence.has_image) {
    // indices of the K most recent captures with time <= t_current
    std::vector<size_t> eligible;
    for (size_t i = 0; i < r.images.size(); ++i) {
      if (r.images[i].t <= w.t_current) eligible.push_back(i);
    }
    const size_t k = std::min(eligible.size(), static_cast<size_t>(spec.k_images));
    for (size_t j = eligible.size() - k; j < eligible.size(); ++j) {
      in.image_feats.push_back(imgf.apply(r.images[eligible[j]].pixels));
      in.image_time.push_back(encode_time(r.images[eligible[j]].t, w.t_current, spec.time_mode));
    }
    in.has_image = !in.image_feats.empty();
  }
  if (w.presence.has_text) {
    std::vector<size_t> eligible;
    for (size_t i = 0; i < r.texts.size(); ++i) {
      if (r.texts[i].t <= w.t_current) eligible.push_back(i);
    }
    const size_t k = std::min(eligible.size(), static_cast<size_t>(spec.k_texts));
    for (size_t j = eligible.size() - k; j < eligible.size(); ++j) {
      std::vector<int32_t> padded(static_cast<size_t>(spec.t_text), 0);
      std::vector<double> pad(static_cast<size_t>(spec.t_text), 1.0);
      const auto& tokens = r.texts[eligible[j]].tokens;
      const size_t keep = std::min(tokens.size(), static_cast<size_t>(spec.t_text));
      for (size_t i = 0; i < keep; ++i) {
        padded[i] = tokens[i];
        pad[i] = 0.0;
      }
      in.text_ids.push_back(std::move(padded));
      in.text_pad.push_back(std::move(pad));
      in.text_time.push_back(encode_time(r.texts[eligible[j]].t, w.t_current, spec.time_mode));
    }
    in.has_text = !in.text_ids.empty();
  }
  return in;
}

Tokens build_tokens(Tape& tape, const ComposeInput& in, ad::ParameterSet& params,
                    const TextFeaturizer& txtf, const UmseSpec& spec) {
  Tokens out;

  if (!in.ts_values.empty()) {
    Tape::V value = affine_tanh_rows(tape, params, "umse.ts_value.w", "umse.ts_value.b",
                                     in.ts_values);
    if (spec.arm.ts_umse) {
      Tape::V time = affine_tanh_rows(tape, params, "umse.time.w", "umse.time.b", in.ts_time);
      Tape::V ft = tape.lookup(tape.leaf(param(params, "umse.ft_table")), in.ts_ft);
      value = tape.add(tape.add(value, time), ft);
    }
    out.ts = value;
    out.n_ts = static_cast<int>(in.ts_values.size());
  }

  auto broadcast_time_ft = [&](Tape::V tokens, double time_code, int ft_id) {
    Tape::V time = affine_tanh_rows(tape, params, "umse.time.w", "umse.time.b", {time_code});
    Tape::V ft = tape.lookup(tape.leaf(param(params, "umse.ft_table")),
                             {static_cast<int32_t>(ft_id)});
    return tape.add_rowvec(tape.add_rowvec(tokens, time), ft);
  };

  for (size_t i = 0; i < in.image_feats.size(); ++i) {
    Tape::V feat = tape.constant(in.image_feats[i]);
    Tape::V proj = tape.matmul(feat, tape.leaf(param(params, "umse.image_proj.w")));
    Tape::V tok = tape.add_rowvec(proj, tape.leaf(param(params, "umse.image_proj.b")));
    if (spec.arm.imgtxt_umse) {
      tok = broadcast_time_ft(tok, in.image_time[i], cohort::kImageFeature);
    }
    out.image = out.image < 0 ? tok : tape.concat_rows(out.image, tok);
  }
  out.n_image = static_cast<int>(in.image_feats.size()) * ImageFeaturizer::kTokens;

  for (size_t i = 0; i < in.text_ids.size(); ++i) {
    Tape::V feat = tape.constant(txtf.apply(in.text_ids[i]));
    Tape::V proj = tape.matmul(feat, tape.leaf(param(params, "umse.text_proj.w")));
    Tape::V tok = tape.add_rowvec(proj, tape.leaf(param(params, "umse.text_proj.b")));
    if (spec.arm.imgtxt_umse) {
      tok = broadcast_time_ft(tok, in.text_time[i], cohort::kTextFeature);
    }
    out.text = out.text < 0 ? tok : tape.concat_rows(out.text, tok);
    out.text_pad.insert(out.text_pad.end(), in.text_pad[i].begin(), in.text_pad[i].end());
  }
  out.n_text = static_cast<int>(out.text_pad.size());

  return out;
}

}  // namespace ehrfuse::umse
