// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ehrfuse/embedding.hpp"
#include "ehrfuse/synth.hpp"

using namespace ehrfuse;
using namespace ehrfuse::umse;
using ad::Tape;

namespace {

UmseSpec desk_spec() {
  UmseSpec s;
  s.d = 8;
  s.d_enc = 6;
  s.t_text = 5;
  s.vocab = 64;
  s.image_h = 14;
  s.image_w = 14;
  return s;
}

ad::ParameterSet make_params(const UmseSpec& s, uint64_t seed = 99) {
  return ad::seeded_init(param_specs(s), seed);
}

void set_all(ad::ParameterSet& ps, const std::string& id, double v) {
  auto& t = ps.at(id).data;
  for (int64_t i = 0; i < t.size(); ++i) t[i] = v;
}

cohort::PatientRecord tiny_record(const UmseSpec& s) {
  cohort::PatientRecord r;
  r.id = "e1";
  r.age = 44;
  r.gender = 0;
  r.stay_end = 60.0;
  for (int f = 0; f < 6; ++f) {
    for (double t = 0.25; t < 60.0; t += 2.0 + 0.5 * f) {
      r.ts.push_back({cohort::quantize_time(t), f, 0.1 * f + 0.01 * t});
    }
  }
  r.images.push_back({10.0, Tensor::full(s.image_h, s.image_w, 0.3)});
  r.images.push_back({30.0, Tensor::full(s.image_h, s.image_w, -0.2)});
  r.texts.push_back({1.0, {3, 9, 12}});
  cohort::sort_observations(r);
  return r;
}

}  // namespace

TEST_CASE("embed_time worked examples") {
  UmseSpec s = desk_spec();
  auto ps = make_params(s);

  SUBCASE("zero weights give the zero vector") {
    set_all(ps, "umse.time.w", 0.0);
    set_all(ps, "umse.time.b", 0.0);
    Tape tape;
    auto v = embed_time(tape, ps, 17.0, 24.0, TimeMode::relative);
    for (int64_t i = 0; i < s.d; ++i) CHECK(tape.value(v)[i] == 0.0);
  }

  SUBCASE("unit weight embeds tanh of the delta") {
    UmseSpec s1 = desk_spec();
    s1.d = 1;
    auto p1 = make_params(s1);
    p1.at("umse.time.w").data[0] = 1.0;
    p1.at("umse.time.b").data[0] = 0.0;
    Tape tape;
    auto v = embed_time(tape, p1, 22.0, 24.0, TimeMode::relative);
    CHECK(tape.value(v)[0] == doctest::Approx(std::tanh(-2.0)).epsilon(1e-12));
    CHECK(tape.value(v)[0] == doctest::Approx(-0.96403).epsilon(1e-4));
  }

  SUBCASE("relative mode is bitwise shift invariant") {
    Tape tape;
    for (double delta : {1.0, 100.0, -1.0}) {
      auto a = embed_time(tape, ps, 22.25, 24.0, TimeMode::relative);
      auto b = embed_time(tape, ps, 22.25 + delta, 24.0 + delta, TimeMode::relative);
      CHECK(tape.value(a) == tape.value(b));
    }
  }

  SUBCASE("absolute mode embeds the occurrence time and loses shift invariance") {
    Tape tape;
    auto a = embed_time(tape, ps, 22.0, 24.0, TimeMode::absolute);
    auto b = embed_time(tape, ps, 122.0, 124.0, TimeMode::absolute);
    CHECK_FALSE(tape.value(a) == tape.value(b));
  }
}

TEST_CASE("embed_feature_type: lookup semantics and gradient sparsity") {
  UmseSpec s = desk_spec();
  auto ps = make_params(s);

  Tape tape;
  auto a = embed_feature_type(tape, ps, 3);
  auto b = embed_feature_type(tape, ps, 3);
  CHECK(tape.value(a) == tape.value(b));
  CHECK_THROWS_AS(embed_feature_type(tape, ps, cohort::kNumFeatureTypes), std::invalid_argument);

  SUBCASE("zero-initialized table returns zero") {
    set_all(ps, "umse.ft_table", 0.0);
    Tape t2;
    auto v = embed_feature_type(t2, ps, 5);
    for (int64_t i = 0; i < s.d; ++i) CHECK(t2.value(v)[i] == 0.0);
  }

  SUBCASE("a loss touching only FT=3 puts gradient only in row 3") {
    for (auto& [id, p] : ps) p.reset_grad();
    Tape t2;
    auto v = embed_feature_type(t2, ps, 3);
    t2.backward(t2.sum_all(v));
    const auto& g = ps.at("umse.ft_table").grad;
    for (int64_t r = 0; r < g.rows(); ++r) {
      for (int64_t c = 0; c < g.cols(); ++c) {
        if (r == 3) CHECK(g.at(r, c) == 1.0);
        else CHECK(g.at(r, c) == 0.0);
      }
    }
  }
}

TEST_CASE("embed_value_ts: zero map, pre-activation linearity, worked values") {
  UmseSpec s = desk_spec();
  auto ps = make_params(s);

  SUBCASE("zero weights give zero") {
    set_all(ps, "umse.ts_value.w", 0.0);
    set_all(ps, "umse.ts_value.b", 0.0);
    Tape tape;
    auto v = embed_value_ts(tape, ps, 0.7);
    for (int64_t i = 0; i < s.d; ++i) CHECK(tape.value(v)[i] == 0.0);
  }

  SUBCASE("pre-activation is linear when the bias is zero") {
    set_all(ps, "umse.ts_value.b", 0.0);
    Tape tape;
    auto v1 = embed_value_ts(tape, ps, 0.31);
    auto v2 = embed_value_ts(tape, ps, 0.62);
    for (int64_t i = 0; i < s.d; ++i) {
      const double p1 = std::atanh(tape.value(v1)[i]);
      const double p2 = std::atanh(tape.value(v2)[i]);
      CHECK(p2 == doctest::Approx(2.0 * p1).epsilon(1e-9));
    }
  }

  SUBCASE("two-dimensional worked example") {
    UmseSpec s2 = desk_spec();
    s2.d = 2;
    auto p2 = make_params(s2);
    p2.at("umse.ts_value.w").data[0] = 1.0;
    p2.at("umse.ts_value.w").data[1] = -1.0;
    set_all(p2, "umse.ts_value.b", 0.0);
    Tape tape;
    auto v = embed_value_ts(tape, p2, 0.5);
    CHECK(tape.value(v)[0] == doctest::Approx(0.46212).epsilon(1e-4));
    CHECK(tape.value(v)[1] == doctest::Approx(-0.46212).epsilon(1e-4));
  }
}

TEST_CASE("embed_value_image: 49 rows, frozen determinism, grid errors") {
  UmseSpec s = desk_spec();
  auto ps = make_params(s);
  ImageFeaturizer f1(s.image_h, s.image_w, s.d_enc, s.featurizer_seed);
  ImageFeaturizer f2(s.image_h, s.image_w, s.d_enc, s.featurizer_seed);

  Tensor grid = Tensor::full(s.image_h, s.image_w, 0.25);
  Tape tape;
  auto v = embed_value_image(tape, ps, f1, grid);
  CHECK(tape.value(v).rows() == 49);
  CHECK(tape.value(v).cols() == s.d);

  CHECK(f1.apply(grid) == f2.apply(grid));  // same seed, same bits

  SUBCASE("zero grid maps to zero featurizer output (bias is zero by scheme)") {
    Tensor zeros(s.image_h, s.image_w);
    Tensor feat = f1.apply(zeros);
    for (int64_t i = 0; i < feat.size(); ++i) CHECK(feat[i] == 0.0);
  }

  SUBCASE("wrong grid size errors") {
    CHECK_THROWS_AS(f1.apply(Tensor(7, 7)), std::invalid_argument);
  }
  SUBCASE("grid not divisible by 7 is rejected at construction") {
    CHECK_THROWS_AS(ImageFeaturizer(15, 14, 4, 1), std::invalid_argument);
  }
}

TEST_CASE("embed_value_text: pad/truncate to fixed rows, vocabulary errors") {
  UmseSpec s = desk_spec();
  auto ps = make_params(s);
  TextFeaturizer txtf(s.vocab, s.d_enc, s.featurizer_seed);

  SUBCASE("empty token list is all pad") {
    Tape tape;
    auto e = embed_value_text(tape, ps, txtf, {}, s.t_text);
    CHECK(tape.value(e.tokens).rows() == s.t_text);
    for (double p : e.pad) CHECK(p == 1.0);
  }
  SUBCASE("long sequences keep the first t_text tokens") {
    Tape tape;
    std::vector<int32_t> ids = {1, 2, 3, 4, 5, 6, 7, 8};
    auto e = embed_value_text(tape, ps, txtf, ids, s.t_text);
    CHECK(tape.value(e.tokens).rows() == s.t_text);
    for (double p : e.pad) CHECK(p == 0.0);
    // row i equals the embedding of ids[i] alone
    auto single = embed_value_text(tape, ps, txtf, {ids[2]}, 1);
    for (int64_t c = 0; c < s.d; ++c) {
      CHECK(tape.value(e.tokens).at(2, c) == tape.value(single.tokens).at(0, c));
    }
  }
  SUBCASE("out-of-vocabulary ids error") {
    Tape tape;
    CHECK_THROWS_AS(embed_value_text(tape, ps, txtf, {9999}, s.t_text), std::invalid_argument);
  }
}

TEST_CASE("composition: token = value + time + feature-type, set semantics") {
  UmseSpec s = desk_spec();
  auto ps = make_params(s);
  ImageFeaturizer imgf(s.image_h, s.image_w, s.d_enc, s.featurizer_seed);
  TextFeaturizer txtf(s.vocab, s.d_enc, s.featurizer_seed);
  auto rec = tiny_record(s);
  auto w = cohort::make_window(rec, 0, 40.0);
  REQUIRE(w.presence.has_image);
  REQUIRE(w.presence.has_text);

  auto in = compose_input(rec, w, s, imgf);
  Tape tape;
  auto tok = build_tokens(tape, in, ps, txtf, s);

  SUBCASE("token-count law") {
    int expected_ts = 0;
    for (const auto& o : rec.ts) {
      if (o.t >= w.horizon_start && o.t <= w.t_current) expected_ts++;
    }
    CHECK(tok.n_ts == expected_ts);
    CHECK(tok.n_image == 49 * static_cast<int>(in.image_feats.size()));
    CHECK(tok.n_text == s.t_text * static_cast<int>(in.text_ids.size()));
    CHECK(in.image_feats.size() == 1);  // k_images = 1: the most recent capture
  }

  SUBCASE("first ts token equals the sum of its three embeddings") {
    Tape t2;
    auto ev = embed_value_ts(t2, ps, in.ts_values[0]);
    auto et = t2.apply(ad::Op::Tanh,
                       {t2.add_rowvec(t2.matmul(t2.constant(Tensor::scalar(in.ts_time[0])),
                                                t2.leaf(ps.at("umse.time.w"))),
                                      t2.leaf(ps.at("umse.time.b")))});
    auto ef = embed_feature_type(t2, ps, in.ts_ft[0]);
    auto sum = t2.add(t2.add(ev, et), ef);
    for (int64_t c = 0; c < s.d; ++c) {
      CHECK(tape.value(tok.ts).at(0, c) == t2.value(sum)[c]);
    }
  }

  SUBCASE("permuting observations permutes token rows, values unchanged") {
    auto in2 = in;
    std::reverse(in2.ts_values.begin(), in2.ts_values.end());
    std::reverse(in2.ts_time.begin(), in2.ts_time.end());
    std::reverse(in2.ts_ft.begin(), in2.ts_ft.end());
    Tape t2;
    auto tok2 = build_tokens(t2, in2, ps, txtf, s);
    const auto& a = tape.value(tok.ts);
    const auto& b = t2.value(tok2.ts);
    REQUIRE(a.rows() == b.rows());
    for (int64_t r = 0; r < a.rows(); ++r) {
      for (int64_t c = 0; c < a.cols(); ++c) {
        CHECK(a.at(r, c) == b.at(a.rows() - 1 - r, c));
      }
    }
  }

  SUBCASE("global time shift leaves every composed token bitwise unchanged") {
    for (double delta : {1.0, -1.0, 100.0}) {
      auto rec2 = rec;
      for (auto& o : rec2.ts) o.t += delta;
      for (auto& o : rec2.images) o.t += delta;
      for (auto& o : rec2.texts) o.t += delta;
      rec2.stay_end += delta + 1.0;
      auto w2 = w;
      w2.t_current += delta;
      w2.horizon_start = std::max(0.0, w2.t_current - cohort::kMaxWindowHours);
      auto in2 = compose_input(rec2, w2, s, imgf);
      Tape t2;
      auto tok2 = build_tokens(t2, in2, ps, txtf, s);
      CHECK(tape.value(tok.ts) == t2.value(tok2.ts));
      CHECK(tape.value(tok.image) == t2.value(tok2.image));
      CHECK(tape.value(tok.text) == t2.value(tok2.text));
    }
  }

  SUBCASE("absent modalities compose to nothing") {
    auto w3 = w;
    w3.presence.has_image = false;
    w3.presence.has_text = false;
    auto in3 = compose_input(rec, w3, s, imgf);
    CHECK_FALSE(in3.has_image);
    CHECK_FALSE(in3.has_text);
    Tape t3;
    auto tok3 = build_tokens(t3, in3, ps, txtf, s);
    CHECK(tok3.image == -1);
    CHECK(tok3.text == -1);
  }

  SUBCASE("k_images=2 selects the two most recent captures in order") {
    UmseSpec s2 = s;
    s2.k_images = 2;
    auto in2 = compose_input(rec, w, s2, imgf);
    CHECK(in2.image_feats.size() == 2);
    CHECK(in2.image_time[0] == 10.0 - 40.0);
    CHECK(in2.image_time[1] == 30.0 - 40.0);
  }
}

TEST_CASE("shared embedders: image-only loss reaches the shared time embedder") {
  UmseSpec s = desk_spec();
  auto ps = make_params(s);
  ImageFeaturizer imgf(s.image_h, s.image_w, s.d_enc, s.featurizer_seed);
  TextFeaturizer txtf(s.vocab, s.d_enc, s.featurizer_seed);
  auto rec = tiny_record(s);
  auto w = cohort::make_window(rec, 0, 40.0);
  auto in = compose_input(rec, w, s, imgf);

  for (auto& [id, p] : ps) p.reset_grad();
  Tape tape;
  auto tok = build_tokens(tape, in, ps, txtf, s);
  tape.backward(tape.sum_all(tok.image));  // loss touches image tokens only

  double time_grad = 0.0, ts_value_grad = 0.0, ft_img_row = 0.0;
  for (int64_t i = 0; i < ps.at("umse.time.w").grad.size(); ++i)
    time_grad += std::abs(ps.at("umse.time.w").grad[i]);
  for (int64_t i = 0; i < ps.at("umse.ts_value.w").grad.size(); ++i)
    ts_value_grad += std::abs(ps.at("umse.ts_value.w").grad[i]);
  for (int64_t c = 0; c < ps.at("umse.ft_table").grad.cols(); ++c)
    ft_img_row += std::abs(ps.at("umse.ft_table").grad.at(cohort::kImageFeature, c));

  CHECK(time_grad > 0.0);     // the shared time embedder is one instance
  CHECK(ft_img_row > 0.0);    // the shared feature-type table row for images
  CHECK(ts_value_grad == 0.0);  // ts value embedder untouched by image loss
}

TEST_CASE("ablation arms zero the time/feature-type contributions") {
  UmseSpec s = desk_spec();
  auto ps = make_params(s);
  ImageFeaturizer imgf(s.image_h, s.image_w, s.d_enc, s.featurizer_seed);
  TextFeaturizer txtf(s.vocab, s.d_enc, s.featurizer_seed);
  auto rec = tiny_record(s);
  auto w = cohort::make_window(rec, 0, 40.0);
  auto in = compose_input(rec, w, s, imgf);

  UmseSpec no_ts = s;
  no_ts.arm = arm_from_string("no_ts");

  Tape t1, t2, t3;
  auto full = build_tokens(t1, in, ps, txtf, s);
  auto ablated = build_tokens(t2, in, ps, txtf, no_ts);
  auto value_only = embed_value_ts(t3, ps, in.ts_values[0]);

  // ablated ts token is exactly the value embedding
  for (int64_t c = 0; c < s.d; ++c) {
    CHECK(t2.value(ablated.ts).at(0, c) == t3.value(value_only)[c]);
  }
  CHECK_FALSE(t1.value(full.ts) == t2.value(ablated.ts));
  // image/text tokens unchanged by the ts-only arm
  CHECK(t1.value(full.image) == t2.value(ablated.image));
}

TEST_CASE("frozen featurizer weights receive no training updates") {
  UmseSpec s = desk_spec();
  ImageFeaturizer imgf(s.image_h, s.image_w, s.d_enc, s.featurizer_seed);
  TextFeaturizer txtf(s.vocab, s.d_enc, s.featurizer_seed);
  const Tensor img_before = imgf.weights();
  const Tensor txt_before = txtf.table();

  auto ps = make_params(s);
  auto rec = tiny_record(s);
  auto w = cohort::make_window(rec, 0, 40.0);
  auto in = compose_input(rec, w, s, imgf);
  Tape tape;
  auto tok = build_tokens(tape, in, ps, txtf, s);
  tape.backward(tape.sum_all(tape.add(tok.image, tok.image)));

  CHECK(imgf.weights() == img_before);
  CHECK(txtf.table() == txt_before);
}
