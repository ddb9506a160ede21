// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "ehrfuse/metrics.hpp"
#include "ehrfuse/synth.hpp"
#include "ehrfuse/train.hpp"

using namespace ehrfuse;
using namespace ehrfuse::train;
using ad::Tape;

namespace {

RunConfig tiny_cfg() {
  RunConfig cfg = default_config("desk");
  cfg.master_seed = 2024;
  cfg.synth.train_patients = 40;
  cfg.synth.val_patients = 8;
  cfg.synth.test_patients = 8;
  cfg.synth.image_h = 14;
  cfg.synth.image_w = 14;
  cfg.synth.text_vocab = 64;
  cfg.synth.stay_max = 96.0;
  cfg.synth.image_missing = 0.4;
  cfg.synth.text_missing = 0.4;
  cfg.model.d = 8;
  cfg.model.d_enc = 6;
  cfg.model.layers = 1;
  cfg.model.heads = 2;
  cfg.model.bottleneck_tokens = 2;
  cfg.model.dropout = 0.1;
  cfg.model.t_text = 4;
  cfg.model.static_dim = 4;
  cfg.model.classifier_hidden = 8;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 4;
  cfg.train.lrs = {3e-3};
  cfg.train.seeds = {1};
  cfg.train.steps_per_epoch_cap = 6;
  cfg.train.task = "vasopressor";
  cfg.train.eval_windows_per_class = 2;
  return cfg;
}

cohort::Cohort tiny_cohort(const RunConfig& cfg) {
  auto out = synth::generate(cfg.synth, cfg.master_seed);
  auto stats = cohort::fit_normalization(out.cohort.train);
  return normalize_cohort(out.cohort, stats);
}

}  // namespace

TEST_CASE("bce worked values") {
  CHECK(bce_loss({0.5}, {1.0}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce_loss({0.5, 0.5}, {1.0, 0.0}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const double tiny = bce_loss({1.0}, {1.0});  // clamped at 1e-7 from the boundary
  CHECK(tiny > 0.0);
  CHECK(tiny < 1.1e-7);
  CHECK_THROWS_AS(bce_loss({}, {}), std::invalid_argument);

  // the numeric twin matches the tape primitive
  Tape tape;
  auto loss = tape.bce(tape.constant(Tensor::col({0.3, 0.9})), {0.0, 1.0});
  CHECK(tape.scalar(loss) == bce_loss({0.3, 0.9}, {0.0, 1.0}));
}

TEST_CASE("optimizer_step: identity, first-step magnitude, decoupled decay") {
  ad::ParameterSet ps;
  ps.emplace("p", ad::Parameter("p", Tensor::scalar(2.0)));

  SUBCASE("zero gradient and zero decay change nothing") {
    AdamW opt;
    const Tensor before = ps.at("p").data;
    opt.step(ps, 0.1, 0.0, 0.0);
    CHECK(ps.at("p").data == before);
  }

  SUBCASE("unit gradient first step moves by about lr") {
    AdamW opt;
    ps.at("p").grad[0] = 1.0;
    opt.step(ps, 0.1, 0.0, 0.0);
    CHECK(std::abs((2.0 - ps.at("p").data[0]) - 0.1) < 1e-8);
  }

  SUBCASE("weight decay additionally shrinks by lr*wd*p") {
    AdamW a, b;
    ad::ParameterSet pa, pb;
    pa.emplace("p", ad::Parameter("p", Tensor::scalar(2.0)));
    pb.emplace("p", ad::Parameter("p", Tensor::scalar(2.0)));
    pa.at("p").grad[0] = 1.0;
    pb.at("p").grad[0] = 1.0;
    a.step(pa, 0.1, 0.0, 0.0);
    b.step(pb, 0.1, 0.5, 0.0);
    CHECK(pa.at("p").data[0] - pb.at("p").data[0] == doctest::Approx(0.1 * 0.5 * 2.0).epsilon(1e-12));
  }

  SUBCASE("global-norm clipping bounds the effective gradient") {
    AdamW a, b;
    ad::ParameterSet pa, pb;
    pa.emplace("p", ad::Parameter("p", Tensor::col({1.0, 1.0})));
    pb.emplace("p", ad::Parameter("p", Tensor::col({1.0, 1.0})));
    pa.at("p").grad[0] = 300.0;
    pa.at("p").grad[1] = 400.0;  // norm 500 -> scaled by 1/500
    pb.at("p").grad[0] = 0.6;
    pb.at("p").grad[1] = 0.8;  // already the clipped direction
    a.step(pa, 0.1, 0.0, 1.0);
    b.step(pb, 0.1, 0.0, 0.0);
    CHECK(pa.at("p").data[0] == doctest::Approx(pb.at("p").data[0]).epsilon(1e-12));
  }

  SUBCASE("non-finite gradients abort the step") {
    AdamW opt;
    ps.at("p").grad[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(opt.step(ps, 0.1, 0.0, 0.0), NumericFault);
  }

  SUBCASE("frozen parameters are untouched") {
    ad::ParameterSet pf;
    pf.emplace("frozen", ad::Parameter("frozen", Tensor::scalar(3.0), false));
    pf.at("frozen").grad[0] = 1.0;
    AdamW opt;
    opt.step(pf, 0.1, 0.1, 0.0);
    CHECK(pf.at("frozen").data[0] == 3.0);
  }
}

TEST_CASE("mma_augment: masking probabilities and label safety") {
  auto make_windows = [](size_t n) {
    std::vector<cohort::Window> ws(n);
    for (auto& w : ws) {
      w.presence.has_image = true;
      w.presence.has_text = true;
      w.labels = {1, 0, 1};
      w.t_current = 10.0;
    }
    return ws;
  };

  SUBCASE("p = 0 leaves the batch unchanged") {
    auto ws = make_windows(50);
    rng::Stream s(1);
    mma_augment(ws, 0.0, 0.0, s);
    for (const auto& w : ws) {
      CHECK(w.presence.has_image);
      CHECK(w.presence.has_text);
    }
  }
  SUBCASE("p = 1 masks every present modality") {
    auto ws = make_windows(50);
    rng::Stream s(2);
    mma_augment(ws, 1.0, 1.0, s);
    for (const auto& w : ws) {
      CHECK_FALSE(w.presence.has_image);
      CHECK_FALSE(w.presence.has_text);
    }
  }
  SUBCASE("realized masking rate lands inside the binomial bound") {
    auto ws = make_windows(10000);
    rng::Stream s(3);
    mma_augment(ws, 0.3, 0.0, s);
    size_t dropped = 0;
    for (const auto& w : ws) dropped += w.presence.has_image ? 0 : 1;
    CHECK(std::abs(static_cast<double>(dropped) / 10000.0 - 0.3) < 0.02);
    for (const auto& w : ws) {
      CHECK(w.labels == std::array<int, 3>{1, 0, 1});  // labels untouched
      CHECK(w.t_current == 10.0);
    }
  }
}

TEST_CASE("multi-token loss: subset heads and the disabled-mode identity") {
  RunConfig cfg = tiny_cfg();
  cfg.model.multi_token = true;
  model::FusionModel m(model::spec_from_config(cfg), 9);
  auto cohort = tiny_cohort(cfg);

  // find a full-presence window
  rng::Stream s(11);
  std::optional<cohort::Window> full;
  const cohort::PatientRecord* rec = nullptr;
  for (int i = 0; i < 2000 && !full; ++i) {
    const size_t pi = static_cast<size_t>(s.uniform_int(0, static_cast<int64_t>(cohort.train.size()) - 1));
    auto w = cohort::extract_training_window(cohort.train[pi], static_cast<int>(pi),
                                             cohort::Task::vasopressor, s);
    if (w && w->presence.has_image && w->presence.has_text) {
      full = *w;
      rec = &cohort.train[pi];
    }
  }
  REQUIRE(full.has_value());

  SUBCASE("full presence feeds all four heads; restricted windows fewer") {
    Tape tape;
    std::vector<double> probs;
    for (const auto& sub : {model::Subset{false, false}, model::Subset{true, false},
                            model::Subset{false, true}, model::Subset{true, true}}) {
      auto fr = model::forward_window(tape, m, *rec, *full, model::FillerKind::none, sub);
      probs.push_back(fr.probability);
    }
    CHECK(probs.size() == 4);
    // heads are distinct parameter sets, so the four probabilities differ
    CHECK_FALSE(probs[0] == probs[3]);

    // head order cannot change the mean loss
    std::vector<double> labels(4, 1.0);
    const double l1 = bce_loss(probs, labels);
    std::reverse(probs.begin(), probs.end());
    CHECK(bce_loss(probs, labels) == doctest::Approx(l1).epsilon(1e-15));
  }

  SUBCASE("with multi_token disabled the loss is exactly the single-head bce") {
    RunConfig cfg1 = tiny_cfg();
    model::FusionModel m1(model::spec_from_config(cfg1), 9);
    Tape tape;
    auto fr = model::forward_window(tape, m1, *rec, *full);
    auto loss = tape.bce(fr.prob, {1.0});
    CHECK(tape.scalar(loss) == bce_loss({fr.probability}, {1.0}));
  }
}

TEST_CASE("train loop: determinism, bookkeeping, best-checkpoint rule") {
  RunConfig cfg = tiny_cfg();
  auto cohort = tiny_cohort(cfg);

  auto a = train_single_run(cfg, cohort, cfg.train.lrs[0], 1);
  auto b = train_single_run(cfg, cohort, cfg.train.lrs[0], 1);
  REQUIRE(a.rows.size() == b.rows.size());
  for (size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].train_loss == b.rows[i].train_loss);
    CHECK(a.rows[i].val_auprc == b.rows[i].val_auprc);
  }

  SUBCASE("sweep bookkeeping: lrs x seeds runs, epochs rows each") {
    RunConfig sweep_cfg = cfg;
    sweep_cfg.train.lrs = {1e-3, 3e-3, 1e-2};
    sweep_cfg.train.seeds = {1, 2};
    sweep_cfg.train.epochs = 1;
    auto out = train(sweep_cfg, synth::generate(sweep_cfg.synth, sweep_cfg.master_seed).cohort);
    CHECK(out.runs.size() == 6);
    CHECK(out.log.size() == 6);
  }

  SUBCASE("the snapshot is the max-AUPRC epoch, earliest on ties") {
    double best = -1.0;
    int best_epoch = -1;
    for (const auto& r : a.rows) {
      if (r.val_auprc > best) {
        best = r.val_auprc;
        best_epoch = r.epoch;
      }
    }
    CHECK(a.best_val_auprc == best);
    CHECK(a.best_epoch == best_epoch);
    CHECK_FALSE(a.best_params.empty());
  }
}

TEST_CASE("interrupted training resumes onto the identical trajectory") {
  namespace fs = std::filesystem;
  RunConfig cfg = tiny_cfg();
  cfg.train.epochs = 4;
  auto cohort = tiny_cohort(cfg);

  auto straight = train_single_run(cfg, cohort, cfg.train.lrs[0], 1);

  const std::string state = (fs::temp_directory_path() / "ehrfuse_resume.state").string();
  std::remove(state.c_str());
  auto part1 = train_single_run(cfg, cohort, cfg.train.lrs[0], 1, state, 2);
  CHECK(part1.rows.size() == 2);
  auto resumed = train_single_run(cfg, cohort, cfg.train.lrs[0], 1, state);

  REQUIRE(resumed.rows.size() == straight.rows.size());
  for (size_t i = 0; i < resumed.rows.size(); ++i) {
    CHECK(resumed.rows[i].train_loss == straight.rows[i].train_loss);
    CHECK(resumed.rows[i].val_auprc == straight.rows[i].val_auprc);
    CHECK(resumed.rows[i].val_auroc == straight.rows[i].val_auroc);
  }
  CHECK(resumed.best_epoch == straight.best_epoch);
  for (const auto& [id, t] : straight.best_params) {
    CHECK(resumed.best_params.at(id) == t);
  }
  std::remove(state.c_str());
}

TEST_CASE("overfit sanity: 64 windows reach bce < 0.05 within 500 steps") {
  RunConfig cfg = tiny_cfg();
  cfg.model.d = 16;
  cfg.model.d_enc = 8;
  cfg.model.layers = 2;
  cfg.model.heads = 4;
  cfg.model.bottleneck_tokens = 2;
  cfg.model.classifier_hidden = 16;
  cfg.model.dropout = 0.0;
  cfg.synth.train_patients = 80;

  auto cohort = tiny_cohort(cfg);
  const auto task = cohort::Task::vasopressor;

  // 32 positive + 32 negative fixed windows
  std::vector<cohort::Window> windows;
  rng::Stream s(77);
  int pos = 0, neg = 0;
  for (int attempt = 0; attempt < 20000 && (pos < 32 || neg < 32); ++attempt) {
    const size_t pi = static_cast<size_t>(s.uniform_int(0, static_cast<int64_t>(cohort.train.size()) - 1));
    auto w = cohort::extract_training_window(cohort.train[pi], static_cast<int>(pi), task, s);
    if (!w) continue;
    const int lbl = w->labels[static_cast<size_t>(task)];
    if (lbl == 1 && pos < 32) {
      windows.push_back(*w);
      pos++;
    } else if (lbl == 0 && neg < 32) {
      windows.push_back(*w);
      neg++;
    }
  }
  REQUIRE(windows.size() == 64);

  model::FusionModel m(model::spec_from_config(cfg), 123);
  AdamW opt;

  auto full_set_loss = [&] {
    std::vector<double> probs, ys;
    for (const auto& w : windows) {
      probs.push_back(
          model::eval_window(m, cohort.train[static_cast<size_t>(w.patient)], w).probability);
      ys.push_back(static_cast<double>(w.labels[static_cast<size_t>(task)]));
    }
    return bce_loss(probs, ys);
  };

  double full = 1e9;
  int step = 0;
  for (; step < 500; ++step) {
    Tape tape;
    Tape::V probs = -1;
    std::vector<double> ys;
    const size_t b0 = (static_cast<size_t>(step) * 8) % windows.size();
    for (size_t k = 0; k < 8; ++k) {
      const auto& w = windows[(b0 + k) % windows.size()];
      auto fr = model::forward_window(tape, m, cohort.train[static_cast<size_t>(w.patient)], w);
      probs = probs < 0 ? fr.prob : tape.concat_rows(probs, fr.prob);
      ys.push_back(static_cast<double>(w.labels[static_cast<size_t>(task)]));
    }
    auto loss = tape.bce(probs, ys);
    for (auto& [id, p] : m.params) p.reset_grad();
    tape.backward(loss);
    opt.step(m.params, 1e-3, 0.0, 1.0);
    if (step % 25 == 24) {
      full = full_set_loss();
      if (full < 0.05) break;
    }
  }
  if (full >= 0.05) full = full_set_loss();
  MESSAGE("overfit reached full-set loss " << full << " after " << step + 1 << " steps");
  CHECK(full < 0.05);
}
