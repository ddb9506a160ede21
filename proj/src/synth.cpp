// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0

#include "ehrfuse/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ehrfuse::synth {

using cohort::kAllTasks;
using cohort::kNumTsFeatures;
using cohort::kNumVitals;
using cohort::PatientRecord;
using cohort::quantize_time;
using cohort::Task;

namespace {

constexpr double kAr1Rho = 0.95;
constexpr double kTrendLagHours = 6.0;
constexpr double kObsNoise = 0.15;
constexpr double kPixelNoise = 0.1;
constexpr double kTaskNoise = 0.5;       // per patient-task hazard offset sd
constexpr double kMarkerTokenProb = 0.95;

// Plausible clinical (base, amplitude) pairs per time-series feature; values
// only set the raw scale, min-max normalization removes it again.
constexpr std::array<std::pair<double, double>, kNumTsFeatures> kFeatureScale = {{
    {85.0, 20.0},   // heart_rate
    {18.0, 5.0},    // resp_rate
    {70.0, 12.0},   // dbp
    {120.0, 18.0},  // sbp
    {37.0, 0.8},    // temperature
    {96.0, 3.0},    // spo2
    {33.0, 5.0},    // hematocrit
    {220.0, 60.0},  // platelet
    {9.0, 3.0},     // wbc
    {1.2, 0.8},     // bilirubin
    {7.38, 0.06},   // ph
    {24.0, 4.0},    // hco3
    {1.1, 0.6},     // creatinine
    {1.8, 1.0},     // lactate
    {4.1, 0.5},     // potassium
    {139.0, 4.0},   // sodium
}};

double round4(double v) { return std::round(v * 1e4) / 1e4; }

struct Latent {
  int stay_hours = 0;
  std::vector<double> x;  // hourly latent, indices 0..stay_hours
  double m = 0.0;         // image-only latent
  int c = 0;              // text cluster
  std::array<double, 3> eta{0.0, 0.0, 0.0};
  std::vector<double> core;  // hazard core per hour
};

double interp(const std::vector<double>& x, double t) {
  const auto hi = static_cast<size_t>(x.size() - 1);
  if (t <= 0.0) return x[0];
  if (t >= static_cast<double>(hi)) return x[hi];
  const auto lo = static_cast<size_t>(t);
  const double frac = t - static_cast<double>(lo);
  return x[lo] + frac * (x[lo + 1] - x[lo]);
}

double cluster_weight(int c, int clusters) {
  if (clusters == 1) return 1.0;
  return -1.0 + 2.0 * static_cast<double>(c) / static_cast<double>(clusters - 1);
}

std::vector<double> poisson_times(rng::Stream& s, double rate, double stay) {
  std::vector<double> out;
  if (rate <= 0.0) return out;
  double t = s.exp_gap(rate);
  double prev = -1.0;
  while (t <= stay) {
    const double q = quantize_time(t);
    if (q > prev && q <= stay && q >= 0.0) {
      out.push_back(q);
      prev = q;
    }
    t += s.exp_gap(rate);
  }
  return out;
}

}  // namespace

Output generate(const SynthConfig& cfg, uint64_t master_seed) {
  const int n_total = cfg.train_patients + cfg.val_patients + cfg.test_patients;

  // Global (cohort-level) structure shared by all patients.
  std::array<double, kNumTsFeatures> loading;
  {
    for (int f = 0; f < kNumTsFeatures; ++f) {
      rng::Stream s(rng::derive(master_seed, "feature_loading", static_cast<uint64_t>(f)));
      const double sign = s.bernoulli(0.5) ? 1.0 : -1.0;
      loading[static_cast<size_t>(f)] = sign * s.uniform(0.3, 1.0);
    }
  }
  Tensor img_proj_x(cfg.image_h, cfg.image_w), img_proj_m(cfg.image_h, cfg.image_w);
  {
    rng::Stream sx(rng::derive(master_seed, "image_projection", 0));
    rng::Stream sm(rng::derive(master_seed, "image_projection", 1));
    for (int64_t i = 0; i < img_proj_x.size(); ++i) img_proj_x[i] = 0.7 * sx.normal();
    for (int64_t i = 0; i < img_proj_m.size(); ++i) img_proj_m[i] = 0.7 * sm.normal();
  }

  // Pass A: latent trajectories and hazard maxima.
  std::vector<Latent> latents(static_cast<size_t>(n_total));
  std::array<std::vector<double>, 3> maxima;
  for (auto& m : maxima) m.resize(static_cast<size_t>(n_total));

  for (int i = 0; i < n_total; ++i) {
    const uint64_t seed_i = rng::derive(master_seed, "patient", static_cast<uint64_t>(i));
    Latent& lat = latents[static_cast<size_t>(i)];

    rng::Stream ls(rng::derive(seed_i, "latent"));
    lat.stay_hours = static_cast<int>(std::floor(ls.uniform(cfg.stay_min, cfg.stay_max)));
    lat.x.resize(static_cast<size_t>(lat.stay_hours) + 1);
    lat.x[0] = ls.normal();
    const double sigma = std::sqrt(1.0 - kAr1Rho * kAr1Rho);  // stationary unit variance
    for (int t = 1; t <= lat.stay_hours; ++t) {
      lat.x[static_cast<size_t>(t)] = kAr1Rho * lat.x[static_cast<size_t>(t - 1)] + sigma * ls.normal();
    }

    rng::Stream ms(rng::derive(seed_i, "modality"));
    lat.m = ms.normal();
    lat.c = static_cast<int>(ms.uniform_int(0, cfg.text_clusters - 1));

    rng::Stream os(rng::derive(seed_i, "outcome"));
    for (auto& e : lat.eta) e = kTaskNoise * os.normal();

    const double wc = cluster_weight(lat.c, cfg.text_clusters);
    lat.core.resize(static_cast<size_t>(lat.stay_hours) + 1);
    double core_max = -1e300;
    for (int t = 0; t <= lat.stay_hours; ++t) {
      const int lag = std::max(0, t - static_cast<int>(kTrendLagHours));
      const double trend = lat.x[static_cast<size_t>(t)] - lat.x[static_cast<size_t>(lag)];
      const double core = cfg.signal_ts * lat.x[static_cast<size_t>(t)] +
                          cfg.signal_image * lat.m + cfg.signal_text * wc * trend;
      lat.core[static_cast<size_t>(t)] = core;
      if (t >= 1) core_max = std::max(core_max, core);
    }
    for (size_t k = 0; k < 3; ++k) {
      maxima[k][static_cast<size_t>(i)] = core_max + lat.eta[k];
    }
  }

  // Threshold calibration: the target-th largest hazard maximum per task.
  const std::array<double, 3> prev = {cfg.prev_mortality, cfg.prev_vasopressor,
                                      cfg.prev_intubation};
  std::array<double, 3> thresholds{};
  for (size_t k = 0; k < 3; ++k) {
    const int target = static_cast<int>(std::lround(prev[k] * n_total));
    if (target < 1) {
      throw std::runtime_error(std::string("synth_generate: prevalence target for ") +
                               cohort::task_name(static_cast<Task>(k)) +
                               " yields zero positive patients (infeasible)");
    }
    std::vector<double> sorted = maxima[k];
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    if (sorted.front() == sorted.back()) {
      throw std::runtime_error("synth_generate: degenerate hazard distribution, cannot calibrate");
    }
    thresholds[k] = sorted[static_cast<size_t>(target - 1)];
  }

  // Pass B: materialize patient records.
  Output out;
  out.report.thresholds = thresholds;

  auto split_of = [&](int i) -> std::vector<PatientRecord>& {
    if (i < cfg.train_patients) return out.cohort.train;
    if (i < cfg.train_patients + cfg.val_patients) return out.cohort.val;
    return out.cohort.test;
  };

  for (int i = 0; i < n_total; ++i) {
    const uint64_t seed_i = rng::derive(master_seed, "patient", static_cast<uint64_t>(i));
    const Latent& lat = latents[static_cast<size_t>(i)];
    PatientRecord r;
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "p%06d", i);
    r.id = idbuf;
    r.stay_end = static_cast<double>(lat.stay_hours);

    rng::Stream demo(rng::derive(seed_i, "demo"));
    r.age = std::round(demo.uniform(18.0, 90.0) * 10.0) / 10.0;
    r.gender = demo.bernoulli(0.5) ? 1 : 0;

    for (size_t k = 0; k < 3; ++k) {
      if (maxima[k][static_cast<size_t>(i)] >= thresholds[k]) {
        for (int t = 1; t <= lat.stay_hours; ++t) {
          if (lat.core[static_cast<size_t>(t)] + lat.eta[k] >= thresholds[k]) {
            r.onsets[k] = static_cast<double>(t);
            break;
          }
        }
      }
    }

    for (int f = 0; f < kNumTsFeatures; ++f) {
      rng::Stream fs(rng::derive(seed_i, "ts", static_cast<uint64_t>(f)));
      const double rate = f < kNumVitals ? cfg.vital_rate : cfg.lab_rate;
      std::vector<double> times = poisson_times(fs, rate, r.stay_end);
      if (f < kNumVitals && times.empty()) {
        times.push_back(quantize_time(fs.uniform(0.0, r.stay_end)));
      }
      const auto [base, amp] = kFeatureScale[static_cast<size_t>(f)];
      for (double t : times) {
        const double latent = loading[static_cast<size_t>(f)] * interp(lat.x, t);
        r.ts.push_back({t, f, round4(base + amp * (latent + kObsNoise * fs.normal()))});
      }
    }

    rng::Stream ms(rng::derive(seed_i, "modality"));
    ms.normal();                                     // m (replayed draw order)
    ms.uniform_int(0, cfg.text_clusters - 1);        // c
    const bool has_image = !ms.bernoulli(cfg.image_missing);
    const bool has_text = !ms.bernoulli(cfg.text_missing);

    if (has_image) {
      rng::Stream is(rng::derive(seed_i, "image"));
      std::vector<double> captures = poisson_times(is, cfg.image_rate, r.stay_end);
      if (captures.empty()) captures.push_back(quantize_time(is.uniform(0.0, r.stay_end)));
      for (double t : captures) {
        const double xv = interp(lat.x, t);
        Tensor px(cfg.image_h, cfg.image_w);
        for (int64_t p = 0; p < px.size(); ++p) {
          px[p] = round4(img_proj_x[p] * xv + img_proj_m[p] * lat.m + kPixelNoise * is.normal());
        }
        r.images.push_back({t, std::move(px)});
      }
    }

    if (has_text) {
      rng::Stream ts(rng::derive(seed_i, "text"));
      cohort::TextObs obs;
      obs.t = quantize_time(ts.uniform(0.0, 2.0));
      const int len = static_cast<int>(ts.uniform_int(cfg.text_len_min, cfg.text_len_max));
      // token 0 is the pad id; 1..clusters are cluster markers; the rest is noise vocabulary
      for (int k = 0; k < len; ++k) {
        obs.tokens.push_back(static_cast<int32_t>(
            ts.uniform_int(cfg.text_clusters + 1, cfg.text_vocab - 1)));
      }
      if (ts.bernoulli(kMarkerTokenProb)) {
        const size_t pos = static_cast<size_t>(ts.uniform_int(0, len - 1));
        obs.tokens[pos] = static_cast<int32_t>(1 + lat.c);
      }
      r.texts.push_back(std::move(obs));
    }

    cohort::sort_observations(r);
    cohort::validate_record(r);
    split_of(i).push_back(std::move(r));
  }

  auto fill_report = [&](const std::vector<PatientRecord>& split, SplitReport& rep) {
    rep.patients = static_cast<int>(split.size());
    if (split.empty()) return;
    int no_img = 0, no_txt = 0, irregular = 0, async = 0;
    std::array<int, 3> pos{0, 0, 0};
    for (const auto& r : split) {
      if (r.images.empty()) no_img++;
      if (r.texts.empty()) no_txt++;
      for (size_t k = 0; k < 3; ++k) {
        if (r.onsets[k]) pos[k]++;
      }
      bool any_irr = false, any_async = false;
      for (const auto& [f, ch] : cohort::characterize_sampling(r)) {
        any_irr |= ch.irregular;
        any_async |= ch.asynchronous;
      }
      irregular += any_irr ? 1 : 0;
      async += any_async ? 1 : 0;
    }
    const double n = static_cast<double>(split.size());
    rep.image_missing = no_img / n;
    rep.text_missing = no_txt / n;
    for (size_t k = 0; k < 3; ++k) rep.prevalence[k] = pos[k] / n;
    rep.pct_irregular = irregular / n;
    rep.pct_asynchronous = async / n;
  };
  fill_report(out.cohort.train, out.report.train);
  fill_report(out.cohort.val, out.report.val);
  fill_report(out.cohort.test, out.report.test);
  return out;
}

nlohmann::json report_to_json(const GenerationReport& rep) {
  auto split_json = [](const SplitReport& s) {
    return nlohmann::json{{"patients", s.patients},
                          {"image_missing", s.image_missing},
                          {"text_missing", s.text_missing},
                          {"prev_mortality", s.prevalence[0]},
                          {"prev_vasopressor", s.prevalence[1]},
                          {"prev_intubation", s.prevalence[2]},
                          {"pct_irregular", s.pct_irregular},
                          {"pct_asynchronous", s.pct_asynchronous}};
  };
  return nlohmann::json{{"train", split_json(rep.train)},
                        {"val", split_json(rep.val)},
                        {"test", split_json(rep.test)},
                        {"thresholds",
                         {{"mortality", rep.thresholds[0]},
                          {"vasopressor", rep.thresholds[1]},
                          {"intubation", rep.thresholds[2]}}}};
}

}  // namespace ehrfuse::synth
