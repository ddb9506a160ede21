// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0

#include "ehrfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "ehrfuse/ioutil.hpp"
#include "ehrfuse/train.hpp"

namespace ehrfuse::metrics {

using cohort::Task;

double auroc(const std::vector<Scored>& set) {
  int64_t pos = 0, neg = 0;
  for (const auto& s : set) (s.label == 1 ? pos : neg)++;
  if (pos == 0 || neg == 0)
    throw std::invalid_argument("auroc: needs at least one positive and one negative");

  std::vector<size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return set[a].score < set[b].score; });

  // Average rank per tie group; rank sums stay exact multiples of 1/2.
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j < order.size() && set[order[j]].score == set[order[i]].score) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (size_t k = i; k < j; ++k) {
      if (set[order[k]].label == 1) rank_sum_pos += avg_rank;
    }
    i = j;
  }
  const double u = rank_sum_pos - static_cast<double>(pos) * (static_cast<double>(pos) + 1.0) / 2.0;
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

double auprc(const std::vector<Scored>& set) {
  int64_t pos = 0;
  for (const auto& s : set) pos += s.label == 1 ? 1 : 0;
  if (pos == 0) throw std::invalid_argument("auprc: needs at least one positive");

  std::vector<size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return set[a].score > set[b].score; });

  // Distinct thresholds descending; precision evaluated at tie-group end.
  double ap = 0.0;
  double recall_prev = 0.0;
  int64_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j < order.size() && set[order[j]].score == set[order[i]].score) ++j;
    for (size_t k = i; k < j; ++k) {
      if (set[order[k]].label == 1) ++tp;
      else ++fp;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - recall_prev) * precision;
    recall_prev = recall;
    i = j;
  }
  return ap;
}

std::vector<cohort::Window> inference_windows(const std::vector<cohort::PatientRecord>& split,
                                              Task task, uint64_t eval_seed, int per_class) {
  std::vector<cohort::Window> out;
  for (size_t i = 0; i < split.size(); ++i) {
    auto ws = cohort::extract_inference_windows(split[i], static_cast<int>(i), task, eval_seed,
                                                per_class);
    out.insert(out.end(), ws.begin(), ws.end());
  }
  return out;
}

EvalResult evaluate_windows(model::FusionModel& m,
                            const std::vector<cohort::PatientRecord>& split,
                            const std::vector<cohort::Window>& windows, Task task) {
  EvalResult res;
  res.scored.reserve(windows.size());
  for (const auto& w : windows) {
    const auto& rec = split[static_cast<size_t>(w.patient)];
    auto fr = model::eval_window(m, rec, w);
    res.scored.push_back({fr.probability, w.labels[static_cast<size_t>(task)]});
  }
  res.auprc = auprc(res.scored);
  res.auroc = auroc(res.scored);
  return res;
}

EvalResult evaluate(model::FusionModel& m, const std::vector<cohort::PatientRecord>& split,
                    Task task, uint64_t eval_seed, int per_class) {
  return evaluate_windows(m, split, inference_windows(split, task, eval_seed, per_class), task);
}

namespace {

void finalize_means(MetricRow& row) {
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  row.auprc_mean = mean(row.auprc_seeds);
  row.auroc_mean = mean(row.auroc_seeds);
}

}  // namespace

MetricReport missing_sweep(const std::vector<model::FusionModel*>& models,
                           const std::vector<cohort::PatientRecord>& split, Task task,
                           const SweepConfig& sweep, uint64_t eval_seed, int per_class,
                           uint64_t sweep_seed) {
  if (models.empty()) throw std::invalid_argument("missing_sweep: no models given");
  const std::vector<cohort::Window> base = inference_windows(split, task, eval_seed, per_class);
  const bool do_img = sweep.modality == "image" || sweep.modality == "both";
  const bool do_txt = sweep.modality == "text" || sweep.modality == "both";

  // One shuffle per modality, shared across fractions: prefixes nest.
  std::vector<size_t> img_order, txt_order;
  for (size_t i = 0; i < base.size(); ++i) {
    if (base[i].presence.has_image) img_order.push_back(i);
    if (base[i].presence.has_text) txt_order.push_back(i);
  }
  {
    rng::Stream si(rng::derive(sweep_seed, "sweep_image"));
    si.shuffle(img_order);
    rng::Stream st(rng::derive(sweep_seed, "sweep_text"));
    st.shuffle(txt_order);
  }

  MetricReport report;
  for (double f : sweep.fractions) {
    std::vector<cohort::Window> masked = base;
    size_t n_masked = 0;
    if (f > 0.0) {
      if (do_img) {
        const size_t k = static_cast<size_t>(std::floor(f * static_cast<double>(img_order.size())));
        for (size_t i = 0; i < k; ++i) masked[img_order[i]].presence.has_image = false;
        n_masked += k;
      }
      if (do_txt) {
        const size_t k = static_cast<size_t>(std::floor(f * static_cast<double>(txt_order.size())));
        for (size_t i = 0; i < k; ++i) masked[txt_order[i]].presence.has_text = false;
        n_masked += k;
      }
    }
    MetricRow row;
    row.condition = sweep.modality + "_f" + io::fmt(f);
    row.fraction = f;
    row.case_percent = base.empty() ? 0.0
                                    : 100.0 * static_cast<double>(n_masked) /
                                          static_cast<double>(base.size());
    for (auto* m : models) {
      EvalResult r = evaluate_windows(*m, split, masked, task);
      row.auprc_seeds.push_back(r.auprc);
      row.auroc_seeds.push_back(r.auroc);
    }
    finalize_means(row);
    report.rows.push_back(std::move(row));
  }
  return report;
}

FlsResult fls_search(const RunConfig& base, int layer_lo, int layer_hi,
                     const cohort::Cohort& raw) {
  if (layer_lo < 1 || layer_hi > base.model.layers || layer_lo > layer_hi)
    throw std::invalid_argument("fls_search: layer range outside [1, layers]");
  const double lr = base.train.lrs.front();  // fls trains at the first sweep lr
  const auto stats = cohort::fit_normalization(raw.train);
  const cohort::Cohort normalized = train::normalize_cohort(raw, stats);

  FlsResult out;
  out.report.seeds = base.train.seeds;
  for (int layer = layer_lo; layer <= layer_hi; ++layer) {
    RunConfig cfg = base;
    cfg.model.l_fusion = layer;
    MetricRow row;
    row.condition = "l_fusion=" + std::to_string(layer);
    for (uint64_t seed : cfg.train.seeds) {
      auto res = train::train_single_run(cfg, normalized, lr, seed);
      double best_auroc = 0.0;
      for (const auto& r : res.rows) {
        if (r.epoch == res.best_epoch) best_auroc = r.val_auroc;
      }
      row.auprc_seeds.push_back(res.best_val_auprc);
      row.auroc_seeds.push_back(best_auroc);
    }
    finalize_means(row);
    out.report.rows.push_back(std::move(row));
  }

  size_t best = 0;
  for (size_t i = 1; i < out.report.rows.size(); ++i) {
    if (out.report.rows[i].auprc_mean > out.report.rows[best].auprc_mean) best = i;  // tie: smaller
  }
  out.report.rows[best].selected = true;
  out.selected_layer = layer_lo + static_cast<int>(best);
  return out;
}

RunConfig ablation_config(const RunConfig& base, const std::string& arm) {
  RunConfig cfg = base;
  if (arm == "default") {
    // unchanged
  } else if (arm == "no_ts_umse") {
    cfg.model.umse_arm = "no_ts";
  } else if (arm == "no_imgtxt_umse") {
    cfg.model.umse_arm = "no_imgtxt";
  } else if (arm == "no_all_umse") {
    cfg.model.umse_arm = "no_all";
  } else if (arm == "absolute_time") {
    cfg.model.time_mode = "absolute";
  } else {
    throw std::invalid_argument("unknown ablation arm: " + arm);
  }
  return cfg;
}

MetricReport ablate(const RunConfig& base, const std::string& arm, const cohort::Cohort& raw) {
  const RunConfig cfg = ablation_config(base, arm);
  const double lr = cfg.train.lrs.front();
  const auto stats = cohort::fit_normalization(raw.train);
  const cohort::Cohort normalized = train::normalize_cohort(raw, stats);
  const Task task = cohort::task_from_string(cfg.train.task);
  const uint64_t eval_seed = rng::derive(cfg.master_seed, "eval_windows");

  MetricReport report;
  report.seeds = cfg.train.seeds;
  MetricRow row;
  row.condition = arm;
  for (uint64_t seed : cfg.train.seeds) {
    auto res = train::train_single_run(cfg, normalized, lr, seed);
    model::FusionModel m(model::spec_from_config(cfg), rng::derive(cfg.master_seed, "init", seed));
    for (auto& [id, p] : m.params) p.data = res.best_params.at(id);
    EvalResult r = evaluate(m, normalized.test, task, eval_seed, cfg.train.eval_windows_per_class);
    row.auprc_seeds.push_back(r.auprc);
    row.auroc_seeds.push_back(r.auroc);
  }
  finalize_means(row);
  report.rows.push_back(std::move(row));
  return report;
}

std::vector<AttnRow> attention_report(model::FusionModel& m,
                                      const std::vector<cohort::PatientRecord>& split, Task task,
                                      uint64_t eval_seed, int per_class) {
  if (m.spec.maa != model::Maa::ctaa)
    throw std::invalid_argument("attention_report: model does not use the ctaa head");
  const auto windows = inference_windows(split, task, eval_seed, per_class);

  std::map<std::string, std::pair<int, std::array<double, 3>>> groups;
  for (const auto& w : windows) {
    std::string g = "ts";
    if (w.presence.has_image) g += "+img";
    if (w.presence.has_text) g += "+txt";
    auto weights = model::maa_weights(m, w.presence.has_image, w.presence.has_text);
    auto& slot = groups[g];
    slot.first++;
    for (size_t i = 0; i < 3; ++i) slot.second[i] += weights[i];
  }
  std::vector<AttnRow> rows;
  for (auto& [g, slot] : groups) {
    AttnRow row;
    row.group = g;
    row.windows = slot.first;
    for (size_t i = 0; i < 3; ++i)
      row.attention[i] = slot.second[i] / static_cast<double>(slot.first);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace ehrfuse::metrics
