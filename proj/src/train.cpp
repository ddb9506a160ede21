// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0

#include "ehrfuse/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "ehrfuse/ioutil.hpp"
#include "ehrfuse/kernels.hpp"
#include "ehrfuse/metrics.hpp"

namespace ehrfuse::train {

using cohort::Task;
using nlohmann::json;

double bce_loss(const std::vector<double>& probs, const std::vector<double>& labels) {
  if (probs.empty()) throw std::invalid_argument("bce_loss: empty batch");
  if (probs.size() != labels.size())
    throw std::invalid_argument("bce_loss: probability/label count mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], 1e-7, 1.0 - 1e-7);
    const double y = labels[i];
    acc -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return acc / static_cast<double>(probs.size());
}

void AdamW::step(ad::ParameterSet& params, double lr, double weight_decay, double clip_norm) {
  const auto& ops = kernels::active();

  for (auto& [id, p] : params) {
    if (!p.trainable) continue;
    if (!ops.all_finite(p.grad.data(), p.grad.size()))
      throw NumericFault("optimizer_step: non-finite gradient in " + id);
  }

  if (clip_norm > 0.0) {
    double sq = 0.0;
    for (auto& [id, p] : params) {
      if (p.trainable) sq += ops.sq_sum(p.grad.data(), p.grad.size());
    }
    const double norm = std::sqrt(sq);
    if (norm > clip_norm) {
      const double factor = clip_norm / norm;
      for (auto& [id, p] : params) {
        if (p.trainable) ops.scale(p.grad.data(), factor, p.grad.data(), p.grad.size());
      }
    }
  }

  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (auto& [id, p] : params) {
    if (!p.trainable) continue;
    auto it = moments.find(id);
    if (it == moments.end()) {
      it = moments
               .emplace(id, std::make_pair(Tensor(p.data.rows(), p.data.cols()),
                                           Tensor(p.data.rows(), p.data.cols())))
               .first;
    }
    ops.adamw(p.data.data(), p.grad.data(), it->second.first.data(), it->second.second.data(),
              p.data.size(), lr, beta1, beta2, eps, weight_decay, bc1, bc2);
  }
}

void mma_augment(std::vector<cohort::Window>& windows, double p_img, double p_txt,
                 rng::Stream& stream) {
  for (auto& w : windows) {
    const bool drop_img = stream.bernoulli(p_img);  // draws consumed regardless of presence
    const bool drop_txt = stream.bernoulli(p_txt);
    if (drop_img && w.presence.has_image) w.presence.has_image = false;
    if (drop_txt && w.presence.has_text) w.presence.has_text = false;
  }
}

std::string run_id(double lr, uint64_t seed) {
  return "lr" + io::fmt(lr) + "_s" + std::to_string(seed);
}

namespace {

constexpr char kStateMagic[4] = {'E', 'H', 'R', 'T'};

struct TrainState {
  int epochs_done = 0;
  int64_t adam_t = 0;
  bool diverged = false;
  RunResult partial;
  std::map<std::string, Tensor> params;
  std::map<std::string, std::pair<Tensor, Tensor>> moments;
};

json log_row_to_json(const LogRow& r) {
  json j{{"run_id", r.run_id}, {"lr", r.lr},
         {"seed", r.seed},     {"epoch", r.epoch},
         {"train_loss", r.train_loss}, {"val_auprc", r.val_auprc},
         {"val_auroc", r.val_auroc},   {"has_attn", r.has_attn},
         {"diverged", r.diverged}};
  if (r.has_attn) j["attn"] = {r.attn[0], r.attn[1], r.attn[2]};
  return j;
}

LogRow log_row_from_json(const json& j) {
  LogRow r;
  r.run_id = j.at("run_id");
  r.lr = j.at("lr");
  r.seed = j.at("seed");
  r.epoch = j.at("epoch");
  r.train_loss = j.at("train_loss");
  r.val_auprc = j.at("val_auprc");
  r.val_auroc = j.at("val_auroc");
  r.has_attn = j.at("has_attn");
  r.diverged = j.at("diverged");
  if (r.has_attn) {
    for (size_t i = 0; i < 3; ++i) r.attn[i] = j.at("attn")[i];
  }
  return r;
}

void write_tensor_map(std::ostream& os, const std::map<std::string, Tensor>& m) {
  io::write_u32(os, static_cast<uint32_t>(m.size()));
  for (const auto& [id, t] : m) {
    io::write_str(os, id);
    io::write_u32(os, static_cast<uint32_t>(t.rows()));
    io::write_u32(os, static_cast<uint32_t>(t.cols()));
    for (int64_t i = 0; i < t.size(); ++i) io::write_f64(os, t[i]);
  }
}

std::map<std::string, Tensor> read_tensor_map(std::istream& is) {
  std::map<std::string, Tensor> m;
  const uint32_t n = io::read_u32(is);
  for (uint32_t i = 0; i < n; ++i) {
    std::string id = io::read_str(is);
    const int64_t rows = io::read_u32(is);
    const int64_t cols = io::read_u32(is);
    Tensor t(rows, cols);
    for (int64_t j = 0; j < t.size(); ++j) t[j] = io::read_f64(is);
    m.emplace(std::move(id), std::move(t));
  }
  return m;
}

void save_state(const std::string& path, const TrainState& st) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write train state: " + tmp);
    os.write(kStateMagic, 4);
    json header{{"epochs_done", st.epochs_done},
                {"adam_t", st.adam_t},
                {"diverged", st.diverged},
                {"run_id", st.partial.run_id},
                {"best_val_auprc", st.partial.best_val_auprc},
                {"best_epoch", st.partial.best_epoch}};
    json rows = json::array();
    for (const auto& r : st.partial.rows) rows.push_back(log_row_to_json(r));
    header["rows"] = rows;
    io::write_str(os, header.dump());
    write_tensor_map(os, st.params);
    std::map<std::string, Tensor> m1, m2;
    for (const auto& [id, mv] : st.moments) {
      m1.emplace(id, mv.first);
      m2.emplace(id, mv.second);
    }
    write_tensor_map(os, m1);
    write_tensor_map(os, m2);
    write_tensor_map(os, st.partial.best_params);
    if (!os) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_state(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open train state: " + path);
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kStateMagic, 4))
    throw std::runtime_error("not a train state file: " + path);
  TrainState st;
  const json header = json::parse(io::read_str(is));
  st.epochs_done = header.at("epochs_done");
  st.adam_t = header.at("adam_t");
  st.diverged = header.at("diverged");
  st.partial.run_id = header.at("run_id");
  st.partial.best_val_auprc = header.at("best_val_auprc");
  st.partial.best_epoch = header.at("best_epoch");
  for (const json& r : header.at("rows")) st.partial.rows.push_back(log_row_from_json(r));
  st.params = read_tensor_map(is);
  auto m1 = read_tensor_map(is);
  auto m2 = read_tensor_map(is);
  for (auto& [id, t] : m1) st.moments[id] = {std::move(t), std::move(m2.at(id))};
  st.partial.best_params = read_tensor_map(is);
  st.partial.diverged = st.diverged;
  return st;
}

std::vector<model::Subset> applicable_subsets(bool has_img, bool has_txt) {
  std::vector<model::Subset> subsets = {{false, false}};
  if (has_img) subsets.push_back({true, false});
  if (has_txt) subsets.push_back({false, true});
  if (has_img && has_txt) subsets.push_back({true, true});
  return subsets;
}

}  // namespace

RunResult train_single_run(const RunConfig& cfg, const cohort::Cohort& cohort, double lr,
                           uint64_t seed, const std::string& state_path, int stop_after_epoch) {
  const Task task = cohort::task_from_string(cfg.train.task);
  const std::string rid = run_id(lr, seed);
  const uint64_t run_seed = rng::derive(cfg.master_seed, rid);
  const uint64_t eval_seed = rng::derive(cfg.master_seed, "eval_windows");

  model::FusionModel m(model::spec_from_config(cfg), rng::derive(cfg.master_seed, "init", seed));
  AdamW adam;
  RunResult res;
  res.run_id = rid;
  int start_epoch = 1;

  if (!state_path.empty() && std::filesystem::exists(state_path)) {
    TrainState st = load_state(state_path);
    for (auto& [id, p] : m.params) {
      p.data = st.params.at(id);
      p.reset_grad();
    }
    adam.t = st.adam_t;
    adam.moments = std::move(st.moments);
    res = std::move(st.partial);
    start_epoch = st.epochs_done + 1;
    if (res.diverged) return res;
  }

  const int last_epoch =
      stop_after_epoch > 0 ? std::min(stop_after_epoch, cfg.train.epochs) : cfg.train.epochs;

  for (int epoch = start_epoch; epoch <= last_epoch; ++epoch) {
    const uint64_t ep_seed = rng::derive(run_seed, "epoch", static_cast<uint64_t>(epoch));

    // Fresh random training windows, one attempt per patient.
    std::vector<cohort::Window> pool;
    for (size_t i = 0; i < cohort.train.size(); ++i) {
      rng::Stream ws(rng::derive(ep_seed, "window", i));
      auto w = cohort::extract_training_window(cohort.train[i], static_cast<int>(i), task, ws);
      if (w) pool.push_back(*w);
    }
    if (cfg.train.mma_enabled) {
      rng::Stream ms(rng::derive(ep_seed, "mma"));
      mma_augment(pool, cfg.train.mma_p_img, cfg.train.mma_p_txt, ms);
    }
    std::vector<int> labels;
    labels.reserve(pool.size());
    for (const auto& w : pool) labels.push_back(w.labels[static_cast<size_t>(task)]);

    rng::Stream bs(rng::derive(ep_seed, "batch"));
    auto batches = cohort::balanced_batches(labels, cfg.train.batch_size, bs);
    if (cfg.train.steps_per_epoch_cap > 0 &&
        batches.size() > static_cast<size_t>(cfg.train.steps_per_epoch_cap)) {
      batches.resize(static_cast<size_t>(cfg.train.steps_per_epoch_cap));
    }

    rng::Stream dropout_rng(rng::derive(ep_seed, "dropout"));
    double loss_sum = 0.0;
    size_t steps = 0;
    bool diverged = false;
    for (const auto& batch : batches) {
      try {
        ad::Tape tape(&dropout_rng);
        ad::Tape::V batch_loss = -1;
        if (m.spec.multi_token) {
          for (size_t bi : batch) {
            const auto& w = pool[bi];
            const auto& rec = cohort.train[static_cast<size_t>(w.patient)];
            ad::Tape::V probs = -1;
            std::vector<double> ys;
            for (const auto& sub : applicable_subsets(w.presence.has_image, w.presence.has_text)) {
              auto fr = model::forward_window(tape, m, rec, w, model::FillerKind::none, sub);
              probs = probs < 0 ? fr.prob : tape.concat_rows(probs, fr.prob);
              ys.push_back(static_cast<double>(w.labels[static_cast<size_t>(task)]));
            }
            ad::Tape::V wloss = tape.bce(probs, ys);  // mean over applicable heads
            batch_loss = batch_loss < 0 ? wloss : tape.concat_rows(batch_loss, wloss);
          }
          batch_loss = tape.mean_all(batch_loss);
        } else {
          ad::Tape::V probs = -1;
          std::vector<double> ys;
          for (size_t bi : batch) {
            const auto& w = pool[bi];
            const auto& rec = cohort.train[static_cast<size_t>(w.patient)];
            auto fr = model::forward_window(tape, m, rec, w);
            probs = probs < 0 ? fr.prob : tape.concat_rows(probs, fr.prob);
            ys.push_back(static_cast<double>(w.labels[static_cast<size_t>(task)]));
          }
          batch_loss = tape.bce(probs, ys);
        }
        for (auto& [id, p] : m.params) p.reset_grad();
        tape.backward(batch_loss);
        adam.step(m.params, lr, cfg.train.weight_decay, cfg.train.clip_norm);
        loss_sum += tape.scalar(batch_loss);
        ++steps;
      } catch (const NumericFault&) {
        diverged = true;
        break;
      }
    }

    LogRow row;
    row.run_id = rid;
    row.lr = lr;
    row.seed = seed;
    row.epoch = epoch;
    if (diverged) {
      row.train_loss = std::numeric_limits<double>::quiet_NaN();
      row.diverged = true;
      res.diverged = true;
      res.rows.push_back(row);
      break;
    }
    row.train_loss = steps > 0 ? loss_sum / static_cast<double>(steps) : 0.0;

    auto val = metrics::evaluate(m, cohort.val, task, eval_seed, cfg.train.eval_windows_per_class);
    row.val_auprc = val.auprc;
    row.val_auroc = val.auroc;
    if (m.spec.maa == model::Maa::ctaa) {
      row.has_attn = true;
      row.attn = model::maa_weights(m, true, true);
    }
    res.rows.push_back(row);

    if (row.val_auprc > res.best_val_auprc) {  // strict: ties keep the earliest epoch
      res.best_val_auprc = row.val_auprc;
      res.best_epoch = epoch;
      res.best_params.clear();
      for (const auto& [id, p] : m.params) res.best_params.emplace(id, p.data);
    }

    if (!state_path.empty()) {
      TrainState st;
      st.epochs_done = epoch;
      st.adam_t = adam.t;
      st.diverged = res.diverged;
      st.partial = res;
      for (const auto& [id, p] : m.params) st.params.emplace(id, p.data);
      st.moments = adam.moments;
      save_state(state_path, st);
    }
  }
  return res;
}

cohort::Cohort normalize_cohort(const cohort::Cohort& raw, const cohort::NormalizationStats& st) {
  cohort::Cohort out = raw;
  for (auto* split : {&out.train, &out.val, &out.test}) {
    for (auto& r : *split) cohort::apply_normalization(r, st);
  }
  return out;
}

std::vector<std::pair<double, double>> stats_to_pairs(const cohort::NormalizationStats& st) {
  std::vector<std::pair<double, double>> out;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& slot : st.per_feature) {
    if (slot) out.emplace_back(slot->lo, slot->hi);
    else out.emplace_back(nan, nan);
  }
  return out;
}

cohort::NormalizationStats stats_from_pairs(const std::vector<std::pair<double, double>>& pairs) {
  cohort::NormalizationStats st;
  for (size_t f = 0; f < pairs.size() && f < st.per_feature.size(); ++f) {
    if (!std::isnan(pairs[f].first)) {
      st.per_feature[f] = cohort::NormalizationStats::Range{pairs[f].first, pairs[f].second};
    }
  }
  return st;
}

TrainOutput train(const RunConfig& cfg, const cohort::Cohort& raw) {
  TrainOutput out;
  out.stats = cohort::fit_normalization(raw.train);
  const cohort::Cohort cohort = normalize_cohort(raw, out.stats);
  for (double lr : cfg.train.lrs) {
    for (uint64_t seed : cfg.train.seeds) {
      RunResult res = train_single_run(cfg, cohort, lr, seed);
      out.log.insert(out.log.end(), res.rows.begin(), res.rows.end());
      out.runs.push_back({lr, seed, std::move(res)});
    }
  }
  return out;
}

}  // namespace ehrfuse::train
