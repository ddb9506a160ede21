// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0

#include "ehrfuse/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace ehrfuse::cohort {

using nlohmann::json;

const std::array<const char*, kNumTsFeatures>& ts_feature_names() {
  static const std::array<const char*, kNumTsFeatures> names = {
      "heart_rate", "resp_rate",  "dbp",       "sbp",     "temperature", "spo2",
      "hematocrit", "platelet",   "wbc",       "bilirubin", "ph",        "hco3",
      "creatinine", "lactate",    "potassium", "sodium"};
  return names;
}

double quantize_time(double t) { return std::round(t / kTimeQuantum) * kTimeQuantum; }

Task task_from_string(const std::string& s) {
  if (s == "mortality") return Task::mortality;
  if (s == "vasopressor") return Task::vasopressor;
  if (s == "intubation") return Task::intubation;
  throw std::invalid_argument("unknown task: " + s);
}

const char* task_name(Task t) {
  switch (t) {
    case Task::mortality: return "mortality";
    case Task::vasopressor: return "vasopressor";
    case Task::intubation: return "intubation";
  }
  return "?";
}

void sort_observations(PatientRecord& r) {
  std::sort(r.ts.begin(), r.ts.end(), [](const TsObs& a, const TsObs& b) {
    return a.t != b.t ? a.t < b.t : a.f < b.f;
  });
  std::sort(r.images.begin(), r.images.end(),
            [](const ImageObs& a, const ImageObs& b) { return a.t < b.t; });
  std::sort(r.texts.begin(), r.texts.end(),
            [](const TextObs& a, const TextObs& b) { return a.t < b.t; });
}

void validate_record(const PatientRecord& r) {
  auto fail = [&](const std::string& rule) {
    throw std::invalid_argument("record " + r.id + ": " + rule);
  };
  if (r.id.empty()) throw std::invalid_argument("record with empty id");
  if (!(r.age >= 18.0)) fail("age must be >= 18");
  if (r.gender != 0 && r.gender != 1) fail("gender must be 0 or 1");
  if (!(r.stay_end > 0.0 && r.stay_end <= kMaxStayHours))
    fail("stay_end must lie in (0, 1440]");
  if (r.ts.empty() && r.images.empty() && r.texts.empty())
    fail("record must contain at least one observation");
  for (const auto& o : r.ts) {
    if (o.f < 0 || o.f >= kNumTsFeatures) fail("ts feature id out of range");
    if (!(o.t >= 0.0 && o.t <= r.stay_end)) fail("ts observation time outside [0, stay_end]");
    if (!std::isfinite(o.v)) fail("ts value not finite");
  }
  for (const auto& o : r.images) {
    if (!(o.t >= 0.0 && o.t <= r.stay_end)) fail("image time outside [0, stay_end]");
    if (o.pixels.size() == 0) fail("image without pixels");
  }
  for (const auto& o : r.texts) {
    if (!(o.t >= 0.0 && o.t <= r.stay_end)) fail("text time outside [0, stay_end]");
    for (int32_t tok : o.tokens) {
      if (tok < 0) fail("negative text token id");
    }
  }
  for (size_t k = 0; k < r.onsets.size(); ++k) {
    if (r.onsets[k] && !(*r.onsets[k] > 0.0 && *r.onsets[k] <= r.stay_end))
      fail(std::string(task_name(static_cast<Task>(k))) + " onset outside (0, stay_end]");
  }
}

namespace {

int distinct_vitals(const PatientRecord& r) {
  std::set<int> seen;
  for (const auto& o : r.ts) {
    if (o.f < kNumVitals) seen.insert(o.f);
  }
  return static_cast<int>(seen.size());
}

PatientRecord record_from_json(const json& j) {
  PatientRecord r;
  r.id = j.at("id").get<std::string>();
  r.age = j.at("age").get<double>();
  r.gender = j.at("gender").get<int>();
  r.stay_end = j.at("stay_end").get<double>();
  const json& on = j.at("onsets");
  for (Task t : kAllTasks) {
    const json& v = on.at(task_name(t));
    if (!v.is_null()) r.onsets[static_cast<size_t>(t)] = v.get<double>();
  }
  for (const json& o : j.at("ts")) {
    r.ts.push_back({o.at("t").get<double>(), o.at("f").get<int>(), o.at("v").get<double>()});
  }
  for (const json& o : j.at("images")) {
    const int64_t h = o.at("h").get<int64_t>();
    const int64_t w = o.at("w").get<int64_t>();
    std::vector<double> px = o.at("pixels").get<std::vector<double>>();
    if (static_cast<int64_t>(px.size()) != h * w)
      throw std::invalid_argument("image pixel count does not match h*w");
    r.images.push_back({o.at("t").get<double>(), Tensor(h, w, std::move(px))});
  }
  for (const json& o : j.at("texts")) {
    r.texts.push_back({o.at("t").get<double>(), o.at("tokens").get<std::vector<int32_t>>()});
  }
  return r;
}

json record_to_json(const PatientRecord& r) {
  json on;
  for (Task t : kAllTasks) {
    const auto& v = r.onsets[static_cast<size_t>(t)];
    on[task_name(t)] = v ? json(*v) : json(nullptr);
  }
  json ts = json::array();
  for (const auto& o : r.ts) ts.push_back({{"f", o.f}, {"t", o.t}, {"v", o.v}});
  json images = json::array();
  for (const auto& o : r.images) {
    std::vector<double> px(o.pixels.data(), o.pixels.data() + o.pixels.size());
    images.push_back(
        {{"h", o.pixels.rows()}, {"pixels", px}, {"t", o.t}, {"w", o.pixels.cols()}});
  }
  json texts = json::array();
  for (const auto& o : r.texts) texts.push_back({{"t", o.t}, {"tokens", o.tokens}});
  return json{{"age", r.age},     {"gender", r.gender}, {"id", r.id},
              {"images", images}, {"onsets", on},       {"stay_end", r.stay_end},
              {"texts", texts},   {"ts", ts}};
}

}  // namespace

std::vector<PatientRecord> load_cohort(const std::string& path, int schema_version,
                                       LoadReport* report) {
  if (schema_version != 1)
    throw std::invalid_argument("unsupported cohort schema version " +
                                std::to_string(schema_version));
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open cohort file: " + path);
  std::vector<PatientRecord> out;
  LoadReport rep;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": malformed record: " + e.what());
    }
    PatientRecord r;
    try {
      r = record_from_json(j);
    } catch (const json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": malformed record: " + e.what());
    }
    sort_observations(r);
    validate_record(r);
    if (distinct_vitals(r) < 5) {
      rep.excluded_few_vitals++;
      rep.excluded_ids.push_back(r.id);
      continue;
    }
    out.push_back(std::move(r));
  }
  rep.loaded = out.size();
  if (report) *report = rep;
  return out;
}

void save_cohort(const std::string& path, const std::vector<PatientRecord>& records) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  for (PatientRecord r : records) {
    sort_observations(r);
    os << record_to_json(r).dump() << "\n";
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

void save_manifest(const std::string& path, const Manifest& m,
                   const std::map<std::string, std::string>& extra) {
  json features = json::array();
  for (int f = 0; f < kNumTsFeatures; ++f) {
    features.push_back({{"id", f},
                        {"kind", f < kNumVitals ? "vital" : "lab"},
                        {"name", ts_feature_names()[static_cast<size_t>(f)]}});
  }
  features.push_back({{"id", kImageFeature}, {"kind", "image"}, {"name", "chest_xray"}});
  features.push_back({{"id", kTextFeature}, {"kind", "text"}, {"name", "chief_complaint"}});
  json j{{"schema_version", m.schema_version},
         {"image_h", m.image_h},
         {"image_w", m.image_w},
         {"text_vocab", m.text_vocab},
         {"data_fingerprint", m.data_fp},
         {"features", features}};
  for (const auto& [k, v] : extra) j[k] = v;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << j.dump(2) << "\n";
}

Manifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest: " + path);
  json j;
  is >> j;
  Manifest m;
  m.schema_version = j.at("schema_version").get<int>();
  if (m.schema_version != 1)
    throw std::runtime_error("unsupported manifest schema version " +
                             std::to_string(m.schema_version));
  m.image_h = j.at("image_h").get<int>();
  m.image_w = j.at("image_w").get<int>();
  m.text_vocab = j.at("text_vocab").get<int>();
  m.data_fp = j.at("data_fingerprint").get<std::string>();
  return m;
}

std::map<int, SamplingCharacter> characterize_sampling(const PatientRecord& r) {
  std::map<int, std::vector<double>> times_by_feature;
  std::map<double, std::set<int>> features_by_time;
  for (const auto& o : r.ts) {
    times_by_feature[o.f].push_back(o.t);
    features_by_time[o.t].insert(o.f);
  }
  std::map<int, SamplingCharacter> out;
  for (auto& [f, times] : times_by_feature) {
    std::sort(times.begin(), times.end());
    SamplingCharacter ch;
    if (times.size() < 3) {
      ch.irregularity_defined = false;
    } else {
      for (size_t i = 2; i < times.size(); ++i) {
        if (times[i] - times[i - 1] != times[i - 1] - times[i - 2]) {
          ch.irregular = true;
          break;
        }
      }
    }
    for (double t : times) {
      if (static_cast<int>(features_by_time[t].size()) < kNumTsFeatures) {
        ch.asynchronous = true;
        break;
      }
    }
    out[f] = ch;
  }
  return out;
}

NormalizationStats fit_normalization(const std::vector<PatientRecord>& train_split) {
  std::array<std::optional<NormalizationStats::Range>, kNumTsFeatures> acc;
  for (const auto& r : train_split) {
    for (const auto& o : r.ts) {
      auto& slot = acc[static_cast<size_t>(o.f)];
      if (!slot) slot = NormalizationStats::Range{o.v, o.v};
      else {
        slot->lo = std::min(slot->lo, o.v);
        slot->hi = std::max(slot->hi, o.v);
      }
    }
  }
  NormalizationStats stats;
  for (int f = 0; f < kNumTsFeatures; ++f) {
    const auto& slot = acc[static_cast<size_t>(f)];
    if (!slot) continue;  // feature absent from training split: not retained
    if (!(slot->hi > slot->lo))
      throw std::invalid_argument(std::string("fit_normalization: degenerate feature ") +
                                  ts_feature_names()[static_cast<size_t>(f)] +
                                  " (max == min)");
    stats.per_feature[static_cast<size_t>(f)] = *slot;
  }
  return stats;
}

double normalize_value(const NormalizationStats& stats, int feature, double v) {
  if (feature < 0 || feature >= kNumTsFeatures)
    throw std::invalid_argument("normalize_value: feature id out of range");
  const auto& slot = stats.per_feature[static_cast<size_t>(feature)];
  if (!slot)
    throw std::invalid_argument(std::string("normalize_value: feature ") +
                                ts_feature_names()[static_cast<size_t>(feature)] +
                                " was not retained at fit time");
  return (v - slot->lo) / (slot->hi - slot->lo);  // deliberately unclipped
}

void apply_normalization(PatientRecord& r, const NormalizationStats& stats) {
  for (auto& o : r.ts) o.v = normalize_value(stats, o.f, o.v);
}

int label_window(double t_current, std::optional<double> onset) {
  if (!onset) return 0;
  return (t_current < *onset && *onset <= t_current + kPredictionHorizon) ? 1 : 0;
}

bool last_hour_valid(const PatientRecord& r, double t_current) {
  for (const auto& o : r.ts) {
    if (o.t >= t_current - 1.0 && o.t <= t_current) return true;
  }
  return false;
}

ModalityMask presence_at(const PatientRecord& r, double t_current) {
  ModalityMask m;
  for (const auto& o : r.images) {
    if (o.t <= t_current) {
      m.has_image = true;
      break;
    }
  }
  for (const auto& o : r.texts) {
    if (o.t <= t_current) {
      m.has_text = true;
      break;
    }
  }
  return m;
}

Window make_window(const PatientRecord& r, int patient_index, double t_current) {
  Window w;
  w.patient = patient_index;
  w.t_current = t_current;
  w.horizon_start = std::max(0.0, t_current - kMaxWindowHours);
  for (Task t : kAllTasks) {
    w.labels[static_cast<size_t>(t)] = label_window(t_current, r.onset(t));
  }
  w.presence = presence_at(r, t_current);
  return w;
}

namespace {

// Grid index range of [lo, hi] intersected with the quantized time grid.
struct GridRange {
  int64_t lo = 0;
  int64_t hi = -1;
  bool empty() const { return hi < lo; }
};

GridRange grid_range(double lo, double hi) {
  GridRange g;
  g.lo = static_cast<int64_t>(std::ceil(lo / kTimeQuantum - 1e-9));
  g.hi = static_cast<int64_t>(std::floor(hi / kTimeQuantum + 1e-9));
  return g;
}

double grid_point(int64_t k) { return static_cast<double>(k) * kTimeQuantum; }

}  // namespace

std::optional<Window> extract_training_window(const PatientRecord& r, int patient_index,
                                              Task task, rng::Stream& stream) {
  const GridRange g = grid_range(kMinCurrentTime, r.stay_end);
  if (g.empty()) return std::nullopt;
  const auto onset = r.onset(task);
  constexpr int kRetries = 16;
  for (int attempt = 0; attempt < kRetries; ++attempt) {
    const double t_current = grid_point(stream.uniform_int(g.lo, g.hi));
    if (onset && t_current >= *onset) continue;  // post-onset windows excluded
    if (!last_hour_valid(r, t_current)) continue;
    return make_window(r, patient_index, t_current);
  }
  return std::nullopt;
}

std::vector<Window> extract_inference_windows(const PatientRecord& r, int patient_index,
                                              Task task, uint64_t seed, int per_class) {
  const auto onset = r.onset(task);
  std::vector<Window> out;
  const uint64_t base = rng::derive(seed, r.id) ^ rng::derive(seed, task_name(task));

  auto collect = [&](bool positive) {
    rng::Stream stream(rng::derive(base, positive ? "pos" : "neg"));
    GridRange g;
    if (positive) {
      if (!onset) return;
      g = grid_range(std::max(kMinCurrentTime, *onset - kPredictionHorizon), r.stay_end);
    } else {
      g = grid_range(kMinCurrentTime, r.stay_end);
    }
    if (g.empty()) return;
    std::set<int64_t> chosen;
    const int budget = per_class * 40;
    int found = 0;
    for (int attempt = 0; attempt < budget && found < per_class; ++attempt) {
      const int64_t k = stream.uniform_int(g.lo, g.hi);
      if (chosen.count(k)) continue;
      const double t_current = grid_point(k);
      if (onset && t_current >= *onset) continue;
      const int lbl = label_window(t_current, onset);
      if (lbl != (positive ? 1 : 0)) continue;
      if (!last_hour_valid(r, t_current)) continue;
      chosen.insert(k);
      out.push_back(make_window(r, patient_index, t_current));
      ++found;
    }
  };

  collect(true);
  collect(false);
  return out;
}

std::vector<std::vector<size_t>> balanced_batches(const std::vector<int>& labels, int batch_size,
                                                  rng::Stream& stream) {
  if (batch_size < 2) throw std::invalid_argument("balanced_batches: batch_size must be >= 2");
  std::vector<size_t> pos, neg;
  for (size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(i);
  if (pos.empty())
    throw std::runtime_error("balanced_batches: zero positives in the epoch pool (task unusable)");
  if (neg.empty())
    throw std::runtime_error("balanced_batches: zero negatives in the epoch pool");

  const size_t per_pos = static_cast<size_t>((batch_size + 1) / 2);
  const size_t per_neg = static_cast<size_t>(batch_size / 2);
  stream.shuffle(pos);
  stream.shuffle(neg);

  // Majority class paces the epoch; the minority cycles with reshuffles.
  const size_t batches_by_pos = pos.size() / per_pos;
  const size_t batches_by_neg = neg.size() / per_neg;
  const size_t n_batches = std::max<size_t>(1, std::max(batches_by_pos, batches_by_neg));

  size_t pi = 0, ni = 0;
  auto take = [&stream](std::vector<size_t>& list, size_t& cursor) {
    if (cursor == list.size()) {
      stream.shuffle(list);
      cursor = 0;
    }
    return list[cursor++];
  };

  std::vector<std::vector<size_t>> batches;
  batches.reserve(n_batches);
  for (size_t b = 0; b < n_batches; ++b) {
    std::vector<size_t> batch;
    batch.reserve(per_pos + per_neg);
    for (size_t i = 0; i < per_pos; ++i) batch.push_back(take(pos, pi));
    for (size_t i = 0; i < per_neg; ++i) batch.push_back(take(neg, ni));
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace ehrfuse::cohort
