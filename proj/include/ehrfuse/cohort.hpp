// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0
//
// Triplet data model: every modality is a set of (value, time, feature-type)
// observations. Houses cohort files, validation, sampling characterization,
// min-max normalization, window extraction/labeling and the balanced batch
// sampler. File formats are documented in docs/FORMATS.md.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ehrfuse/rng.hpp"
#include "ehrfuse/tensor.hpp"

namespace ehrfuse::cohort {

// Feature-type id layout: 0..5 vitals, 6..15 labs, 16 image, 17 text.
inline constexpr int kNumVitals = 6;
inline constexpr int kNumLabs = 10;
inline constexpr int kNumTsFeatures = kNumVitals + kNumLabs;
inline constexpr int kImageFeature = 16;
inline constexpr int kTextFeature = 17;
inline constexpr int kNumFeatureTypes = 18;

const std::array<const char*, kNumTsFeatures>& ts_feature_names();

// All times are hours since admission, quantized to 2^-10 h. On that dyadic
// grid a global shift by whole hours is exact in f64, which is what makes
// the relative-time shift invariance bitwise.
inline constexpr double kTimeQuantum = 1.0 / 1024.0;
inline constexpr double kPredictionHorizon = 12.0;  // label look-ahead, hours
inline constexpr double kMaxWindowHours = 24.0;
inline constexpr double kMinCurrentTime = 3.0;
inline constexpr double kMaxStayHours = 1440.0;

double quantize_time(double t);

enum class Task : int { mortality = 0, vasopressor = 1, intubation = 2 };
inline constexpr std::array<Task, 3> kAllTasks = {Task::mortality, Task::vasopressor,
                                                  Task::intubation};
Task task_from_string(const std::string& s);
const char* task_name(Task t);

struct TsObs {
  double t = 0.0;
  int f = 0;
  double v = 0.0;
};

struct ImageObs {
  double t = 0.0;
  Tensor pixels;  // h x w grid
};

struct TextObs {
  double t = 0.0;
  std::vector<int32_t> tokens;
};

struct PatientRecord {
  std::string id;
  double age = 0.0;
  int gender = 0;
  double stay_end = 0.0;
  std::array<std::optional<double>, 3> onsets;  // indexed by Task
  std::vector<TsObs> ts;                        // serialized sorted by (t, f)
  std::vector<ImageObs> images;                 // sorted by t
  std::vector<TextObs> texts;                   // sorted by t

  std::optional<double> onset(Task t) const { return onsets[static_cast<size_t>(t)]; }
};

struct ModalityMask {
  bool has_image = false;
  bool has_text = false;
  // time-series presence is an invariant of every valid window
};

struct Window {
  int patient = -1;  // index into the split it was extracted from
  double t_current = 0.0;
  double horizon_start = 0.0;
  std::array<int, 3> labels{0, 0, 0};
  ModalityMask presence;
};

struct Cohort {
  std::vector<PatientRecord> train;
  std::vector<PatientRecord> val;
  std::vector<PatientRecord> test;
};

// Throws std::invalid_argument naming the record id and violated rule.
void validate_record(const PatientRecord& r);
void sort_observations(PatientRecord& r);

struct LoadReport {
  size_t loaded = 0;
  size_t excluded_few_vitals = 0;
  std::vector<std::string> excluded_ids;
};

// One JSON record per line. Malformed lines raise errors naming the line
// number; records with fewer than 5 distinct vital features are excluded.
std::vector<PatientRecord> load_cohort(const std::string& path, int schema_version,
                                       LoadReport* report = nullptr);
void save_cohort(const std::string& path, const std::vector<PatientRecord>& records);

struct Manifest {
  int schema_version = 1;
  int image_h = 0;
  int image_w = 0;
  int text_vocab = 0;
  std::string data_fp;
};

void save_manifest(const std::string& path, const Manifest& m,
                   const std::map<std::string, std::string>& extra = {});
Manifest load_manifest(const std::string& path);

struct SamplingCharacter {
  bool irregular = false;
  bool asynchronous = false;
  bool irregularity_defined = true;  // false when a feature has < 3 observations
};

// Per time-series feature present in the record.
std::map<int, SamplingCharacter> characterize_sampling(const PatientRecord& r);

struct NormalizationStats {
  struct Range {
    double lo = 0.0;
    double hi = 0.0;
  };
  std::array<std::optional<Range>, kNumTsFeatures> per_feature;
};

NormalizationStats fit_normalization(const std::vector<PatientRecord>& train_split);
double normalize_value(const NormalizationStats& stats, int feature, double v);
// Rewrites time-series values in place; image pixels and text tokens untouched.
void apply_normalization(PatientRecord& r, const NormalizationStats& stats);

int label_window(double t_current, std::optional<double> onset);

bool last_hour_valid(const PatientRecord& r, double t_current);
ModalityMask presence_at(const PatientRecord& r, double t_current);
Window make_window(const PatientRecord& r, int patient_index, double t_current);

// Uniform draw of t_current on the quantized grid of [3, stay_end] with a
// bounded retry budget; rejects draws that fail the last-hour rule or fall
// at/after the task onset.
std::optional<Window> extract_training_window(const PatientRecord& r, int patient_index,
                                              Task task, rng::Stream& stream);

// Deterministic fixed evaluation windows: up to per_class positives and
// negatives, keyed by (seed, patient id, task).
std::vector<Window> extract_inference_windows(const PatientRecord& r, int patient_index,
                                              Task task, uint64_t seed, int per_class = 5);

// Balanced batches over a labeled pool: ceil(bs/2) positives and floor(bs/2)
// negatives each, the majority class consumed without replacement, the
// minority resampled (reshuffled cycles). Returns indices into the pool.
std::vector<std::vector<size_t>> balanced_batches(const std::vector<int>& labels, int batch_size,
                                                  rng::Stream& stream);

}  // namespace ehrfuse::cohort
