// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0
//
// Self-describing parameter container (binary, little-endian; layout in
// docs/FORMATS.md). Parameters are written in sorted-id order with shapes
// and raw f64 payloads, together with the canonical run-config JSON, the
// model/data fingerprints, and the fitted normalization statistics.

#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ehrfuse/autodiff.hpp"

namespace ehrfuse {

struct Checkpoint {
  std::string config_json;  // canonical RunConfig serialization
  std::string model_fp;
  std::string data_fp;
  std::vector<std::pair<double, double>> norm_stats;  // per ts feature (min, max)
  std::map<std::string, Tensor> params;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Copies values into an existing ParameterSet; throws if any id or shape
// does not line up with the set built from the config.
void load_into(const Checkpoint& ckpt, ad::ParameterSet& params);
Checkpoint snapshot(const ad::ParameterSet& params);

}  // namespace ehrfuse
