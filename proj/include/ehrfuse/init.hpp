// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0
//
// Seed-deterministic parameter construction. Matrices, tables and learnable
// tokens draw uniform values in +-sqrt(6/(fan_in+fan_out)); biases/shifts are
// zero; normalization scales are one. Each parameter gets its own stream
// derived from (seed, id), so the draw does not depend on creation order.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ehrfuse/autodiff.hpp"

namespace ehrfuse::ad {

enum class ParamKind { weight, bias, norm_scale, table, token };

struct ParamSpec {
  std::string id;
  int64_t rows = 0;
  int64_t cols = 0;
  ParamKind kind = ParamKind::weight;
  bool trainable = true;
  // Multiplies the fan bound; lets weights that consume wide-range raw
  // inputs (hours) start in the responsive region of their nonlinearity.
  double init_scale = 1.0;
};

Tensor init_tensor(const ParamSpec& spec, uint64_t seed);
ParameterSet seeded_init(const std::vector<ParamSpec>& specs, uint64_t seed);

}  // namespace ehrfuse::ad
