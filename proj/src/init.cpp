// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0

#include "ehrfuse/init.hpp"

#include <cmath>
#include <stdexcept>

#include "ehrfuse/rng.hpp"

namespace ehrfuse::ad {

Tensor init_tensor(const ParamSpec& spec, uint64_t seed) {
  Tensor t(spec.rows, spec.cols);
  switch (spec.kind) {
    case ParamKind::bias:
      break;  // zeros
    case ParamKind::norm_scale:
      for (int64_t i = 0; i < t.size(); ++i) t[i] = 1.0;
      break;
    case ParamKind::weight:
    case ParamKind::table:
    case ParamKind::token: {
      const double bound =
          spec.init_scale * std::sqrt(6.0 / static_cast<double>(spec.rows + spec.cols));
      rng::Stream s(rng::derive(seed, spec.id));
      for (int64_t i = 0; i < t.size(); ++i) t[i] = s.uniform(-bound, bound);
      break;
    }
  }
  return t;
}

ParameterSet seeded_init(const std::vector<ParamSpec>& specs, uint64_t seed) {
  ParameterSet set;
  for (const auto& spec : specs) {
    if (set.count(spec.id)) throw std::invalid_argument("seeded_init: duplicate id " + spec.id);
    set.emplace(spec.id, Parameter(spec.id, init_tensor(spec, seed), spec.trainable));
  }
  return set;
}

}  // namespace ehrfuse::ad
