// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0
//
// Frozen stub featurizers standing in for pretrained encoders. Weights are a
// pure function of the featurizer seed, never trained, and the output shapes
// match the encoder contract: images always map to 49 rows, text tokens map
// to one row each.

#pragma once

#include <cstdint>
#include <vector>

#include "ehrfuse/tensor.hpp"

namespace ehrfuse {

class ImageFeaturizer {
 public:
  ImageFeaturizer(int h, int w, int d_enc, uint64_t seed);

  // pixels: h x w grid -> 49 x d_enc (7x7 patch grid, shared linear patch
  // projection, zero bias). Throws on a grid that differs from the
  // configured size.
  Tensor apply(const Tensor& pixels) const;

  int h() const { return h_; }
  int w() const { return w_; }
  int d_enc() const { return d_enc_; }
  const Tensor& weights() const { return proj_; }

  static constexpr int kPatchGrid = 7;
  static constexpr int kTokens = kPatchGrid * kPatchGrid;

 private:
  int h_, w_, d_enc_;
  Tensor proj_;  // (patch_h * patch_w) x d_enc
};

class TextFeaturizer {
 public:
  TextFeaturizer(int vocab, int d_enc, uint64_t seed);

  // One embedding row per id; ids must be < vocab. Row 0 is the pad id.
  Tensor apply(const std::vector<int32_t>& ids) const;

  int vocab() const { return vocab_; }
  int d_enc() const { return d_enc_; }
  const Tensor& table() const { return table_; }

 private:
  int vocab_, d_enc_;
  Tensor table_;
};

}  // namespace ehrfuse
