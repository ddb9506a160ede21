// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0

#include "ehrfuse/featurizer.hpp"

#include <stdexcept>

#include "ehrfuse/init.hpp"
#include "ehrfuse/kernels.hpp"

namespace ehrfuse {

ImageFeaturizer::ImageFeaturizer(int h, int w, int d_enc, uint64_t seed)
    : h_(h), w_(w), d_enc_(d_enc), proj_(1, 1) {
  if (h % kPatchGrid != 0 || w % kPatchGrid != 0)
    throw std::invalid_argument("ImageFeaturizer: grid must be a multiple of 7 per side");
  const int64_t patch = static_cast<int64_t>(h / kPatchGrid) * (w / kPatchGrid);
  proj_ = ad::init_tensor({"featurizer.image.proj", patch, d_enc, ad::ParamKind::weight, false},
                          seed);
}

Tensor ImageFeaturizer::apply(const Tensor& pixels) const {
  if (pixels.rows() != h_ || pixels.cols() != w_)
    throw std::invalid_argument("ImageFeaturizer: expected " + std::to_string(h_) + "x" +
                                std::to_string(w_) + " grid, got " + pixels.shape_str());
  const int ph = h_ / kPatchGrid;
  const int pw = w_ / kPatchGrid;
  Tensor patches(kTokens, static_cast<int64_t>(ph) * pw);
  for (int pr = 0; pr < kPatchGrid; ++pr) {
    for (int pc = 0; pc < kPatchGrid; ++pc) {
      double* row = patches.data() + (pr * kPatchGrid + pc) * patches.cols();
      for (int r = 0; r < ph; ++r) {
        for (int c = 0; c < pw; ++c) {
          row[r * pw + c] = pixels.at(pr * ph + r, pc * pw + c);
        }
      }
    }
  }
  Tensor out(kTokens, d_enc_);
  kernels::active().matmul_nn(patches.data(), proj_.data(), out.data(), kTokens, patches.cols(),
                              d_enc_);
  return out;
}

TextFeaturizer::TextFeaturizer(int vocab, int d_enc, uint64_t seed)
    : vocab_(vocab), d_enc_(d_enc),
      table_(ad::init_tensor({"featurizer.text.table", vocab, d_enc, ad::ParamKind::table, false},
                             seed)) {}

Tensor TextFeaturizer::apply(const std::vector<int32_t>& ids) const {
  if (ids.empty()) throw std::invalid_argument("TextFeaturizer: empty id list");
  Tensor out(static_cast<int64_t>(ids.size()), d_enc_);
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab_)
      throw std::invalid_argument("TextFeaturizer: token id " + std::to_string(ids[i]) +
                                  " out of vocabulary " + std::to_string(vocab_));
    std::copy(table_.data() + ids[i] * d_enc_, table_.data() + (ids[i] + 1) * d_enc_,
              out.data() + static_cast<int64_t>(i) * d_enc_);
  }
  return out;
}

}  // namespace ehrfuse
