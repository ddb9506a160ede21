// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0

#include "ehrfuse/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include "ehrfuse/ioutil.hpp"

namespace ehrfuse {

namespace {
constexpr char kMagic[4] = {'E', 'H', 'R', 'F'};
constexpr uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(kMagic, 4);
  io::write_u32(os, kVersion);
  io::write_str(os, ckpt.model_fp);
  io::write_str(os, ckpt.data_fp);
  io::write_str(os, ckpt.config_json);
  io::write_u32(os, static_cast<uint32_t>(ckpt.norm_stats.size()));
  for (const auto& [lo, hi] : ckpt.norm_stats) {
    io::write_f64(os, lo);
    io::write_f64(os, hi);
  }
  io::write_u32(os, static_cast<uint32_t>(ckpt.params.size()));
  for (const auto& [id, t] : ckpt.params) {
    io::write_str(os, id);
    io::write_u32(os, static_cast<uint32_t>(t.rows()));
    io::write_u32(os, static_cast<uint32_t>(t.cols()));
    for (int64_t i = 0; i < t.size(); ++i) io::write_f64(os, t[i]);
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kMagic, 4))
    throw std::runtime_error("not an ehrfuse checkpoint: " + path);
  const uint32_t version = io::read_u32(is);
  if (version != kVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.model_fp = io::read_str(is);
  ckpt.data_fp = io::read_str(is);
  ckpt.config_json = io::read_str(is);
  const uint32_t n_stats = io::read_u32(is);
  ckpt.norm_stats.reserve(n_stats);
  for (uint32_t i = 0; i < n_stats; ++i) {
    const double lo = io::read_f64(is);
    const double hi = io::read_f64(is);
    ckpt.norm_stats.emplace_back(lo, hi);
  }
  const uint32_t n_params = io::read_u32(is);
  for (uint32_t i = 0; i < n_params; ++i) {
    std::string id = io::read_str(is);
    const int64_t rows = io::read_u32(is);
    const int64_t cols = io::read_u32(is);
    Tensor t(rows, cols);
    for (int64_t j = 0; j < t.size(); ++j) t[j] = io::read_f64(is);
    ckpt.params.emplace(std::move(id), std::move(t));
  }
  return ckpt;
}

void load_into(const Checkpoint& ckpt, ad::ParameterSet& params) {
  if (ckpt.params.size() != params.size())
    throw std::runtime_error("checkpoint parameter count " + std::to_string(ckpt.params.size()) +
                             " != model " + std::to_string(params.size()));
  for (auto& [id, p] : params) {
    auto it = ckpt.params.find(id);
    if (it == ckpt.params.end()) throw std::runtime_error("checkpoint missing parameter " + id);
    if (!it->second.same_shape(p.data))
      throw std::runtime_error("checkpoint shape mismatch for " + id + ": " +
                               it->second.shape_str() + " vs " + p.data.shape_str());
    p.data = it->second;
    p.reset_grad();
  }
}

Checkpoint snapshot(const ad::ParameterSet& params) {
  Checkpoint ckpt;
  for (const auto& [id, p] : params) ckpt.params.emplace(id, p.data);
  return ckpt;
}

}  // namespace ehrfuse
