// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0

#include "ehrfuse/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace ehrfuse::kernels {

const Ops& scalar_ops();
#if EHRFUSE_HAVE_AVX2
const Ops& avx2_ops();
#endif

bool avx2_supported() {
#if EHRFUSE_HAVE_AVX2
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

Backend pick_default() {
  if (const char* env = std::getenv("EHRFUSE_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
    if (std::strcmp(env, "avx2") == 0) {
      if (!avx2_supported()) throw std::runtime_error("EHRFUSE_KERNELS=avx2 but CPU lacks avx2/fma");
      return Backend::avx2;
    }
  }
  return avx2_supported() ? Backend::avx2 : Backend::scalar;
}

std::atomic<const Ops*>& active_slot() {
  static std::atomic<const Ops*> slot{&ops(pick_default())};
  return slot;
}

}  // namespace

const Ops& ops(Backend b) {
  switch (b) {
    case Backend::scalar:
      return scalar_ops();
    case Backend::avx2:
#if EHRFUSE_HAVE_AVX2
      if (avx2_supported()) return avx2_ops();
#endif
      throw std::runtime_error("avx2 kernel backend unavailable on this machine");
  }
  throw std::logic_error("unknown kernel backend");
}

const Ops& active() { return *active_slot().load(std::memory_order_relaxed); }

Backend active_backend() {
  return std::strcmp(active().name, "avx2") == 0 ? Backend::avx2 : Backend::scalar;
}

void set_backend(Backend b) { active_slot().store(&ops(b), std::memory_order_relaxed); }

}  // namespace ehrfuse::kernels
