// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense f64 compute kernels. Every data-parallel inner loop used by the
// autodiff layer goes through this dispatch table: a scalar reference
// implementation always exists, and an AVX2+FMA variant is selected at
// runtime when the CPU supports it. The two backends are equivalence-tested
// against each other; transcendental maps (tanh, exp, ...) share one scalar
// path so both backends produce identical bits for them.

#pragma once

#include <cstdint>
#include <string>

namespace ehrfuse::kernels {

enum class Backend { scalar, avx2 };

// All matrices are row-major. matmul_nn: C[m,n] = A[m,k] * B[k,n].
// matmul_nt: C[m,n] = A[m,k] * B[n,k]^T. matmul_tn: C[m,n] = A[k,m]^T * B[k,n].
struct Ops {
  const char* name;
  void (*add)(const double* a, const double* b, double* out, int64_t n);
  void (*sub)(const double* a, const double* b, double* out, int64_t n);
  void (*mul)(const double* a, const double* b, double* out, int64_t n);
  void (*scale)(const double* a, double c, double* out, int64_t n);
  void (*divc)(const double* a, double c, double* out, int64_t n);
  void (*axpy)(double a, const double* x, double* y, int64_t n);  // y += a*x
  double (*dot)(const double* a, const double* b, int64_t n);
  double (*sum)(const double* a, int64_t n);
  double (*maxv)(const double* a, int64_t n);
  double (*sq_sum)(const double* a, int64_t n);
  void (*mean_var)(const double* a, int64_t n, double* mean, double* var);
  bool (*all_finite)(const double* a, int64_t n);
  void (*matmul_nn)(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
  void (*matmul_nt)(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
  void (*matmul_tn)(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
  void (*relu)(const double* a, double* out, int64_t n);
  void (*relu_bwd_acc)(const double* x, const double* g, double* out, int64_t n);  // out += g*(x>0)
  void (*softmax_row)(const double* a, double* out, int64_t n);
  // Decoupled-weight-decay adaptive update on one parameter block.
  // bc1/bc2 are pre-computed bias corrections 1-beta^t.
  void (*adamw)(double* p, const double* g, double* m, double* v, int64_t n,
                double lr, double b1, double b2, double eps, double wd,
                double bc1, double bc2);
};

const Ops& ops(Backend b);
const Ops& active();
Backend active_backend();
void set_backend(Backend b);  // throws if the backend is unavailable
bool avx2_supported();

// Shared scalar transcendental maps (identical on both backends).
void tanh_v(const double* a, double* out, int64_t n);
void sigmoid_v(const double* a, double* out, int64_t n);
void gelu_v(const double* a, double* out, int64_t n);
void gelu_bwd_acc(const double* x, const double* g, double* out, int64_t n);

}  // namespace ehrfuse::kernels
