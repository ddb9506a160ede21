// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0
//
// Scalar reference kernels. These define the semantics the AVX2 variants
// are tested against.

#include "ehrfuse/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace ehrfuse::kernels {

namespace scalar {

void add(const double* a, const double* b, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(const double* a, double c, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] * c;
}

void divc(const double* a, double c, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] / c;
}

void axpy(double a, const double* x, double* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double dot(const double* a, const double* b, int64_t n) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double sum(const double* a, int64_t n) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += a[i];
  return s;
}

double maxv(const double* a, int64_t n) {
  double m = a[0];
  for (int64_t i = 1; i < n; ++i) m = std::max(m, a[i]);
  return m;
}

double sq_sum(const double* a, int64_t n) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += a[i] * a[i];
  return s;
}

void mean_var(const double* a, int64_t n, double* mean, double* var) {
  double mu = sum(a, n) / static_cast<double>(n);
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double d = a[i] - mu;
    acc += d * d;
  }
  *mean = mu;
  *var = acc / static_cast<double>(n);
}

bool all_finite(const double* a, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(a[i])) return false;
  }
  return true;
}

void matmul_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  std::memset(c, 0, sizeof(double) * static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (int64_t j = 0; j < n; ++j) {
      c[i * n + j] = dot(arow, b + j * k, k);
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  std::memset(c, 0, sizeof(double) * static_cast<size_t>(m * n));
  for (int64_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (int64_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void relu(const double* a, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
}

void relu_bwd_acc(const double* x, const double* g, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    if (x[i] > 0.0) out[i] += g[i];
  }
}

void softmax_row(const double* a, double* out, int64_t n) {
  double m = maxv(a, n);
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    out[i] = std::exp(a[i] - m);
    s += out[i];
  }
  for (int64_t i = 0; i < n; ++i) out[i] /= s;
}

void adamw(double* p, const double* g, double* m, double* v, int64_t n,
           double lr, double b1, double b2, double eps, double wd,
           double bc1, double bc2) {
  for (int64_t i = 0; i < n; ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    const double mh = m[i] / bc1;
    const double vh = v[i] / bc2;
    p[i] -= lr * (mh / (std::sqrt(vh) + eps)) + lr * wd * p[i];
  }
}

}  // namespace scalar

const Ops& scalar_ops() {
  static const Ops table{
      "scalar",
      scalar::add,
      scalar::sub,
      scalar::mul,
      scalar::scale,
      scalar::divc,
      scalar::axpy,
      scalar::dot,
      scalar::sum,
      scalar::maxv,
      scalar::sq_sum,
      scalar::mean_var,
      scalar::all_finite,
      scalar::matmul_nn,
      scalar::matmul_nt,
      scalar::matmul_tn,
      scalar::relu,
      scalar::relu_bwd_acc,
      scalar::softmax_row,
      scalar::adamw,
  };
  return table;
}

void tanh_v(const double* a, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = std::tanh(a[i]);
}

void sigmoid_v(const double* a, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-a[i]));
}

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

// Exact (erf-based) GELU, not the tanh approximation.
void gelu_v(const double* a, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    out[i] = 0.5 * a[i] * (1.0 + std::erf(a[i] * kInvSqrt2));
  }
}

void gelu_bwd_acc(const double* x, const double* g, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    const double cdf = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
    out[i] += g[i] * (cdf + x[i] * pdf);
  }
}

}  // namespace ehrfuse::kernels
