// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0
//
// Scalar/AVX2 kernel equivalence. Elementwise kernels must agree bitwise
// (identical per-element arithmetic); reductions and matmuls may differ in
// accumulation order, so they are bounded by a tight relative tolerance.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "ehrfuse/kernels.hpp"
#include "ehrfuse/rng.hpp"

using namespace ehrfuse;
namespace k = ehrfuse::kernels;

namespace {

std::vector<double> random_vec(rng::Stream& s, int64_t n, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = s.uniform(lo, hi);
  return v;
}

bool close_rel(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({std::abs(a), std::abs(b), 1.0});
}

const std::vector<int64_t> kSizes = {1, 2, 3, 4, 5, 7, 8, 15, 16, 33, 64, 67, 128, 257};

}  // namespace

TEST_CASE("dispatch exposes a scalar reference and honors explicit selection") {
  const auto& s = k::ops(k::Backend::scalar);
  CHECK(std::string(s.name) == "scalar");
  if (k::avx2_supported()) {
    const auto& a = k::ops(k::Backend::avx2);
    CHECK(std::string(a.name) == "avx2");
    k::set_backend(k::Backend::avx2);
    CHECK(k::active_backend() == k::Backend::avx2);
    k::set_backend(k::Backend::scalar);
    CHECK(k::active_backend() == k::Backend::scalar);
    k::set_backend(k::Backend::avx2);
  } else {
    CHECK_THROWS(k::ops(k::Backend::avx2));
  }
}

TEST_CASE("elementwise kernels agree bitwise across backends") {
  if (!k::avx2_supported()) return;
  const auto& sc = k::ops(k::Backend::scalar);
  const auto& av = k::ops(k::Backend::avx2);
  rng::Stream s(11);
  for (int64_t n : kSizes) {
    auto a = random_vec(s, n), b = random_vec(s, n);
    std::vector<double> r1(static_cast<size_t>(n)), r2(static_cast<size_t>(n));

    sc.add(a.data(), b.data(), r1.data(), n);
    av.add(a.data(), b.data(), r2.data(), n);
    CHECK(r1 == r2);
    sc.sub(a.data(), b.data(), r1.data(), n);
    av.sub(a.data(), b.data(), r2.data(), n);
    CHECK(r1 == r2);
    sc.mul(a.data(), b.data(), r1.data(), n);
    av.mul(a.data(), b.data(), r2.data(), n);
    CHECK(r1 == r2);
    sc.scale(a.data(), 1.7, r1.data(), n);
    av.scale(a.data(), 1.7, r2.data(), n);
    CHECK(r1 == r2);
    sc.divc(a.data(), 3.0, r1.data(), n);
    av.divc(a.data(), 3.0, r2.data(), n);
    CHECK(r1 == r2);
    sc.relu(a.data(), r1.data(), n);
    av.relu(a.data(), r2.data(), n);
    CHECK(r1 == r2);

    auto y1 = b, y2 = b;
    sc.axpy(0.3, a.data(), y1.data(), n);
    // axpy uses fma on avx2; bound instead of bitwise
    av.axpy(0.3, a.data(), y2.data(), n);
    for (int64_t i = 0; i < n; ++i) CHECK(close_rel(y1[static_cast<size_t>(i)], y2[static_cast<size_t>(i)], 1e-15));

    auto g1 = b, g2 = b;
    sc.relu_bwd_acc(a.data(), b.data(), g1.data(), n);
    av.relu_bwd_acc(a.data(), b.data(), g2.data(), n);
    CHECK(g1 == g2);
  }
}

TEST_CASE("reductions agree within accumulation tolerance") {
  if (!k::avx2_supported()) return;
  const auto& sc = k::ops(k::Backend::scalar);
  const auto& av = k::ops(k::Backend::avx2);
  rng::Stream s(12);
  for (int64_t n : kSizes) {
    auto a = random_vec(s, n), b = random_vec(s, n);
    CHECK(close_rel(sc.dot(a.data(), b.data(), n), av.dot(a.data(), b.data(), n), 1e-12));
    CHECK(close_rel(sc.sum(a.data(), n), av.sum(a.data(), n), 1e-12));
    CHECK(sc.maxv(a.data(), n) == av.maxv(a.data(), n));
    CHECK(close_rel(sc.sq_sum(a.data(), n), av.sq_sum(a.data(), n), 1e-12));
    double m1, v1, m2, v2;
    sc.mean_var(a.data(), n, &m1, &v1);
    av.mean_var(a.data(), n, &m2, &v2);
    CHECK(close_rel(m1, m2, 1e-12));
    CHECK(close_rel(v1, v2, 1e-12));
  }
}

TEST_CASE("matmul variants agree within accumulation tolerance") {
  if (!k::avx2_supported()) return;
  const auto& sc = k::ops(k::Backend::scalar);
  const auto& av = k::ops(k::Backend::avx2);
  rng::Stream s(13);
  const std::vector<std::array<int64_t, 3>> shapes = {
      {1, 1, 1}, {2, 3, 4}, {5, 7, 3}, {8, 8, 8}, {13, 9, 11}, {32, 17, 6}, {49, 16, 33}};
  for (auto [m, kk, n] : shapes) {
    auto a = random_vec(s, m * kk);
    auto b = random_vec(s, kk * n);
    auto bt = random_vec(s, n * kk);
    auto at = random_vec(s, kk * m);
    std::vector<double> c1(static_cast<size_t>(m * n)), c2(static_cast<size_t>(m * n));

    sc.matmul_nn(a.data(), b.data(), c1.data(), m, kk, n);
    av.matmul_nn(a.data(), b.data(), c2.data(), m, kk, n);
    for (size_t i = 0; i < c1.size(); ++i) CHECK(close_rel(c1[i], c2[i], 1e-12));

    sc.matmul_nt(a.data(), bt.data(), c1.data(), m, kk, n);
    av.matmul_nt(a.data(), bt.data(), c2.data(), m, kk, n);
    for (size_t i = 0; i < c1.size(); ++i) CHECK(close_rel(c1[i], c2[i], 1e-12));

    sc.matmul_tn(at.data(), b.data(), c1.data(), m, kk, n);
    av.matmul_tn(at.data(), b.data(), c2.data(), m, kk, n);
    for (size_t i = 0; i < c1.size(); ++i) CHECK(close_rel(c1[i], c2[i], 1e-12));
  }
}

TEST_CASE("softmax rows sum to one and match across backends") {
  if (!k::avx2_supported()) return;
  const auto& sc = k::ops(k::Backend::scalar);
  const auto& av = k::ops(k::Backend::avx2);
  rng::Stream s(14);
  for (int64_t n : kSizes) {
    auto a = random_vec(s, n, -30.0, 30.0);
    std::vector<double> r1(static_cast<size_t>(n)), r2(static_cast<size_t>(n));
    sc.softmax_row(a.data(), r1.data(), n);
    av.softmax_row(a.data(), r2.data(), n);
    double sum1 = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      CHECK(close_rel(r1[static_cast<size_t>(i)], r2[static_cast<size_t>(i)], 1e-12));
      sum1 += r1[static_cast<size_t>(i)];
    }
    CHECK(std::abs(sum1 - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax worked example: symmetric two-way split") {
  double in[2] = {0.0, 0.0};
  double out[2];
  k::active().softmax_row(in, out, 2);
  CHECK(out[0] == 0.5);
  CHECK(out[1] == 0.5);
}

TEST_CASE("adamw update agrees across backends and matches the closed form") {
  if (k::avx2_supported()) {
    const auto& sc = k::ops(k::Backend::scalar);
    const auto& av = k::ops(k::Backend::avx2);
    rng::Stream s(15);
    for (int64_t n : kSizes) {
      auto p1 = random_vec(s, n), g = random_vec(s, n);
      auto p2 = p1;
      std::vector<double> m1(static_cast<size_t>(n)), v1(static_cast<size_t>(n));
      auto m2 = m1, v2 = v1;
      const double bc1 = 1.0 - 0.9, bc2 = 1.0 - 0.999;
      sc.adamw(p1.data(), g.data(), m1.data(), v1.data(), n, 1e-3, 0.9, 0.999, 1e-8, 0.01, bc1, bc2);
      av.adamw(p2.data(), g.data(), m2.data(), v2.data(), n, 1e-3, 0.9, 0.999, 1e-8, 0.01, bc1, bc2);
      for (int64_t i = 0; i < n; ++i) {
        CHECK(close_rel(p1[static_cast<size_t>(i)], p2[static_cast<size_t>(i)], 1e-14));
        CHECK(close_rel(m1[static_cast<size_t>(i)], m2[static_cast<size_t>(i)], 1e-14));
        CHECK(close_rel(v1[static_cast<size_t>(i)], v2[static_cast<size_t>(i)], 1e-14));
      }
    }
  }
  // closed form at t=1, g=1, lr=0.1, no decay: step is lr/(1+eps*sqrt(bc2)/...)
  double p = 2.0, g = 1.0, m = 0.0, v = 0.0;
  k::active().adamw(&p, &g, &m, &v, 1, 0.1, 0.9, 0.999, 1e-8, 0.0, 1.0 - 0.9, 1.0 - 0.999);
  CHECK(std::abs((2.0 - p) - 0.1) < 1e-8);
}

TEST_CASE("all_finite flags NaN and Inf anywhere, including remainder lanes") {
  for (int64_t n : kSizes) {
    std::vector<double> a(static_cast<size_t>(n), 1.0);
    CHECK(k::active().all_finite(a.data(), n));
    for (int64_t bad : {int64_t{0}, n / 2, n - 1}) {
      auto b = a;
      b[static_cast<size_t>(bad)] = std::numeric_limits<double>::quiet_NaN();
      CHECK_FALSE(k::active().all_finite(b.data(), n));
      b[static_cast<size_t>(bad)] = std::numeric_limits<double>::infinity();
      CHECK_FALSE(k::active().all_finite(b.data(), n));
    }
  }
  if (k::avx2_supported()) {
    std::vector<double> a(9, 0.0);
    a[8] = -std::numeric_limits<double>::infinity();
    CHECK_FALSE(k::ops(k::Backend::avx2).all_finite(a.data(), 9));
    CHECK_FALSE(k::ops(k::Backend::scalar).all_finite(a.data(), 9));
  }
}

TEST_CASE("transcendental maps are shared: identical bits on both backends") {
  rng::Stream s(16);
  auto a = random_vec(s, 37, -3.0, 3.0);
  std::vector<double> t1(37), t2(37);
  k::set_backend(k::Backend::scalar);
  k::tanh_v(a.data(), t1.data(), 37);
  if (k::avx2_supported()) k::set_backend(k::Backend::avx2);
  k::tanh_v(a.data(), t2.data(), 37);
  CHECK(t1 == t2);
}
