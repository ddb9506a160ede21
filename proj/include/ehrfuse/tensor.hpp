// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ehrfuse {

// Raised when a computation produces NaN/Inf. The fail-fast policy: no
// non-finite value ever propagates silently.
struct NumericFault : std::runtime_error {
  explicit NumericFault(const std::string& what) : std::runtime_error(what) {}
};

// Row-major 2-D dense array of f64. Scalars are 1x1, row vectors 1xd.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int64_t rows, int64_t cols)
      : r_(rows), c_(cols), v_(static_cast<size_t>(rows * cols), 0.0) {
    if (rows <= 0 || cols <= 0) throw std::invalid_argument("Tensor: non-positive shape");
  }
  Tensor(int64_t rows, int64_t cols, std::vector<double> values)
      : r_(rows), c_(cols), v_(std::move(values)) {
    if (rows <= 0 || cols <= 0) throw std::invalid_argument("Tensor: non-positive shape");
    if (v_.size() != static_cast<size_t>(rows * cols))
      throw std::invalid_argument("Tensor: value count does not match shape");
  }

  static Tensor scalar(double x) { return Tensor(1, 1, {x}); }
  static Tensor row(std::vector<double> values) {
    const int64_t n = static_cast<int64_t>(values.size());
    return Tensor(1, n, std::move(values));
  }
  static Tensor col(std::vector<double> values) {
    const int64_t n = static_cast<int64_t>(values.size());
    return Tensor(n, 1, std::move(values));
  }
  static Tensor full(int64_t rows, int64_t cols, double x) {
    Tensor t(rows, cols);
    std::fill(t.v_.begin(), t.v_.end(), x);
    return t;
  }

  int64_t rows() const { return r_; }
  int64_t cols() const { return c_; }
  int64_t size() const { return r_ * c_; }
  bool empty() const { return r_ == 0; }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  double& at(int64_t i, int64_t j) { return v_[static_cast<size_t>(i * c_ + j)]; }
  double at(int64_t i, int64_t j) const { return v_[static_cast<size_t>(i * c_ + j)]; }
  double& operator[](int64_t i) { return v_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return v_[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return r_ == o.r_ && c_ == o.c_; }
  std::string shape_str() const {
    return "[" + std::to_string(r_) + "x" + std::to_string(c_) + "]";
  }

  bool operator==(const Tensor& o) const { return r_ == o.r_ && c_ == o.c_ && v_ == o.v_; }

 private:
  int64_t r_ = 0;
  int64_t c_ = 0;
  std::vector<double> v_;
};

}  // namespace ehrfuse
