// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over 2-D dense arrays. A Tape
// records primitive applications in topological order; backward() walks the
// record in reverse and accumulates into Parameter::grad. Forward replay on
// identical inputs is bit-identical; every primitive output is checked
// finite (fail-fast NaN policy).

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ehrfuse/rng.hpp"
#include "ehrfuse/tensor.hpp"

namespace ehrfuse::ad {

struct Parameter {
  std::string id;
  Tensor data;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string name, Tensor values, bool is_trainable = true)
      : id(std::move(name)),
        data(std::move(values)),
        grad(data.rows(), data.cols()),
        trainable(is_trainable) {}

  void reset_grad() { grad = Tensor(data.rows(), data.cols()); }
};

// Sorted by id: iteration order is the serialization order.
using ParameterSet = std::map<std::string, Parameter>;

enum class Op : uint8_t {
  Constant,
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  AddRowVec,
  Scale,
  ConcatRows,
  ConcatCols,
  SliceRows,
  SliceCols,
  Relu,
  Tanh,
  Sigmoid,
  Gelu,
  SoftmaxRows,
  LayerNorm,
  Lookup,
  MeanRows,
  SumAll,
  MeanAll,
  Bce,
  Dropout,
};

const char* op_name(Op op);

struct Attrs {
  bool trans_a = false;
  bool trans_b = false;
  double c = 1.0;        // Scale factor
  bool divide = false;   // Scale divides instead of multiplying
  int64_t begin = 0;     // Slice bounds
  int64_t end = 0;
  double eps = 1e-5;     // LayerNorm epsilon
  double rate = 0.0;     // Dropout rate
  std::vector<int32_t> ids;     // Lookup row indices
  std::vector<double> labels;   // Bce targets
};

class Tape {
 public:
  using V = int32_t;

  explicit Tape(rng::Stream* dropout_rng = nullptr) : rng_(dropout_rng) {}

  V constant(Tensor t);
  V leaf(Parameter& p);

  // Generic primitive application: validates shapes, computes the forward
  // value, records the node. Typed helpers below are thin wrappers.
  V apply(Op op, const std::vector<V>& inputs, Attrs attrs = {});

  V matmul(V a, V b, bool trans_a = false, bool trans_b = false);
  V add(V a, V b);
  V sub(V a, V b);
  V mul(V a, V b);
  V add_rowvec(V x, V bias);
  V scale(V x, double c);
  V divide(V x, double c);
  V concat_rows(V a, V b);
  V concat_cols(V a, V b);
  V slice_rows(V x, int64_t begin, int64_t end);
  V slice_cols(V x, int64_t begin, int64_t end);
  V relu(V x);
  V tanh(V x);
  V sigmoid(V x);
  V gelu(V x);
  V softmax_rows(V x);
  V layer_norm(V x, V gamma, V beta, double eps = 1e-5);
  V lookup(V table, std::vector<int32_t> ids);
  V mean_rows(V x);
  V sum_all(V x);
  V mean_all(V x);
  V bce(V probs, std::vector<double> labels);
  V dropout(V x, double rate);

  const Tensor& value(V v) const;
  double scalar(V v) const;
  size_t size() const { return nodes_.size(); }
  bool has_rng() const { return rng_ != nullptr; }

  // Accumulates d(loss)/d(p) into every reachable trainable Parameter's
  // grad. Repeated calls add (gradient accumulation contract).
  void backward(V loss);

 private:
  struct Node {
    Op op;
    std::array<V, 3> in{-1, -1, -1};
    int nin = 0;
    Tensor out;
    Attrs attrs;
    Tensor aux;  // op-specific saved intermediates
    Parameter* param = nullptr;
  };

  std::vector<Node> nodes_;
  rng::Stream* rng_ = nullptr;

  V push(Node n);
  const Node& node(V v) const;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

struct FdSpec {
  int sample_count = 100;
  double h = 1e-5;
  double tol_rel = 1e-3;
  uint64_t seed = 0;
};

struct FdItem {
  std::string param;
  int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct FdReport {
  int checked = 0;
  int failed = 0;
  double max_rel_err = 0.0;
  std::vector<FdItem> failures;
  bool pass() const { return checked > 0 && failed == 0; }
};

// run(with_grad): evaluates the scalar loss from the current parameter
// values, rebuilding its graph; when with_grad, also runs backward. The
// harness resets gradients itself, samples coordinates of trainable
// parameters, and compares analytic gradients with central differences at
// per-coordinate step h*max(1, |theta|).
FdReport finite_difference_check(ParameterSet& params,
                                 const std::function<double(bool with_grad)>& run,
                                 const FdSpec& spec);

}  // namespace ehrfuse::ad
