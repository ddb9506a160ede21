// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0

#include "ehrfuse/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ehrfuse/kernels.hpp"

namespace ehrfuse::ad {

namespace {

constexpr double kBceClamp = 1e-7;

[[noreturn]] void shape_error(Op op, const std::string& detail) {
  throw std::invalid_argument(std::string(op_name(op)) + ": " + detail);
}

void require(bool ok, Op op, const std::string& detail) {
  if (!ok) shape_error(op, detail);
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Constant: return "constant";
    case Op::Leaf: return "leaf";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::AddRowVec: return "add_rowvec";
    case Op::Scale: return "scale";
    case Op::ConcatRows: return "concat_rows";
    case Op::ConcatCols: return "concat_cols";
    case Op::SliceRows: return "slice_rows";
    case Op::SliceCols: return "slice_cols";
    case Op::Relu: return "relu";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Gelu: return "gelu";
    case Op::SoftmaxRows: return "softmax_rows";
    case Op::LayerNorm: return "layer_norm";
    case Op::Lookup: return "lookup";
    case Op::MeanRows: return "mean_rows";
    case Op::SumAll: return "sum_all";
    case Op::MeanAll: return "mean_all";
    case Op::Bce: return "bce";
    case Op::Dropout: return "dropout";
  }
  return "?";
}

Tape::V Tape::push(Node n) {
  if (n.op != Op::Constant && n.op != Op::Leaf) {
    if (!kernels::active().all_finite(n.out.data(), n.out.size())) {
      throw NumericFault(std::string(op_name(n.op)) + ": non-finite output");
    }
  }
  nodes_.push_back(std::move(n));
  return static_cast<V>(nodes_.size() - 1);
}

const Tape::Node& Tape::node(V v) const {
  if (v < 0 || static_cast<size_t>(v) >= nodes_.size())
    throw std::invalid_argument("tape: invalid node handle");
  return nodes_[static_cast<size_t>(v)];
}

const Tensor& Tape::value(V v) const { return node(v).out; }

double Tape::scalar(V v) const {
  const Tensor& t = node(v).out;
  if (t.size() != 1) throw std::invalid_argument("tape: scalar() on non-scalar " + t.shape_str());
  return t[0];
}

Tape::V Tape::constant(Tensor t) {
  if (!kernels::active().all_finite(t.data(), t.size()))
    throw NumericFault("constant: non-finite input");
  Node n;
  n.op = Op::Constant;
  n.out = std::move(t);
  return push(std::move(n));
}

Tape::V Tape::leaf(Parameter& p) {
  if (!kernels::active().all_finite(p.data.data(), p.data.size()))
    throw NumericFault("leaf '" + p.id + "': non-finite parameter values");
  Node n;
  n.op = Op::Leaf;
  n.out = p.data;
  n.param = &p;
  return push(std::move(n));
}

Tape::V Tape::apply(Op op, const std::vector<V>& inputs, Attrs attrs) {
  const auto& ops = kernels::active();
  Node n;
  n.op = op;
  n.attrs = std::move(attrs);
  n.nin = static_cast<int>(inputs.size());
  require(n.nin <= 3, op, "too many inputs");
  for (int i = 0; i < n.nin; ++i) n.in[static_cast<size_t>(i)] = inputs[static_cast<size_t>(i)];

  auto in = [&](int i) -> const Tensor& { return node(n.in[static_cast<size_t>(i)]).out; };

  switch (op) {
    case Op::Constant:
    case Op::Leaf:
      shape_error(op, "use constant()/leaf() directly");

    case Op::MatMul: {
      require(n.nin == 2, op, "expects 2 inputs");
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const bool ta = n.attrs.trans_a, tb = n.attrs.trans_b;
      require(!(ta && tb), op, "double-transpose unsupported");
      const int64_t m = ta ? a.cols() : a.rows();
      const int64_t ka = ta ? a.rows() : a.cols();
      const int64_t kb = tb ? b.cols() : b.rows();
      const int64_t nn = tb ? b.rows() : b.cols();
      require(ka == kb, op,
              "inner dimensions disagree: " + a.shape_str() + (ta ? "^T" : "") + " * " +
                  b.shape_str() + (tb ? "^T" : ""));
      n.out = Tensor(m, nn);
      if (!ta && !tb) ops.matmul_nn(a.data(), b.data(), n.out.data(), m, ka, nn);
      else if (!ta && tb) ops.matmul_nt(a.data(), b.data(), n.out.data(), m, ka, nn);
      else ops.matmul_tn(a.data(), b.data(), n.out.data(), m, ka, nn);
      break;
    }

    case Op::Add:
    case Op::Sub:
    case Op::Mul: {
      require(n.nin == 2, op, "expects 2 inputs");
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      require(a.same_shape(b), op, "shape mismatch " + a.shape_str() + " vs " + b.shape_str());
      n.out = Tensor(a.rows(), a.cols());
      if (op == Op::Add) ops.add(a.data(), b.data(), n.out.data(), a.size());
      else if (op == Op::Sub) ops.sub(a.data(), b.data(), n.out.data(), a.size());
      else ops.mul(a.data(), b.data(), n.out.data(), a.size());
      break;
    }

    case Op::AddRowVec: {
      require(n.nin == 2, op, "expects 2 inputs");
      const Tensor& x = in(0);
      const Tensor& b = in(1);
      require(b.rows() == 1 && b.cols() == x.cols(), op,
              "bias " + b.shape_str() + " does not broadcast over " + x.shape_str());
      n.out = Tensor(x.rows(), x.cols());
      for (int64_t i = 0; i < x.rows(); ++i) {
        ops.add(x.data() + i * x.cols(), b.data(), n.out.data() + i * x.cols(), x.cols());
      }
      break;
    }

    case Op::Scale: {
      require(n.nin == 1, op, "expects 1 input");
      const Tensor& x = in(0);
      require(!n.attrs.divide || n.attrs.c != 0.0, op, "division by zero");
      n.out = Tensor(x.rows(), x.cols());
      if (n.attrs.divide) ops.divc(x.data(), n.attrs.c, n.out.data(), x.size());
      else ops.scale(x.data(), n.attrs.c, n.out.data(), x.size());
      break;
    }

    case Op::ConcatRows: {
      require(n.nin == 2, op, "expects 2 inputs");
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      require(a.cols() == b.cols(), op,
              "column mismatch " + a.shape_str() + " vs " + b.shape_str());
      n.out = Tensor(a.rows() + b.rows(), a.cols());
      std::copy(a.data(), a.data() + a.size(), n.out.data());
      std::copy(b.data(), b.data() + b.size(), n.out.data() + a.size());
      break;
    }

    case Op::ConcatCols: {
      require(n.nin == 2, op, "expects 2 inputs");
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      require(a.rows() == b.rows(), op, "row mismatch " + a.shape_str() + " vs " + b.shape_str());
      n.out = Tensor(a.rows(), a.cols() + b.cols());
      for (int64_t i = 0; i < a.rows(); ++i) {
        std::copy(a.data() + i * a.cols(), a.data() + (i + 1) * a.cols(),
                  n.out.data() + i * n.out.cols());
        std::copy(b.data() + i * b.cols(), b.data() + (i + 1) * b.cols(),
                  n.out.data() + i * n.out.cols() + a.cols());
      }
      break;
    }

    case Op::SliceRows: {
      require(n.nin == 1, op, "expects 1 input");
      const Tensor& x = in(0);
      const int64_t b = n.attrs.begin, e = n.attrs.end;
      require(0 <= b && b < e && e <= x.rows(), op,
              "row range [" + std::to_string(b) + "," + std::to_string(e) + ") out of " +
                  x.shape_str());
      n.out = Tensor(e - b, x.cols());
      std::copy(x.data() + b * x.cols(), x.data() + e * x.cols(), n.out.data());
      break;
    }

    case Op::SliceCols: {
      require(n.nin == 1, op, "expects 1 input");
      const Tensor& x = in(0);
      const int64_t b = n.attrs.begin, e = n.attrs.end;
      require(0 <= b && b < e && e <= x.cols(), op,
              "column range [" + std::to_string(b) + "," + std::to_string(e) + ") out of " +
                  x.shape_str());
      n.out = Tensor(x.rows(), e - b);
      for (int64_t i = 0; i < x.rows(); ++i) {
        std::copy(x.data() + i * x.cols() + b, x.data() + i * x.cols() + e,
                  n.out.data() + i * n.out.cols());
      }
      break;
    }

    case Op::Relu:
    case Op::Tanh:
    case Op::Sigmoid:
    case Op::Gelu: {
      require(n.nin == 1, op, "expects 1 input");
      const Tensor& x = in(0);
      n.out = Tensor(x.rows(), x.cols());
      if (op == Op::Relu) ops.relu(x.data(), n.out.data(), x.size());
      else if (op == Op::Tanh) kernels::tanh_v(x.data(), n.out.data(), x.size());
      else if (op == Op::Sigmoid) kernels::sigmoid_v(x.data(), n.out.data(), x.size());
      else kernels::gelu_v(x.data(), n.out.data(), x.size());
      break;
    }

    case Op::SoftmaxRows: {
      require(n.nin == 1, op, "expects 1 input");
      const Tensor& x = in(0);
      n.out = Tensor(x.rows(), x.cols());
      for (int64_t i = 0; i < x.rows(); ++i) {
        ops.softmax_row(x.data() + i * x.cols(), n.out.data() + i * x.cols(), x.cols());
      }
      break;
    }

    case Op::LayerNorm: {
      require(n.nin == 3, op, "expects (x, scale, shift)");
      const Tensor& x = in(0);
      const Tensor& gamma = in(1);
      const Tensor& beta = in(2);
      require(gamma.rows() == 1 && gamma.cols() == x.cols(), op,
              "scale " + gamma.shape_str() + " does not match " + x.shape_str());
      require(beta.rows() == 1 && beta.cols() == x.cols(), op,
              "shift " + beta.shape_str() + " does not match " + x.shape_str());
      n.out = Tensor(x.rows(), x.cols());
      n.aux = Tensor(x.rows(), 2);  // (mean, 1/std) per row
      for (int64_t i = 0; i < x.rows(); ++i) {
        double mu, var;
        ops.mean_var(x.data() + i * x.cols(), x.cols(), &mu, &var);
        const double rsig = 1.0 / std::sqrt(var + n.attrs.eps);
        n.aux.at(i, 0) = mu;
        n.aux.at(i, 1) = rsig;
        for (int64_t j = 0; j < x.cols(); ++j) {
          n.out.at(i, j) = (x.at(i, j) - mu) * rsig * gamma[j] + beta[j];
        }
      }
      break;
    }

    case Op::Lookup: {
      require(n.nin == 1, op, "expects 1 input (table)");
      const Tensor& table = in(0);
      const auto& ids = n.attrs.ids;
      require(!ids.empty(), op, "empty id list");
      for (int32_t id : ids) {
        require(0 <= id && id < table.rows(), op,
                "id " + std::to_string(id) + " out of table " + table.shape_str());
      }
      n.out = Tensor(static_cast<int64_t>(ids.size()), table.cols());
      for (size_t i = 0; i < ids.size(); ++i) {
        std::copy(table.data() + ids[i] * table.cols(), table.data() + (ids[i] + 1) * table.cols(),
                  n.out.data() + static_cast<int64_t>(i) * table.cols());
      }
      break;
    }

    case Op::MeanRows: {
      require(n.nin == 1, op, "expects 1 input");
      const Tensor& x = in(0);
      n.out = Tensor(1, x.cols());
      for (int64_t i = 0; i < x.rows(); ++i) {
        ops.add(n.out.data(), x.data() + i * x.cols(), n.out.data(), x.cols());
      }
      ops.divc(n.out.data(), static_cast<double>(x.rows()), n.out.data(), x.cols());
      break;
    }

    case Op::SumAll: {
      require(n.nin == 1, op, "expects 1 input");
      const Tensor& x = in(0);
      n.out = Tensor::scalar(ops.sum(x.data(), x.size()));
      break;
    }

    case Op::MeanAll: {
      require(n.nin == 1, op, "expects 1 input");
      const Tensor& x = in(0);
      n.out = Tensor::scalar(ops.sum(x.data(), x.size()) / static_cast<double>(x.size()));
      break;
    }

    case Op::Bce: {
      require(n.nin == 1, op, "expects 1 input (probabilities)");
      const Tensor& p = in(0);
      require(p.cols() == 1, op, "probabilities must be a column, got " + p.shape_str());
      require(p.rows() == static_cast<int64_t>(n.attrs.labels.size()), op,
              "label count " + std::to_string(n.attrs.labels.size()) + " != rows " +
                  std::to_string(p.rows()));
      require(p.rows() > 0, op, "empty batch");
      n.aux = Tensor(p.rows(), 1);  // clamped probabilities
      double acc = 0.0;
      for (int64_t i = 0; i < p.rows(); ++i) {
        const double y = n.attrs.labels[static_cast<size_t>(i)];
        require(y == 0.0 || y == 1.0, op, "labels must be 0/1");
        const double pc = std::clamp(p[i], kBceClamp, 1.0 - kBceClamp);
        n.aux[i] = pc;
        acc -= y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
      }
      n.out = Tensor::scalar(acc / static_cast<double>(p.rows()));
      break;
    }

    case Op::Dropout: {
      require(n.nin == 1, op, "expects 1 input");
      const Tensor& x = in(0);
      const double rate = n.attrs.rate;
      require(rate >= 0.0 && rate < 1.0, op, "rate must be in [0,1)");
      require(rng_ != nullptr, op, "tape has no rng stream for dropout");
      n.aux = Tensor(x.rows(), x.cols());  // inverted mask
      const double keep = 1.0 - rate;
      for (int64_t i = 0; i < x.size(); ++i) {
        n.aux[i] = rng_->u01() < rate ? 0.0 : 1.0 / keep;
      }
      n.out = Tensor(x.rows(), x.cols());
      ops.mul(x.data(), n.aux.data(), n.out.data(), x.size());
      break;
    }
  }
  return push(std::move(n));
}

Tape::V Tape::matmul(V a, V b, bool trans_a, bool trans_b) {
  Attrs at;
  at.trans_a = trans_a;
  at.trans_b = trans_b;
  return apply(Op::MatMul, {a, b}, std::move(at));
}
Tape::V Tape::add(V a, V b) { return apply(Op::Add, {a, b}); }
Tape::V Tape::sub(V a, V b) { return apply(Op::Sub, {a, b}); }
Tape::V Tape::mul(V a, V b) { return apply(Op::Mul, {a, b}); }
Tape::V Tape::add_rowvec(V x, V bias) { return apply(Op::AddRowVec, {x, bias}); }
Tape::V Tape::scale(V x, double c) {
  Attrs at;
  at.c = c;
  return apply(Op::Scale, {x}, std::move(at));
}
Tape::V Tape::divide(V x, double c) {
  Attrs at;
  at.c = c;
  at.divide = true;
  return apply(Op::Scale, {x}, std::move(at));
}
Tape::V Tape::concat_rows(V a, V b) { return apply(Op::ConcatRows, {a, b}); }
Tape::V Tape::concat_cols(V a, V b) { return apply(Op::ConcatCols, {a, b}); }
Tape::V Tape::slice_rows(V x, int64_t begin, int64_t end) {
  Attrs at;
  at.begin = begin;
  at.end = end;
  return apply(Op::SliceRows, {x}, std::move(at));
}
Tape::V Tape::slice_cols(V x, int64_t begin, int64_t end) {
  Attrs at;
  at.begin = begin;
  at.end = end;
  return apply(Op::SliceCols, {x}, std::move(at));
}
Tape::V Tape::relu(V x) { return apply(Op::Relu, {x}); }
Tape::V Tape::tanh(V x) { return apply(Op::Tanh, {x}); }
Tape::V Tape::sigmoid(V x) { return apply(Op::Sigmoid, {x}); }
Tape::V Tape::gelu(V x) { return apply(Op::Gelu, {x}); }
Tape::V Tape::softmax_rows(V x) { return apply(Op::SoftmaxRows, {x}); }
Tape::V Tape::layer_norm(V x, V gamma, V beta, double eps) {
  Attrs at;
  at.eps = eps;
  return apply(Op::LayerNorm, {x, gamma, beta}, std::move(at));
}
Tape::V Tape::lookup(V table, std::vector<int32_t> ids) {
  Attrs at;
  at.ids = std::move(ids);
  return apply(Op::Lookup, {table}, std::move(at));
}
Tape::V Tape::mean_rows(V x) { return apply(Op::MeanRows, {x}); }
Tape::V Tape::sum_all(V x) { return apply(Op::SumAll, {x}); }
Tape::V Tape::mean_all(V x) { return apply(Op::MeanAll, {x}); }
Tape::V Tape::bce(V probs, std::vector<double> labels) {
  Attrs at;
  at.labels = std::move(labels);
  return apply(Op::Bce, {probs}, std::move(at));
}
Tape::V Tape::dropout(V x, double rate) {
  if (rate == 0.0) return x;
  Attrs at;
  at.rate = rate;
  return apply(Op::Dropout, {x}, std::move(at));
}

void Tape::backward(V loss) {
  const auto& ops = kernels::active();
  if (nodes_.empty()) throw std::invalid_argument("backward: empty tape");
  const Node& ln = node(loss);
  if (ln.out.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + ln.out.shape_str());

  // Fresh per-call node gradients; only Parameter::grad persists across calls.
  std::vector<Tensor> grad(nodes_.size());
  auto g_of = [&](V v) -> Tensor& {
    Tensor& g = grad[static_cast<size_t>(v)];
    if (g.size() == 0) g = Tensor(nodes_[static_cast<size_t>(v)].out.rows(),
                                  nodes_[static_cast<size_t>(v)].out.cols());
    return g;
  };
  g_of(loss)[0] = 1.0;

  for (V vi = loss; vi >= 0; --vi) {
    Node& n = nodes_[static_cast<size_t>(vi)];
    Tensor& g = grad[static_cast<size_t>(vi)];
    if (g.size() == 0) continue;  // not reachable from loss

    auto inv = [&](int i) -> const Tensor& { return nodes_[static_cast<size_t>(n.in[static_cast<size_t>(i)])].out; };
    auto ing = [&](int i) -> Tensor& { return g_of(n.in[static_cast<size_t>(i)]); };

    switch (n.op) {
      case Op::Constant:
        break;
      case Op::Leaf:
        if (n.param && n.param->trainable) {
          ops.add(n.param->grad.data(), g.data(), n.param->grad.data(), g.size());
        }
        break;

      case Op::MatMul: {
        const Tensor& a = inv(0);
        const Tensor& b = inv(1);
        const bool ta = n.attrs.trans_a, tb = n.attrs.trans_b;
        Tensor da(a.rows(), a.cols()), db(b.rows(), b.cols());
        if (!ta && !tb) {
          // C = A*B: dA = G*B^T, dB = A^T*G
          ops.matmul_nt(g.data(), b.data(), da.data(), g.rows(), g.cols(), b.rows());
          ops.matmul_tn(a.data(), g.data(), db.data(), a.cols(), a.rows(), g.cols());
        } else if (!ta && tb) {
          // C = A*B^T: dA = G*B, dB = G^T*A
          ops.matmul_nn(g.data(), b.data(), da.data(), g.rows(), g.cols(), b.cols());
          ops.matmul_tn(g.data(), a.data(), db.data(), g.cols(), g.rows(), a.cols());
        } else {
          // C = A^T*B: dA = B*G^T, dB = A*G
          ops.matmul_nt(b.data(), g.data(), da.data(), b.rows(), b.cols(), g.rows());
          ops.matmul_nn(a.data(), g.data(), db.data(), a.rows(), a.cols(), g.cols());
        }
        ops.add(ing(0).data(), da.data(), ing(0).data(), da.size());
        ops.add(ing(1).data(), db.data(), ing(1).data(), db.size());
        break;
      }

      case Op::Add:
        ops.add(ing(0).data(), g.data(), ing(0).data(), g.size());
        ops.add(ing(1).data(), g.data(), ing(1).data(), g.size());
        break;
      case Op::Sub:
        ops.add(ing(0).data(), g.data(), ing(0).data(), g.size());
        ops.axpy(-1.0, g.data(), ing(1).data(), g.size());
        break;
      case Op::Mul: {
        Tensor t(g.rows(), g.cols());
        ops.mul(g.data(), inv(1).data(), t.data(), g.size());
        ops.add(ing(0).data(), t.data(), ing(0).data(), g.size());
        ops.mul(g.data(), inv(0).data(), t.data(), g.size());
        ops.add(ing(1).data(), t.data(), ing(1).data(), g.size());
        break;
      }

      case Op::AddRowVec: {
        ops.add(ing(0).data(), g.data(), ing(0).data(), g.size());
        Tensor& gb = ing(1);
        for (int64_t i = 0; i < g.rows(); ++i) {
          ops.add(gb.data(), g.data() + i * g.cols(), gb.data(), g.cols());
        }
        break;
      }

      case Op::Scale: {
        const double f = n.attrs.divide ? 1.0 / n.attrs.c : n.attrs.c;
        ops.axpy(f, g.data(), ing(0).data(), g.size());
        break;
      }

      case Op::ConcatRows: {
        const int64_t ra = inv(0).rows();
        ops.add(ing(0).data(), g.data(), ing(0).data(), ra * g.cols());
        ops.add(ing(1).data(), g.data() + ra * g.cols(), ing(1).data(),
                (g.rows() - ra) * g.cols());
        break;
      }

      case Op::ConcatCols: {
        const int64_t ca = inv(0).cols();
        Tensor& ga = ing(0);
        Tensor& gb = ing(1);
        for (int64_t i = 0; i < g.rows(); ++i) {
          ops.add(ga.data() + i * ca, g.data() + i * g.cols(), ga.data() + i * ca, ca);
          ops.add(gb.data() + i * gb.cols(), g.data() + i * g.cols() + ca,
                  gb.data() + i * gb.cols(), gb.cols());
        }
        break;
      }

      case Op::SliceRows: {
        Tensor& gx = ing(0);
        ops.add(gx.data() + n.attrs.begin * gx.cols(), g.data(),
                gx.data() + n.attrs.begin * gx.cols(), g.size());
        break;
      }

      case Op::SliceCols: {
        Tensor& gx = ing(0);
        for (int64_t i = 0; i < g.rows(); ++i) {
          ops.add(gx.data() + i * gx.cols() + n.attrs.begin, g.data() + i * g.cols(),
                  gx.data() + i * gx.cols() + n.attrs.begin, g.cols());
        }
        break;
      }

      case Op::Relu:
        ops.relu_bwd_acc(inv(0).data(), g.data(), ing(0).data(), g.size());
        break;
      case Op::Tanh: {
        Tensor& gx = ing(0);
        for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - n.out[i] * n.out[i]);
        break;
      }
      case Op::Sigmoid: {
        Tensor& gx = ing(0);
        for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i] * n.out[i] * (1.0 - n.out[i]);
        break;
      }
      case Op::Gelu:
        kernels::gelu_bwd_acc(inv(0).data(), g.data(), ing(0).data(), g.size());
        break;

      case Op::SoftmaxRows: {
        Tensor& gx = ing(0);
        const int64_t c = g.cols();
        for (int64_t i = 0; i < g.rows(); ++i) {
          const double* y = n.out.data() + i * c;
          const double* gr = g.data() + i * c;
          const double s = ops.dot(gr, y, c);
          double* gxr = gx.data() + i * c;
          for (int64_t j = 0; j < c; ++j) gxr[j] += y[j] * (gr[j] - s);
        }
        break;
      }

      case Op::LayerNorm: {
        const Tensor& x = inv(0);
        const Tensor& gamma = inv(1);
        Tensor& gx = ing(0);
        Tensor& gg = ing(1);
        Tensor& gb = ing(2);
        const int64_t c = x.cols();
        std::vector<double> xhat(static_cast<size_t>(c)), dxh(static_cast<size_t>(c));
        for (int64_t i = 0; i < x.rows(); ++i) {
          const double mu = n.aux.at(i, 0);
          const double rsig = n.aux.at(i, 1);
          const double* xr = x.data() + i * c;
          const double* gr = g.data() + i * c;
          double m1 = 0.0, m2 = 0.0;
          for (int64_t j = 0; j < c; ++j) {
            xhat[static_cast<size_t>(j)] = (xr[j] - mu) * rsig;
            dxh[static_cast<size_t>(j)] = gr[j] * gamma[j];
            gb[j] += gr[j];
            gg[j] += gr[j] * xhat[static_cast<size_t>(j)];
            m1 += dxh[static_cast<size_t>(j)];
            m2 += dxh[static_cast<size_t>(j)] * xhat[static_cast<size_t>(j)];
          }
          m1 /= static_cast<double>(c);
          m2 /= static_cast<double>(c);
          double* gxr = gx.data() + i * c;
          for (int64_t j = 0; j < c; ++j) {
            gxr[j] += rsig * (dxh[static_cast<size_t>(j)] - m1 - xhat[static_cast<size_t>(j)] * m2);
          }
        }
        break;
      }

      case Op::Lookup: {
        Tensor& gt = ing(0);
        const int64_t c = gt.cols();
        for (size_t i = 0; i < n.attrs.ids.size(); ++i) {
          ops.add(gt.data() + n.attrs.ids[i] * c, g.data() + static_cast<int64_t>(i) * c,
                  gt.data() + n.attrs.ids[i] * c, c);
        }
        break;
      }

      case Op::MeanRows: {
        Tensor& gx = ing(0);
        const double inv_n = 1.0 / static_cast<double>(gx.rows());
        for (int64_t i = 0; i < gx.rows(); ++i) {
          ops.axpy(inv_n, g.data(), gx.data() + i * gx.cols(), gx.cols());
        }
        break;
      }

      case Op::SumAll: {
        Tensor& gx = ing(0);
        for (int64_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
        break;
      }
      case Op::MeanAll: {
        Tensor& gx = ing(0);
        const double gv = g[0] / static_cast<double>(gx.size());
        for (int64_t i = 0; i < gx.size(); ++i) gx[i] += gv;
        break;
      }

      case Op::Bce: {
        const Tensor& p = inv(0);
        Tensor& gp = ing(0);
        const double inv_n = 1.0 / static_cast<double>(p.rows());
        for (int64_t i = 0; i < p.rows(); ++i) {
          if (p[i] < kBceClamp || p[i] > 1.0 - kBceClamp) continue;  // clamp region
          const double pc = n.aux[i];
          const double y = n.attrs.labels[static_cast<size_t>(i)];
          gp[i] += g[0] * inv_n * (pc - y) / (pc * (1.0 - pc));
        }
        break;
      }

      case Op::Dropout: {
        Tensor t(g.rows(), g.cols());
        ops.mul(g.data(), n.aux.data(), t.data(), g.size());
        ops.add(ing(0).data(), t.data(), ing(0).data(), g.size());
        break;
      }
    }
  }
}

FdReport finite_difference_check(ParameterSet& params,
                                 const std::function<double(bool)>& run, const FdSpec& spec) {
  for (auto& [id, p] : params) p.reset_grad();
  run(true);

  // Flat list of trainable coordinates to sample from.
  std::vector<std::pair<Parameter*, int64_t>> coords;
  for (auto& [id, p] : params) {
    if (!p.trainable) continue;
    for (int64_t i = 0; i < p.data.size(); ++i) coords.emplace_back(&p, i);
  }
  if (coords.empty()) throw std::invalid_argument("finite_difference_check: no trainable coordinates");

  rng::Stream pick(rng::derive(spec.seed, "fdcheck"));
  FdReport rep;
  for (int s = 0; s < spec.sample_count; ++s) {
    auto [p, idx] = coords[static_cast<size_t>(pick.uniform_int(0, static_cast<int64_t>(coords.size()) - 1))];
    const double theta = p->data[idx];
    const double h = spec.h * std::max(1.0, std::abs(theta));
    p->data[idx] = theta + h;
    const double lp = run(false);
    p->data[idx] = theta - h;
    const double lm = run(false);
    p->data[idx] = theta;
    if (!std::isfinite(lp) || !std::isfinite(lm)) {
      throw NumericFault("finite_difference_check: non-finite loss while probing " + p->id);
    }
    const double numeric = (lp - lm) / (2.0 * h);
    const double analytic = p->grad[idx];
    const double rel =
        std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-12});
    rep.checked++;
    rep.max_rel_err = std::max(rep.max_rel_err, rel);
    if (rel > spec.tol_rel) {
      rep.failed++;
      rep.failures.push_back({p->id, idx, analytic, numeric, rel});
    }
  }
  return rep;
}

}  // namespace ehrfuse::ad
