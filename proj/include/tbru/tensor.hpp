// Copyright 2026 The tbru Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with a recorded-operation tape for reverse-mode
// differentiation. The tape is rebuilt per example: graphs whose structure
// depends on predicted decisions cannot be compiled ahead of time, so every
// unroll records exactly the operations it executed and backward() replays
// them in reverse.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace tbru {

using Matrix = Eigen::MatrixXd;

class Tape;

// Lightweight handle to a value recorded on a Tape. Copyable; valid as long
// as the owning Tape is alive.
struct Tensor {
  Tape* tape = nullptr;
  int node = -1;

  bool valid() const { return tape != nullptr && node >= 0; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  // Value of a 1x1 tensor.
  double scalar() const;
};

enum class OpKind {
  kLeaf,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kSigmoid,
  kTanh,
  kLog,
  kExp,
  kRelu,
  kScale,
  kSum,
  kPick,
  kRow,
  kSliceRows,
  kTranspose,
  kConcat,
  kMaskedLogSoftmax,
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Records a leaf (input/parameter) value.
  Tensor leaf(Matrix v);

  int size() const { return static_cast<int>(nodes_.size()); }
  const Matrix& value(int node) const { return nodes_.at(node).value; }
  OpKind kind(int node) const { return nodes_.at(node).kind; }
  const std::vector<int>& inputs(int node) const { return nodes_.at(node).inputs; }

  // Reverse topological sweep from a scalar loss. Populates gradients for
  // every node the loss reaches; everything else reads back as zero.
  void backward(const Tensor& loss);

  bool has_grad(int node) const;
  // Gradient of the last backward()'s loss w.r.t. node; zeros when the node
  // was not reached.
  Matrix grad(int node) const;

  // Internal: used by the op implementations.
  Tensor record(OpKind kind, std::vector<int> inputs, Matrix value, BackwardFn back,
                bool check_finite = true);
  void accumulate_grad(int node, const Matrix& g);
  const Matrix& grad_ref(int node) const { return grads_.at(node); }

 private:
  struct Node {
    OpKind kind;
    std::vector<int> inputs;
    Matrix value;
    BackwardFn back;
  };
  std::vector<Node> nodes_;
  std::vector<Matrix> grads_;  // parallel to nodes_ after backward(); 0x0 = unreached
};

// ---- Recorded operations --------------------------------------------------
//
// All operations validate shapes up front and reject non-finite results.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor log(const Tensor& a);  // rejects non-positive entries
Tensor exp(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor sum(const Tensor& a);  // 1x1
// Element i of a column vector, as 1x1.
Tensor pick(const Tensor& v, Eigen::Index i);
// Row r of a matrix, returned as a column vector (embedding lookup).
Tensor row(const Tensor& m, Eigen::Index r);
Tensor slice_rows(const Tensor& a, Eigen::Index start, Eigen::Index len);
Tensor transpose(const Tensor& a);
// axis 0 stacks rows, axis 1 stacks columns. Off-axis dims must agree.
// The order of `parts` is the caller's deterministic recurrence order;
// backward splits the incoming gradient by the recorded part shapes.
Tensor concat(const std::vector<Tensor>& parts, int axis = 0);
// Log-probabilities over the allowed indices of a column vector of logits;
// disallowed entries come back as -infinity and receive zero gradient.
Tensor masked_log_softmax(const Tensor& logits, const std::vector<bool>& allowed);

// Greedy argmax over the allowed entries of a plain logits vector, ties
// broken toward the lowest index.
int masked_argmax(const Matrix& logits, const std::vector<bool>& allowed);

}  // namespace tbru
