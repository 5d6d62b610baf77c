// Copyright 2026 The tbru Authors
// SPDX-License-Identifier: Apache-2.0

#include "tbru/tensor.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace tbru {

namespace {

void check_same_tape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.valid() || !b.valid() || a.tape != b.tape) {
    throw std::invalid_argument(std::string(op) + ": tensors must live on the same tape");
  }
}

void check_finite(const Matrix& m, const char* op) {
  if (!m.allFinite()) {
    throw std::runtime_error(std::string(op) + ": non-finite value produced");
  }
}

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

const Matrix& Tensor::value() const {
  if (!valid()) throw std::logic_error("Tensor: dereferencing an invalid handle");
  return tape->value(node);
}

double Tensor::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw std::invalid_argument("Tensor::scalar: tensor is not 1x1");
  }
  return v(0, 0);
}

Tensor Tape::leaf(Matrix v) {
  return record(OpKind::kLeaf, {}, std::move(v), nullptr);
}

Tensor Tape::record(OpKind kind, std::vector<int> inputs, Matrix value, BackwardFn back,
                    bool finite) {
  const int id = static_cast<int>(nodes_.size());
  for (int in : inputs) {
    // Acyclicity: inputs always precede the node they feed.
    if (in < 0 || in >= id) throw std::logic_error("Tape: input id out of order");
  }
  if (finite) check_finite(value, "tape op");
  nodes_.push_back(Node{kind, std::move(inputs), std::move(value), std::move(back)});
  return Tensor{this, id};
}

void Tape::backward(const Tensor& loss) {
  if (!loss.valid() || loss.tape != this) {
    throw std::invalid_argument("backward: loss not on this tape");
  }
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw std::invalid_argument("backward: loss must be scalar");
  }
  grads_.assign(nodes_.size(), Matrix());
  grads_[loss.node] = Matrix::Ones(1, 1);
  for (int i = loss.node; i >= 0; --i) {
    if (grads_[i].size() == 0) continue;
    if (nodes_[i].back) nodes_[i].back(*this, i);
  }
}

bool Tape::has_grad(int node) const {
  return node >= 0 && node < static_cast<int>(grads_.size()) && grads_[node].size() != 0;
}

Matrix Tape::grad(int node) const {
  if (has_grad(node)) return grads_[node];
  const Matrix& v = value(node);
  return Matrix::Zero(v.rows(), v.cols());
}

void Tape::accumulate_grad(int node, const Matrix& g) {
  if (grads_.size() != nodes_.size()) grads_.assign(nodes_.size(), Matrix());
  Matrix& slot = grads_[node];
  if (slot.size() == 0) {
    slot = g;
  } else {
    slot += g;
  }
}

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_same_tape(a, b, "matmul");
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions disagree (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " * " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
  Matrix v = a.value() * b.value();
  const int ia = a.node, ib = b.node;
  return a.tape->record(OpKind::kMatmul, {ia, ib}, std::move(v),
                        [ia, ib](Tape& t, int self) {
                          const Matrix& g = t.grad_ref(self);
                          t.accumulate_grad(ia, g * t.value(ib).transpose());
                          t.accumulate_grad(ib, t.value(ia).transpose() * g);
                        });
}

namespace {

Tensor binary_pointwise(const Tensor& a, const Tensor& b, OpKind kind, const char* name) {
  check_same_tape(a, b, name);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(name) + ": shape mismatch");
  }
  const int ia = a.node, ib = b.node;
  Matrix v;
  Tape::BackwardFn back;
  switch (kind) {
    case OpKind::kAdd:
      v = a.value() + b.value();
      back = [ia, ib](Tape& t, int self) {
        t.accumulate_grad(ia, t.grad_ref(self));
        t.accumulate_grad(ib, t.grad_ref(self));
      };
      break;
    case OpKind::kSub:
      v = a.value() - b.value();
      back = [ia, ib](Tape& t, int self) {
        t.accumulate_grad(ia, t.grad_ref(self));
        t.accumulate_grad(ib, -t.grad_ref(self));
      };
      break;
    case OpKind::kMul:
      v = a.value().cwiseProduct(b.value());
      back = [ia, ib](Tape& t, int self) {
        const Matrix& g = t.grad_ref(self);
        t.accumulate_grad(ia, g.cwiseProduct(t.value(ib)));
        t.accumulate_grad(ib, g.cwiseProduct(t.value(ia)));
      };
      break;
    default:
      throw std::logic_error("binary_pointwise: bad kind");
  }
  return a.tape->record(kind, {ia, ib}, std::move(v), std::move(back));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_pointwise(a, b, OpKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_pointwise(a, b, OpKind::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_pointwise(a, b, OpKind::kMul, "mul"); }

Tensor sigmoid(const Tensor& a) {
  Matrix v = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  const int ia = a.node;
  return a.tape->record(OpKind::kSigmoid, {ia}, std::move(v), [ia](Tape& t, int self) {
    const Matrix& s = t.value(self);
    t.accumulate_grad(ia, t.grad_ref(self).cwiseProduct(
                              s.cwiseProduct(Matrix::Ones(s.rows(), s.cols()) - s)));
  });
}

Tensor tanh(const Tensor& a) {
  Matrix v = a.value().array().tanh().matrix();
  const int ia = a.node;
  return a.tape->record(OpKind::kTanh, {ia}, std::move(v), [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    Matrix one_minus = Matrix::Ones(y.rows(), y.cols()) - y.cwiseProduct(y);
    t.accumulate_grad(ia, t.grad_ref(self).cwiseProduct(one_minus));
  });
}

Tensor log(const Tensor& a) {
  if ((a.value().array() <= 0.0).any()) {
    throw std::domain_error("log: non-positive input");
  }
  Matrix v = a.value().array().log().matrix();
  const int ia = a.node;
  return a.tape->record(OpKind::kLog, {ia}, std::move(v), [ia](Tape& t, int self) {
    t.accumulate_grad(ia, t.grad_ref(self).cwiseQuotient(t.value(ia)));
  });
}

Tensor exp(const Tensor& a) {
  Matrix v = a.value().array().exp().matrix();
  const int ia = a.node;
  return a.tape->record(OpKind::kExp, {ia}, std::move(v), [ia](Tape& t, int self) {
    t.accumulate_grad(ia, t.grad_ref(self).cwiseProduct(t.value(self)));
  });
}

Tensor relu(const Tensor& a) {
  Matrix v = a.value().cwiseMax(0.0);
  const int ia = a.node;
  return a.tape->record(OpKind::kRelu, {ia}, std::move(v), [ia](Tape& t, int self) {
    Matrix mask = (t.value(ia).array() > 0.0).cast<double>().matrix();
    t.accumulate_grad(ia, t.grad_ref(self).cwiseProduct(mask));
  });
}

Tensor scale(const Tensor& a, double c) {
  Matrix v = a.value() * c;
  const int ia = a.node;
  return a.tape->record(OpKind::kScale, {ia}, std::move(v), [ia, c](Tape& t, int self) {
    t.accumulate_grad(ia, t.grad_ref(self) * c);
  });
}

Tensor sum(const Tensor& a) {
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  const int ia = a.node;
  return a.tape->record(OpKind::kSum, {ia}, std::move(v), [ia](Tape& t, int self) {
    const Matrix& in = t.value(ia);
    t.accumulate_grad(ia, Matrix::Constant(in.rows(), in.cols(), t.grad_ref(self)(0, 0)));
  });
}

Tensor pick(const Tensor& v, Eigen::Index i) {
  if (v.cols() != 1) throw std::invalid_argument("pick: expects a column vector");
  if (i < 0 || i >= v.rows()) throw std::out_of_range("pick: index out of range");
  Matrix out(1, 1);
  out(0, 0) = v.value()(i, 0);
  const int iv = v.node;
  return v.tape->record(OpKind::kPick, {iv}, std::move(out), [iv, i](Tape& t, int self) {
    const Matrix& in = t.value(iv);
    Matrix g = Matrix::Zero(in.rows(), 1);
    g(i, 0) = t.grad_ref(self)(0, 0);
    t.accumulate_grad(iv, g);
  });
}

Tensor row(const Tensor& m, Eigen::Index r) {
  if (r < 0 || r >= m.rows()) throw std::out_of_range("row: index out of range");
  Matrix out = m.value().row(r).transpose();
  const int im = m.node;
  return m.tape->record(OpKind::kRow, {im}, std::move(out), [im, r](Tape& t, int self) {
    const Matrix& in = t.value(im);
    Matrix g = Matrix::Zero(in.rows(), in.cols());
    g.row(r) = t.grad_ref(self).transpose();
    t.accumulate_grad(im, g);
  });
}

Tensor slice_rows(const Tensor& a, Eigen::Index start, Eigen::Index len) {
  if (start < 0 || len < 0 || start + len > a.rows()) {
    throw std::out_of_range("slice_rows: range out of bounds");
  }
  Matrix out = a.value().middleRows(start, len);
  const int ia = a.node;
  return a.tape->record(OpKind::kSliceRows, {ia}, std::move(out),
                        [ia, start, len](Tape& t, int self) {
                          const Matrix& in = t.value(ia);
                          Matrix g = Matrix::Zero(in.rows(), in.cols());
                          g.middleRows(start, len) = t.grad_ref(self);
                          t.accumulate_grad(ia, g);
                        });
}

Tensor transpose(const Tensor& a) {
  Matrix out = a.value().transpose();
  const int ia = a.node;
  return a.tape->record(OpKind::kTranspose, {ia}, std::move(out), [ia](Tape& t, int self) {
    t.accumulate_grad(ia, t.grad_ref(self).transpose());
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: empty part list");
  if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
  if (parts.size() == 1) return parts.front();
  Tape* tape = parts.front().tape;
  std::vector<int> inputs;
  Eigen::Index total = 0;
  const Eigen::Index off_axis = axis == 0 ? parts.front().cols() : parts.front().rows();
  for (const Tensor& p : parts) {
    check_same_tape(parts.front(), p, "concat");
    const Eigen::Index off = axis == 0 ? p.cols() : p.rows();
    if (off != off_axis) throw std::invalid_argument("concat: off-axis dimension mismatch");
    total += axis == 0 ? p.rows() : p.cols();
    inputs.push_back(p.node);
  }
  Matrix out = axis == 0 ? Matrix(total, off_axis) : Matrix(off_axis, total);
  Eigen::Index at = 0;
  for (const Tensor& p : parts) {
    if (axis == 0) {
      out.middleRows(at, p.rows()) = p.value();
      at += p.rows();
    } else {
      out.middleCols(at, p.cols()) = p.value();
      at += p.cols();
    }
  }
  std::vector<int> ins = inputs;
  return tape->record(OpKind::kConcat, std::move(inputs), std::move(out),
                      [ins, axis](Tape& t, int self) {
                        const Matrix& g = t.grad_ref(self);
                        Eigen::Index at = 0;
                        for (int in : ins) {
                          const Matrix& v = t.value(in);
                          if (axis == 0) {
                            t.accumulate_grad(in, g.middleRows(at, v.rows()));
                            at += v.rows();
                          } else {
                            t.accumulate_grad(in, g.middleCols(at, v.cols()));
                            at += v.cols();
                          }
                        }
                      });
}

Tensor masked_log_softmax(const Tensor& logits, const std::vector<bool>& allowed) {
  if (logits.cols() != 1) {
    throw std::invalid_argument("masked_log_softmax: expects a column vector");
  }
  const Eigen::Index k = logits.rows();
  if (static_cast<Eigen::Index>(allowed.size()) != k) {
    throw std::invalid_argument("masked_log_softmax: mask size mismatch");
  }
  double max_allowed = kNegInf;
  for (Eigen::Index i = 0; i < k; ++i) {
    if (allowed[i]) max_allowed = std::max(max_allowed, logits.value()(i, 0));
  }
  if (max_allowed == kNegInf) {
    throw std::invalid_argument("masked_log_softmax: empty allowed set");
  }
  double z = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    if (allowed[i]) z += std::exp(logits.value()(i, 0) - max_allowed);
  }
  const double lse = max_allowed + std::log(z);
  Matrix out(k, 1);
  for (Eigen::Index i = 0; i < k; ++i) {
    out(i, 0) = allowed[i] ? logits.value()(i, 0) - lse : kNegInf;
    if (allowed[i] && !std::isfinite(out(i, 0))) {
      throw std::runtime_error("masked_log_softmax: non-finite log-probability");
    }
  }
  const int il = logits.node;
  const std::vector<bool> mask = allowed;
  return logits.tape->record(
      OpKind::kMaskedLogSoftmax, {il}, std::move(out),
      [il, mask](Tape& t, int self) {
        const Matrix& g = t.grad_ref(self);
        const Matrix& out_v = t.value(self);
        double gsum = 0.0;
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          if (mask[i]) gsum += g(i, 0);
        }
        Matrix gin = Matrix::Zero(g.rows(), 1);
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          if (mask[i]) gin(i, 0) = g(i, 0) - std::exp(out_v(i, 0)) * gsum;
        }
        t.accumulate_grad(il, gin);
      },
      /*check_finite=*/false);
}

int masked_argmax(const Matrix& logits, const std::vector<bool>& allowed) {
  int best = -1;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (!allowed[i]) continue;
    if (best < 0 || logits(i, 0) > logits(best, 0)) best = static_cast<int>(i);
  }
  if (best < 0) throw std::invalid_argument("masked_argmax: empty allowed set");
  return best;
}

}  // namespace tbru
