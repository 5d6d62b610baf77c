// Copyright 2026 The tbru Authors
// SPDX-License-Identifier: Apache-2.0
//
// Network cells: one hidden vector out of a fixed input and a set of
// recurrent inputs. LSTM and feed-forward MLP variants, plus the
// aggregation policies that turn a variable-size set of recurrent hidden
// states into a single cell input.

#pragma once

#include <vector>

#include "tbru/tensor.hpp"

namespace tbru {

enum class CellKind { kLstm, kMlp };
enum class AggPolicy { kConcatFixed, kMean, kAttention };
enum class Activation { kRelu, kTanh, kLinear };

struct LstmStepResult {
  Tensor h;
  Tensor c;
};

// Standard LSTM gate equations over the concatenation [m ; recurrent].
// Gate stacking order in W_x / W_h / b is [input, forget, output, candidate].
// Either of m / recurrent may be zero-length (0x1), but not both.
// W_x: 4H x K, W_h: 4H x R, b: 4H x 1, c_prev: H x 1.
LstmStepResult lstm_step(const Tensor& W_x, const Tensor& W_h, const Tensor& b, const Tensor& m,
                         const Tensor& recurrent, const Tensor& c_prev, int hidden);

// Affine + activation layers; the final layer is linear.
Tensor mlp_forward(const std::vector<Tensor>& weights, const std::vector<Tensor>& biases,
                   Activation act, const Tensor& m);

// One score per decision-vocabulary entry: W_out * h + b_out.
Tensor decision_logits(const Tensor& W_out, const Tensor& b_out, const Tensor& h);

// Aggregation of an ordered list of recurrent hidden states.
Tensor aggregate_concat(const std::vector<Tensor>& inputs);
Tensor aggregate_mean(const std::vector<Tensor>& inputs);
// Dot-product attention: softmax((W_q q) . (W_k k_i))-weighted sum of the
// raw keys.
Tensor aggregate_attention(const Tensor& W_q, const Tensor& W_k, const Tensor& query,
                           const std::vector<Tensor>& keys);

Tensor apply_activation(const Tensor& x, Activation act);

}  // namespace tbru
