// Copyright 2026 The tbru Authors
// SPDX-License-Identifier: Apache-2.0

#include "tbru/cells.hpp"

#include <stdexcept>

namespace tbru {

LstmStepResult lstm_step(const Tensor& W_x, const Tensor& W_h, const Tensor& b, const Tensor& m,
                         const Tensor& recurrent, const Tensor& c_prev, int hidden) {
  if (m.rows() == 0 && recurrent.rows() == 0) {
    throw std::invalid_argument("lstm_step: cell must receive at least one input source");
  }
  if (W_x.cols() != m.rows() || W_h.cols() != recurrent.rows() || W_x.rows() != 4 * hidden ||
      W_h.rows() != 4 * hidden || b.rows() != 4 * hidden || c_prev.rows() != hidden) {
    throw std::invalid_argument("lstm_step: dimension mismatch");
  }
  Tensor gates = add(add(matmul(W_x, m), matmul(W_h, recurrent)), b);
  Tensor i = sigmoid(slice_rows(gates, 0, hidden));
  Tensor f = sigmoid(slice_rows(gates, hidden, hidden));
  Tensor o = sigmoid(slice_rows(gates, 2 * hidden, hidden));
  Tensor g = tanh(slice_rows(gates, 3 * hidden, hidden));
  Tensor c = add(mul(f, c_prev), mul(i, g));
  Tensor h = mul(o, tanh(c));
  return {h, c};
}

Tensor apply_activation(const Tensor& x, Activation act) {
  switch (act) {
    case Activation::kRelu:
      return relu(x);
    case Activation::kTanh:
      return tanh(x);
    case Activation::kLinear:
      return x;
  }
  throw std::logic_error("apply_activation: bad kind");
}

Tensor mlp_forward(const std::vector<Tensor>& weights, const std::vector<Tensor>& biases,
                   Activation act, const Tensor& m) {
  if (weights.empty() || weights.size() != biases.size()) {
    throw std::invalid_argument("mlp_forward: inconsistent layer list");
  }
  Tensor h = m;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].cols() != h.rows()) {
      throw std::invalid_argument("mlp_forward: layer " + std::to_string(l) +
                                  " input dimension mismatch");
    }
    h = add(matmul(weights[l], h), biases[l]);
    if (l + 1 < weights.size()) h = apply_activation(h, act);
  }
  return h;
}

Tensor decision_logits(const Tensor& W_out, const Tensor& b_out, const Tensor& h) {
  if (W_out.cols() != h.rows()) {
    throw std::invalid_argument("decision_logits: hidden dimension mismatch");
  }
  return add(matmul(W_out, h), b_out);
}

Tensor aggregate_concat(const std::vector<Tensor>& inputs) {
  if (inputs.empty()) throw std::invalid_argument("aggregate_concat: empty input list");
  return concat(inputs, 0);
}

Tensor aggregate_mean(const std::vector<Tensor>& inputs) {
  if (inputs.empty()) throw std::invalid_argument("aggregate_mean: empty input list");
  Tensor acc = inputs.front();
  for (std::size_t i = 1; i < inputs.size(); ++i) acc = add(acc, inputs[i]);
  return scale(acc, 1.0 / static_cast<double>(inputs.size()));
}

Tensor aggregate_attention(const Tensor& W_q, const Tensor& W_k, const Tensor& query,
                           const std::vector<Tensor>& keys) {
  if (keys.empty()) throw std::invalid_argument("aggregate_attention: empty key list");
  Tensor q = transpose(matmul(W_q, query));  // 1 x A
  std::vector<Tensor> scores;
  scores.reserve(keys.size());
  for (const Tensor& k : keys) {
    scores.push_back(matmul(q, matmul(W_k, k)));  // 1 x 1
  }
  Tensor score_vec = concat(scores, 0);
  Tensor weights = exp(masked_log_softmax(score_vec, std::vector<bool>(keys.size(), true)));
  Tensor key_mat = concat(keys, 1);  // H x |keys|
  return matmul(key_mat, weights);
}

}  // namespace tbru
