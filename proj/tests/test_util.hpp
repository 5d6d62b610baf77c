// Copyright 2026 The tbru Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared test helpers: an independent random projective tree sampler, oracle
// replay, and a straight-line reference LSTM.

#pragma once

#include <random>
#include <vector>

#include "tbru/data.hpp"
#include "tbru/tensor.hpp"
#include "tbru/transition.hpp"

namespace tbru::testutil {

namespace detail {

// Attaches contiguous child spans of [lo, hi] to `head`, recursively.
inline void attach_spans(std::mt19937_64& rng, int lo, int hi, int head,
                         std::vector<int>& heads) {
  int at = head - 1;
  while (at >= lo) {
    const int start = lo + static_cast<int>(rng() % static_cast<std::uint64_t>(at - lo + 1));
    const int h = start + static_cast<int>(rng() % static_cast<std::uint64_t>(at - start + 1));
    heads[h - 1] = head;
    attach_spans(rng, start, at, h, heads);
    at = start - 1;
  }
  at = head + 1;
  while (at <= hi) {
    const int end = at + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - at + 1));
    const int h = at + static_cast<int>(rng() % static_cast<std::uint64_t>(end - at + 1));
    heads[h - 1] = head;
    attach_spans(rng, at, end, h, heads);
    at = end + 1;
  }
}

}  // namespace detail

// Uniform-ish random projective tree over n tokens (1-based, root = self).
// Every subtree occupies a contiguous span, so the result is projective by
// construction.
inline std::vector<int> random_projective_heads(std::mt19937_64& rng, int n) {
  std::vector<int> heads(n, 0);
  const int root = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(n));
  heads[root - 1] = root;
  detail::attach_spans(rng, 1, n, root, heads);
  return heads;
}

inline Sentence sentence_from_heads(const std::vector<int>& heads) {
  Sentence s;
  for (int i = 1; i <= static_cast<int>(heads.size()); ++i) {
    s.tokens.push_back("w" + std::to_string(i));
    s.heads.push_back(heads[i - 1]);
    s.labels.push_back(heads[i - 1] == i ? "root" : (i % 2 == 0 ? "a" : "b"));
  }
  return s;
}

// Drives the static oracle to the terminal state; returns it and the number
// of decisions taken.
inline ParserState replay_oracle(const TransitionSystemSpec& spec, const Sentence& gold,
                                 int* steps_out = nullptr) {
  TransitionState st = initial_state(spec, gold.size());
  int steps = 0;
  while (!is_terminal(spec, st)) {
    const int d = gold_decision(spec, st, gold);
    st = apply(spec, st, d, ++steps);
  }
  if (steps_out) *steps_out = steps;
  return std::get<ParserState>(st);
}

// True when the arc set reproduces the gold heads (and labels, when the
// system is labeled) exactly.
inline bool arcs_match_gold(const TransitionSystemSpec& spec, const ParserState& ps,
                            const Sentence& gold) {
  const int n = gold.size();
  if (static_cast<int>(ps.arcs.size()) != n - 1) return false;
  std::vector<int> heads(n, 0);
  std::vector<int> labels(n, -1);
  for (const Arc& a : ps.arcs) {
    if (heads[a.dep - 1] != 0) return false;  // duplicate dependent
    heads[a.dep - 1] = a.head;
    labels[a.dep - 1] = a.label;
  }
  const int root = ps.stack.front();
  heads[root - 1] = root;
  for (int i = 1; i <= n; ++i) {
    if (heads[i - 1] != gold.heads[i - 1]) return false;
    if (i != root && spec.labels.size() > 1 &&
        spec.labels[labels[i - 1]] != gold.labels[i - 1]) {
      return false;
    }
  }
  return true;
}

// Plain straight-line LSTM over a fixed embedding sequence, matching the
// cell's [input, forget, output, candidate] gate stacking.
inline std::vector<Matrix> reference_lstm(const Matrix& W_x, const Matrix& W_h, const Matrix& b,
                                          const Matrix& h0, const std::vector<Matrix>& inputs) {
  const Eigen::Index H = h0.rows();
  Matrix h = h0;
  Matrix c = Matrix::Zero(H, 1);
  std::vector<Matrix> out;
  for (const Matrix& x : inputs) {
    Matrix gates = W_x * x + W_h * h + b;
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    Matrix i = gates.middleRows(0, H).unaryExpr(sig);
    Matrix f = gates.middleRows(H, H).unaryExpr(sig);
    Matrix o = gates.middleRows(2 * H, H).unaryExpr(sig);
    Matrix g = gates.middleRows(3 * H, H).array().tanh().matrix();
    c = f.cwiseProduct(c) + i.cwiseProduct(g);
    h = o.cwiseProduct(c.array().tanh().matrix());
    out.push_back(h);
  }
  return out;
}

}  // namespace tbru::testutil
