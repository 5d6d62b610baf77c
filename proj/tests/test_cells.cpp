// Copyright 2026 The tbru Authors
// SPDX-License-Identifier: Apache-2.0

#include "tbru/cells.hpp"

#include <random>

#include "doctest.h"
#include "tbru/gradcheck.hpp"
#include "tbru/params.hpp"

using namespace tbru;

namespace {

Matrix colv(std::initializer_list<double> xs) {
  Matrix m(static_cast<Eigen::Index>(xs.size()), 1);
  Eigen::Index i = 0;
  for (double x : xs) m(i++, 0) = x;
  return m;
}

}  // namespace

TEST_CASE("lstm_step zero cases") {
  const int H = 3;
  Tape tape;
  Tensor W_x = tape.leaf(Matrix::Zero(4 * H, 2));
  Tensor W_h = tape.leaf(Matrix::Zero(4 * H, H));
  Tensor b = tape.leaf(Matrix::Zero(4 * H, 1));
  Tensor m = tape.leaf(Matrix::Zero(2, 1));
  Tensor r = tape.leaf(Matrix::Zero(H, 1));

  SUBCASE("all-zero params and states give h = 0") {
    auto out = lstm_step(W_x, W_h, b, m, r, tape.leaf(Matrix::Zero(H, 1)), H);
    CHECK(out.h.value().cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("zero weights halve the previous cell state") {
    Matrix c0 = colv({1.0, -2.0, 0.5});
    auto out = lstm_step(W_x, W_h, b, m, r, tape.leaf(c0), H);
    for (int i = 0; i < H; ++i) {
      CHECK(out.c.value()(i, 0) == doctest::Approx(0.5 * c0(i, 0)));
    }
  }
  SUBCASE("both inputs empty is rejected") {
    Tensor empty_m = tape.leaf(Matrix(0, 1));
    Tensor empty_r = tape.leaf(Matrix(0, 1));
    Tensor wx0 = tape.leaf(Matrix(4 * H, 0));
    Tensor wh0 = tape.leaf(Matrix(4 * H, 0));
    CHECK_THROWS_AS(lstm_step(wx0, wh0, b, empty_m, empty_r, tape.leaf(Matrix::Zero(H, 1)), H),
                    std::invalid_argument);
  }
  SUBCASE("dimension mismatch is rejected") {
    Tensor bad = tape.leaf(Matrix::Zero(5, 1));
    CHECK_THROWS_AS(lstm_step(W_x, W_h, b, bad, r, tape.leaf(Matrix::Zero(H, 1)), H),
                    std::invalid_argument);
  }
}

TEST_CASE("lstm gradient through three chained steps") {
  const int H = 3, K = 2;
  ParamStore store;
  Parameter* wx = store.create("W_x", 4 * H, K);
  Parameter* wh = store.create("W_h", 4 * H, H);
  Parameter* b = store.create("b", 4 * H, 1);
  std::mt19937_64 rng(13);
  xavier_init(wx->value, rng);
  xavier_init(wh->value, rng);
  xavier_init(b->value, rng);
  std::vector<Matrix> xs = {colv({0.5, -1.0}), colv({0.2, 0.3}), colv({-0.7, 1.1})};

  auto f = [&](bool accumulate) {
    Tape tape;
    Tensor twx = tape.leaf(wx->value), twh = tape.leaf(wh->value), tb = tape.leaf(b->value);
    Tensor h = tape.leaf(Matrix::Zero(H, 1));
    Tensor c = tape.leaf(Matrix::Zero(H, 1));
    for (const Matrix& x : xs) {
      auto out = lstm_step(twx, twh, tb, tape.leaf(x), h, c, H);
      h = out.h;
      c = out.c;
    }
    Tensor loss = sum(mul(h, h));
    if (accumulate) {
      tape.backward(loss);
      wx->grad += tape.grad(twx.node);
      wh->grad += tape.grad(twh.node);
      b->grad += tape.grad(tb.node);
    }
    return loss.scalar();
  };
  CHECK(finite_diff_check(store, f).passed(1e-4));
}

TEST_CASE("mlp_forward") {
  Tape tape;
  SUBCASE("identity weights, zero bias, linear activation pass m through") {
    Tensor w = tape.leaf(Matrix::Identity(3, 3));
    Tensor b = tape.leaf(Matrix::Zero(3, 1));
    Tensor m = tape.leaf(colv({1, -2, 3}));
    Tensor h = mlp_forward({w}, {b}, Activation::kLinear, m);
    CHECK((h.value() - m.value()).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("relu zeroes negative pre-activations") {
    // Two layers so the activation applies to the first.
    Tensor w1 = tape.leaf(-Matrix::Identity(2, 2));
    Tensor b1 = tape.leaf(Matrix::Zero(2, 1));
    Tensor w2 = tape.leaf(Matrix::Identity(2, 2));
    Tensor b2 = tape.leaf(Matrix::Zero(2, 1));
    Tensor m = tape.leaf(colv({1.0, 2.0}));
    Tensor h = mlp_forward({w1, w2}, {b1, b2}, Activation::kRelu, m);
    CHECK(h.value().cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("input dimension mismatch throws") {
    Tensor w = tape.leaf(Matrix::Zero(2, 3));
    Tensor b = tape.leaf(Matrix::Zero(2, 1));
    CHECK_THROWS_AS(mlp_forward({w}, {b}, Activation::kRelu, tape.leaf(colv({1, 2}))),
                    std::invalid_argument);
  }
}

TEST_CASE("two-layer mlp gradient check") {
  ParamStore store;
  Parameter* w1 = store.create("W1", 4, 3);
  Parameter* b1 = store.create("b1", 4, 1);
  Parameter* w2 = store.create("W2", 2, 4);
  Parameter* b2 = store.create("b2", 2, 1);
  std::mt19937_64 rng(7);
  for (Parameter* p : store.all()) xavier_init(p->value, rng);
  const Matrix x = colv({0.9, -0.4, 0.2});
  auto f = [&](bool accumulate) {
    Tape tape;
    std::vector<Tensor> ws = {tape.leaf(w1->value), tape.leaf(w2->value)};
    std::vector<Tensor> bs = {tape.leaf(b1->value), tape.leaf(b2->value)};
    Tensor h = mlp_forward(ws, bs, Activation::kTanh, tape.leaf(x));
    Tensor loss = sum(mul(h, h));
    if (accumulate) {
      tape.backward(loss);
      w1->grad += tape.grad(ws[0].node);
      w2->grad += tape.grad(ws[1].node);
      b1->grad += tape.grad(bs[0].node);
      b2->grad += tape.grad(bs[1].node);
    }
    return loss.scalar();
  };
  CHECK(finite_diff_check(store, f).passed(1e-4));
}

TEST_CASE("decision_logits") {
  Tape tape;
  SUBCASE("one-hot rows select coordinates of h") {
    Matrix w = Matrix::Zero(2, 3);
    w(0, 2) = 1.0;
    w(1, 0) = 1.0;
    Tensor logits = decision_logits(tape.leaf(w), tape.leaf(Matrix::Zero(2, 1)),
                                    tape.leaf(colv({5, 6, 7})));
    CHECK(logits.value()(0, 0) == 7.0);
    CHECK(logits.value()(1, 0) == 5.0);
  }
  SUBCASE("zero hidden state gives the biases") {
    Tensor logits = decision_logits(tape.leaf(Matrix::Zero(2, 3)), tape.leaf(colv({0.3, -0.7})),
                                    tape.leaf(Matrix::Zero(3, 1)));
    CHECK(logits.value()(0, 0) == 0.3);
    CHECK(logits.value()(1, 0) == -0.7);
  }
  SUBCASE("argmax ties break toward the lowest index") {
    CHECK(masked_argmax(colv({1.0, 1.0, 1.0}), {true, true, true}) == 0);
    CHECK(masked_argmax(colv({1.0, 1.0, 2.0}), {true, true, false}) == 0);
  }
}

TEST_CASE("aggregation policies") {
  Tape tape;
  Tensor a = tape.leaf(colv({1, 2}));
  Tensor b = tape.leaf(colv({3, 4}));

  SUBCASE("concat keeps order") {
    Tensor out = aggregate_concat({a, b});
    CHECK(out.rows() == 4);
    CHECK(out.value()(2, 0) == 3.0);
  }
  SUBCASE("mean averages") {
    Tensor out = aggregate_mean({a, b});
    CHECK(out.value()(0, 0) == doctest::Approx(2.0));
    CHECK(out.value()(1, 0) == doctest::Approx(3.0));
  }
  SUBCASE("empty input lists are rejected") {
    CHECK_THROWS_AS(aggregate_mean({}), std::invalid_argument);
    CHECK_THROWS_AS(aggregate_concat({}), std::invalid_argument);
  }
}

TEST_CASE("attention aggregation") {
  Tape tape;
  Tensor wq = tape.leaf(Matrix::Identity(2, 2));
  Tensor wk = tape.leaf(Matrix::Identity(2, 2));
  Tensor q = tape.leaf(colv({0.3, -0.5}));

  SUBCASE("identical keys reduce to the plain mean") {
    Tensor k = tape.leaf(colv({2.0, -1.0}));
    Tensor out = aggregate_attention(wq, wk, q, {k, k, k});
    CHECK(out.value()(0, 0) == doctest::Approx(2.0));
    CHECK(out.value()(1, 0) == doctest::Approx(-1.0));
  }
  SUBCASE("a single input passes through unchanged") {
    Tensor k = tape.leaf(colv({0.7, 0.9}));
    Tensor out = aggregate_attention(wq, wk, q, {k});
    CHECK(out.value()(0, 0) == doctest::Approx(0.7));
    CHECK(out.value()(1, 0) == doctest::Approx(0.9));
  }
  SUBCASE("output is a convex combination of the inputs") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Tensor> keys;
      Matrix lo = Matrix::Constant(2, 1, 1e9), hi = Matrix::Constant(2, 1, -1e9);
      for (int i = 0; i < 4; ++i) {
        Matrix k(2, 1);
        k << dist(rng), dist(rng);
        lo = lo.cwiseMin(k);
        hi = hi.cwiseMax(k);
        keys.push_back(tape.leaf(k));
      }
      Matrix qv(2, 1);
      qv << dist(rng), dist(rng);
      Tensor out = aggregate_attention(wq, wk, tape.leaf(qv), keys);
      for (int i = 0; i < 2; ++i) {
        CHECK(out.value()(i, 0) >= lo(i, 0) - 1e-12);
        CHECK(out.value()(i, 0) <= hi(i, 0) + 1e-12);
      }
    }
  }
}

TEST_CASE("attention gradient check") {
  ParamStore store;
  Parameter* wq = store.create("wq", 2, 2);
  Parameter* wk = store.create("wk", 2, 2);
  Parameter* keys = store.create("keys", 2, 3);  // three keys as columns
  Parameter* q = store.create("q", 2, 1);
  std::mt19937_64 rng(41);
  for (Parameter* p : store.all()) xavier_init(p->value, rng);
  auto f = [&](bool accumulate) {
    Tape tape;
    Tensor twq = tape.leaf(wq->value), twk = tape.leaf(wk->value);
    Tensor tk = tape.leaf(keys->value), tq = tape.leaf(q->value);
    std::vector<Tensor> ks;
    for (int i = 0; i < 3; ++i) ks.push_back(row(transpose(tk), i));
    Tensor ctx = aggregate_attention(twq, twk, tq, ks);
    Tensor loss = sum(mul(ctx, ctx));
    if (accumulate) {
      tape.backward(loss);
      wq->grad += tape.grad(twq.node);
      wk->grad += tape.grad(twk.node);
      keys->grad += tape.grad(tk.node);
      q->grad += tape.grad(tq.node);
    }
    return loss.scalar();
  };
  CHECK(finite_diff_check(store, f).passed(1e-4));
}
