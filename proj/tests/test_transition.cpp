// Copyright 2026 The tbru Authors
// SPDX-License-Identifier: Apache-2.0

#include "tbru/transition.hpp"

#include <random>

#include "doctest.h"
#include "test_util.hpp"

using namespace tbru;

namespace {

TransitionSystemSpec shift_spec(bool r2l = false) {
  TransitionSystemSpec s;
  s.kind = SystemKind::kShiftOnly;
  s.right_to_left = r2l;
  return s;
}

TransitionSystemSpec tagger_spec(std::vector<std::string> tags = {"A", "B", "C"}) {
  TransitionSystemSpec s;
  s.kind = SystemKind::kTagger;
  s.tag_source = TagSource::kPos;
  s.tags = std::move(tags);
  return s;
}

TransitionSystemSpec arc_spec(std::vector<std::string> labels = {"a", "b"}, bool r2l = false) {
  TransitionSystemSpec s;
  s.kind = SystemKind::kArcStandard;
  s.labels = std::move(labels);
  s.right_to_left = r2l;
  return s;
}

}  // namespace

TEST_CASE("decision vocabulary sizes") {
  CHECK(shift_spec().num_decisions() == 1);
  CHECK(tagger_spec().num_decisions() == 3);
  CHECK(arc_spec().num_decisions() == 5);
  CHECK(arc_spec({"dep"}).num_decisions() == 3);  // unlabeled degenerate case
}

TEST_CASE("initial states") {
  auto sh = initial_state(shift_spec(), 3);
  CHECK(std::get<ShiftOnlyState>(sh).pointer == 1);

  auto ar = initial_state(arc_spec(), 2);
  const auto& ps = std::get<ParserState>(ar);
  CHECK(ps.stack.empty());
  CHECK(ps.consumed == 0);
  CHECK(ps.arcs.empty());
  CHECK(ps.next_token() == 1);

  auto tg = initial_state(tagger_spec(), 4);
  CHECK(std::get<TaggerState>(tg).emitted.empty());

  CHECK_THROWS_AS(initial_state(shift_spec(), 0), std::invalid_argument);
}

TEST_CASE("allowed decisions") {
  const auto spec = arc_spec();
  TransitionState st = initial_state(spec, 3);
  // Stack empty, buffer non-empty: shift only.
  CHECK(allowed(spec, st) == std::vector<int>{0});
  st = apply(spec, st, 0, 1);
  // Stack [1], buffer non-empty: still shift only.
  CHECK(allowed(spec, st) == std::vector<int>{0});
  st = apply(spec, st, 0, 2);
  st = apply(spec, st, 0, 3);
  // Stack [1,2,3], buffer empty: every arc decision, no shift.
  const std::vector<int> arcs_only = allowed(spec, st);
  CHECK(arcs_only == std::vector<int>{1, 2, 3, 4});

  const auto sh = shift_spec();
  TransitionState so = initial_state(sh, 2);
  CHECK(allowed(sh, so).size() == 1);

  TransitionState done = initial_state(sh, 1);
  done = apply(sh, done, 0, 1);
  CHECK(is_terminal(sh, done));
  CHECK_THROWS(allowed(sh, done));
}

TEST_CASE("arc-standard apply semantics") {
  const auto spec = arc_spec({"lbl"});
  // Stack {A,B} with next token C (tokens 1,2,3).
  TransitionState st = initial_state(spec, 3);
  st = apply(spec, st, 0, 1);
  st = apply(spec, st, 0, 2);

  SUBCASE("shift pushes the next token") {
    auto next = std::get<ParserState>(apply(spec, st, 0, 3));
    CHECK(next.stack == std::vector<int>{1, 2, 3});
    CHECK(next.next_token() == 3);  // buffer exhausted sentinel
    CHECK(next.buffer_empty());
  }
  SUBCASE("left arc adds A <- B and removes A") {
    auto next = std::get<ParserState>(apply(spec, st, TransitionSystemSpec::left_arc(0), 3));
    REQUIRE(next.arcs.size() == 1);
    CHECK(next.arcs[0] == Arc{2, 1, 0});
    CHECK(next.stack == std::vector<int>{2});
  }
  SUBCASE("right arc adds A -> B and removes B") {
    auto next = std::get<ParserState>(apply(spec, st, TransitionSystemSpec::right_arc(0), 3));
    REQUIRE(next.arcs.size() == 1);
    CHECK(next.arcs[0] == Arc{1, 2, 0});
    CHECK(next.stack == std::vector<int>{1});
  }
  SUBCASE("disallowed decision throws") {
    TransitionState fresh = initial_state(spec, 3);
    CHECK_THROWS_AS(apply(spec, fresh, TransitionSystemSpec::left_arc(0), 1),
                    std::invalid_argument);
  }
}

TEST_CASE("terminal detection") {
  auto sh = initial_state(shift_spec(), 3);
  std::get<ShiftOnlyState>(sh).pointer = 4;
  CHECK(is_terminal(shift_spec(), sh));

  const auto spec = arc_spec();
  TransitionState one = initial_state(spec, 1);
  one = apply(spec, one, 0, 1);
  CHECK(is_terminal(spec, one));

  auto tg = initial_state(tagger_spec(), 2);
  tg = apply(tagger_spec(), tg, 1, 1);
  CHECK_FALSE(is_terminal(tagger_spec(), tg));
}

TEST_CASE("decision counts") {
  CHECK(num_steps(arc_spec(), 1) == 1);
  CHECK(num_steps(arc_spec(), 5) == 9);
  CHECK(num_steps(tagger_spec(), 7) == 7);
  // Verify 2n-1 by driving an actual derivation.
  std::mt19937_64 rng(3);
  const auto heads = testutil::random_projective_heads(rng, 5);
  int steps = 0;
  testutil::replay_oracle(arc_spec(), testutil::sentence_from_heads(heads), &steps);
  CHECK(steps == 9);
}

TEST_CASE("oracle on two-token sentences") {
  const auto spec = arc_spec({"a", "b"});
  SUBCASE("head(1) = 2: shift, shift, left arc") {
    Sentence s = testutil::sentence_from_heads({2, 2});
    TransitionState st = initial_state(spec, 2);
    CHECK(gold_decision(spec, st, s) == 0);
    st = apply(spec, st, 0, 1);
    CHECK(gold_decision(spec, st, s) == 0);
    st = apply(spec, st, 0, 2);
    const int d = gold_decision(spec, st, s);
    CHECK(TransitionSystemSpec::is_left_arc(d));
    st = apply(spec, st, d, 3);
    CHECK(is_terminal(spec, st));
    CHECK(std::get<ParserState>(st).stack == std::vector<int>{2});
  }
  SUBCASE("head(2) = 1: shift, shift, right arc") {
    Sentence s = testutil::sentence_from_heads({1, 1});
    TransitionState st = initial_state(spec, 2);
    st = apply(spec, st, 0, 1);
    st = apply(spec, st, 0, 2);
    const int d = gold_decision(spec, st, s);
    CHECK(TransitionSystemSpec::is_right_arc(d));
    st = apply(spec, st, d, 3);
    CHECK(is_terminal(spec, st));
    CHECK(std::get<ParserState>(st).stack == std::vector<int>{1});
  }
}

TEST_CASE("oracle round-trip over random projective trees") {
  const auto spec = arc_spec();
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 15);
    const auto heads = testutil::random_projective_heads(rng, n);
    REQUIRE(is_projective(heads));
    const Sentence s = testutil::sentence_from_heads(heads);
    int steps = 0;
    const ParserState final_state = testutil::replay_oracle(spec, s, &steps);
    CHECK(steps == 2 * n - 1);
    CHECK(testutil::arcs_match_gold(spec, final_state, s));
  }
}

TEST_CASE("oracle works right-to-left too") {
  const auto spec = arc_spec({"a", "b"}, /*r2l=*/true);
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 12);
    const auto heads = testutil::random_projective_heads(rng, n);
    const Sentence s = testutil::sentence_from_heads(heads);
    int steps = 0;
    const ParserState final_state = testutil::replay_oracle(spec, s, &steps);
    CHECK(steps == 2 * n - 1);
    CHECK(testutil::arcs_match_gold(spec, final_state, s));
  }
}

TEST_CASE("non-derivable gold tree is reported") {
  // 1 -> 3 and 2 -> 4 cross; the oracle must hit a dead end.
  Sentence s = testutil::sentence_from_heads({3, 4, 3, 3});
  REQUIRE_FALSE(is_projective(s.heads));
  const auto spec = arc_spec();
  CHECK_THROWS_AS(testutil::replay_oracle(spec, s), std::runtime_error);
}

TEST_CASE("input pointer") {
  const auto spec = arc_spec();
  TransitionState st = initial_state(spec, 3);
  CHECK(input_pointer(st) == 1);
  st = apply(spec, st, 0, 1);
  CHECK(input_pointer(st) == 2);
  st = apply(spec, st, 0, 2);
  st = apply(spec, st, 0, 3);
  CHECK(std::get<ParserState>(st).buffer_empty());
  CHECK(input_pointer(st) == 3);  // exhausted buffer: sentinel n
}

TEST_CASE("subtree bookkeeping") {
  const auto spec = arc_spec({"x"});
  TransitionState st = initial_state(spec, 3);
  st = apply(spec, st, 0, 11);
  // Token 1 was shifted at global step 11.
  CHECK(subtree_step(std::get<ParserState>(st), 0) == 11);
  CHECK_THROWS_AS(subtree_step(std::get<ParserState>(st), 1), std::out_of_range);

  st = apply(spec, st, 0, 12);
  st = apply(spec, st, TransitionSystemSpec::left_arc(0), 13);
  // Left arc at step 13 attached a child to token 2, now S0.
  const auto& ps = std::get<ParserState>(st);
  CHECK(ps.stack == std::vector<int>{2});
  CHECK(subtree_step(ps, 0) == 13);
}

TEST_CASE("no dead ends on random decision walks") {
  const auto spec = arc_spec();
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 10);
    TransitionState st = initial_state(spec, n);
    int steps = 0;
    while (!is_terminal(spec, st)) {
      const std::vector<int> legal = allowed(spec, st);
      REQUIRE_FALSE(legal.empty());
      st = apply(spec, st, legal[rng() % legal.size()], ++steps);
      REQUIRE(steps <= 2 * n - 1);
    }
    CHECK(steps == 2 * n - 1);
    const auto& ps = std::get<ParserState>(st);
    CHECK(static_cast<int>(ps.arcs.size()) == n - 1);
    std::vector<int> heads(n, 0);
    for (const Arc& a : ps.arcs) heads[a.dep - 1] = a.head;
    heads[ps.stack.front() - 1] = ps.stack.front();
    CHECK(is_single_rooted_tree(heads));
    CHECK(is_projective(heads));
  }
}

TEST_CASE("apply is pure") {
  const auto spec = arc_spec();
  TransitionState st = initial_state(spec, 4);
  st = apply(spec, st, 0, 1);
  st = apply(spec, st, 0, 2);
  const auto a = std::get<ParserState>(apply(spec, st, 1, 3));
  const auto b = std::get<ParserState>(apply(spec, st, 1, 3));
  CHECK(a.stack == b.stack);
  CHECK(a.arcs == b.arcs);
  CHECK(a.consumed == b.consumed);
  CHECK(a.last_modifier_step == b.last_modifier_step);
}
