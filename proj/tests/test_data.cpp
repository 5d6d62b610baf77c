// Copyright 2026 The tbru Authors
// SPDX-License-Identifier: Apache-2.0

#include "tbru/data.hpp"

#include <algorithm>
#include <random>
#include <sstream>

#include "doctest.h"
#include "test_util.hpp"

using namespace tbru;

TEST_CASE("read_conll parses the documented format") {
  std::istringstream in(
      "1\tHe\t_\t2\tnsubj\t_\n"
      "2\tran\t_\t0\troot\t_\n"
      "\n");
  Corpus c = read_conll_stream(in);
  REQUIRE(c.size() == 1);
  const Sentence& s = c.sentences[0];
  CHECK(s.tokens == std::vector<std::string>{"He", "ran"});
  CHECK(s.heads == std::vector<int>{2, 2});  // root stored as self
  CHECK(s.labels[0] == "nsubj");
  CHECK_FALSE(s.has_pos());
  CHECK_FALSE(s.has_keep_drop());
}

TEST_CASE("read_conll accepts space separation and partial columns") {
  std::istringstream in("1 only\n\n");
  Corpus c = read_conll_stream(in);
  REQUIRE(c.size() == 1);
  CHECK(c.sentences[0].tokens == std::vector<std::string>{"only"});
  CHECK_FALSE(c.sentences[0].has_heads());
}

TEST_CASE("blank file gives an empty corpus") {
  std::istringstream in("");
  CHECK(read_conll_stream(in).size() == 0);
}

TEST_CASE("head past sentence end reports the line") {
  std::istringstream in("1\ta\t_\t9\tx\t_\n\n");
  try {
    read_conll_stream(in);
    FAIL("expected a parse error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }
}

TEST_CASE("malformed rows are rejected") {
  {
    std::istringstream in("7\ta\n\n");
    CHECK_THROWS(read_conll_stream(in));  // index out of sequence
  }
  {
    std::istringstream in("1\ta\t_\tzz\t_\t_\n\n");
    CHECK_THROWS(read_conll_stream(in));  // non-numeric head
  }
  {
    // heads present for only part of the sentence
    std::istringstream in("1\ta\t_\t2\tx\t_\n2\tb\t_\t_\t_\t_\n\n");
    CHECK_THROWS(read_conll_stream(in));
  }
  {
    // two roots
    std::istringstream in("1\ta\t_\t0\troot\t_\n2\tb\t_\t0\troot\t_\n\n");
    CHECK_THROWS(read_conll_stream(in));
  }
}

TEST_CASE("non-projective sentences are skipped and counted") {
  std::istringstream in(
      "1\ta\t_\t3\tx\t_\n"
      "2\tb\t_\t4\tx\t_\n"
      "3\tc\t_\t0\troot\t_\n"
      "4\td\t_\t3\tx\t_\n"
      "\n"
      "1\te\t_\t0\troot\t_\n"
      "\n");
  Corpus c = read_conll_stream(in);
  CHECK(c.size() == 1);
  CHECK(c.skipped_nonprojective == 1);
}

TEST_CASE("write/read round-trips exactly") {
  Corpus c = gen_synthetic_compression(40, 9);
  std::ostringstream out;
  write_conll_stream(c, out);
  std::istringstream in(out.str());
  Corpus back = read_conll_stream(in);
  REQUIRE(back.size() == c.size());
  for (int i = 0; i < c.size(); ++i) {
    CHECK(back.sentences[i].tokens == c.sentences[i].tokens);
    CHECK(back.sentences[i].pos == c.sentences[i].pos);
    CHECK(back.sentences[i].heads == c.sentences[i].heads);
    CHECK(back.sentences[i].labels == c.sentences[i].labels);
    CHECK(back.sentences[i].keep_drop == c.sentences[i].keep_drop);
  }
}

TEST_CASE("synthetic trees are deterministic, projective, and oracle-derivable") {
  Corpus a = gen_synthetic_trees(60, 12, 1);
  Corpus b = gen_synthetic_trees(60, 12, 1);
  REQUIRE(a.size() == b.size());
  for (int i = 0; i < a.size(); ++i) {
    CHECK(a.sentences[i].tokens == b.sentences[i].tokens);
    CHECK(a.sentences[i].heads == b.sentences[i].heads);
  }

  TransitionSystemSpec spec;
  spec.kind = SystemKind::kArcStandard;
  spec.labels = collect_dep_labels(a);
  for (const Sentence& s : a.sentences) {
    REQUIRE(s.size() >= 1);
    REQUIRE(s.size() <= 12);
    CHECK(is_single_rooted_tree(s.heads));
    CHECK(is_projective(s.heads));
    int steps = 0;
    const ParserState final_state = testutil::replay_oracle(spec, s, &steps);
    CHECK(steps == 2 * s.size() - 1);
    CHECK(testutil::arcs_match_gold(spec, final_state, s));
  }
}

TEST_CASE("compression labels follow the tree rule and cover both classes") {
  Corpus c = gen_synthetic_compression(80, 4);
  bool keep = false, drop = false;
  for (const Sentence& s : c.sentences) {
    REQUIRE(s.has_keep_drop());
    // The labeling rule is a pure function of the gold tree.
    CHECK(s.keep_drop == compression_rule(s));
    for (int v : s.keep_drop) (v ? keep : drop) = true;
  }
  CHECK(keep);
  CHECK(drop);
}

TEST_CASE("vocabulary construction") {
  Corpus c;
  Sentence s1, s2;
  s1.tokens = {"b", "a", "a"};
  s2.tokens = {"c", "a", "b"};
  c.sentences = {s1, s2};

  Vocab v = build_vocab(c, 1);
  CHECK(v.size() == 5);  // unk, start, a, b, c
  CHECK(v.lookup("a") == 2);  // most frequent first
  CHECK(v.lookup("b") == 3);
  CHECK(v.lookup("c") == 4);
  CHECK(v.lookup("zzz") == Vocab::kUnknown);

  Vocab filtered = build_vocab(c, 2);
  CHECK(filtered.lookup("c") == Vocab::kUnknown);
  CHECK(filtered.lookup("a") != Vocab::kUnknown);

  // Insensitive to sentence order.
  std::swap(c.sentences[0], c.sentences[1]);
  Vocab swapped = build_vocab(c, 1);
  CHECK(swapped.id_to_token == v.id_to_token);
}

TEST_CASE("pos and label inventories are sorted and unique") {
  Corpus c = gen_synthetic_trees(30, 10, 2);
  const auto pos = collect_pos_tags(c);
  CHECK(std::is_sorted(pos.begin(), pos.end()));
  CHECK(std::adjacent_find(pos.begin(), pos.end()) == pos.end());
  const auto labels = collect_dep_labels(c);
  for (const std::string& l : labels) CHECK(l != "root");
}
