// Copyright 2026 The tbru Authors
// SPDX-License-Identifier: Apache-2.0
//
// Discrete transition systems: states, allowed decisions, the transition
// function, and static gold oracles. Three systems are provided: shift-only
// (a single advancing decision), tagger (one tag per token), and arc-standard
// dependency parsing (Shift / LeftArc+label / RightArc+label over a stack and
// an input buffer).

#pragma once

#include <string>
#include <variant>
#include <vector>

#include "tbru/data.hpp"

namespace tbru {

enum class SystemKind { kShiftOnly, kTagger, kArcStandard };

// Which gold annotation a tagger system is supervised against.
enum class TagSource { kNone, kPos, kKeepDrop };

struct TransitionSystemSpec {
  SystemKind kind = SystemKind::kShiftOnly;
  bool right_to_left = false;            // token order for shift-only / arc-standard
  TagSource tag_source = TagSource::kNone;
  std::vector<std::string> tags;         // tagger decision vocabulary
  std::vector<std::string> labels;       // arc labels

  int num_decisions() const;
  std::string decision_name(int d) const;
  int tag_index(const std::string& tag) const;  // throws on unknown tag

  // Arc-standard action encoding: Shift = 0, LeftArc(l) = 1 + 2l,
  // RightArc(l) = 2 + 2l.
  static constexpr int kShift = 0;
  static int left_arc(int label) { return 1 + 2 * label; }
  static int right_arc(int label) { return 2 + 2 * label; }
  static bool is_left_arc(int d) { return d > 0 && d % 2 == 1; }
  static bool is_right_arc(int d) { return d > 0 && d % 2 == 0; }
  static int arc_label(int d) { return (d - 1) / 2; }
};

struct ShiftOnlyState {
  int pointer = 1;  // 1-based local step position, terminal at n+1
  int n = 0;
  bool right_to_left = false;

  // Index of the next token to read, in sentence order (clamped to [1, n]).
  int current_token() const;
};

struct TaggerState {
  std::vector<int> emitted;  // decisions so far
  int n = 0;

  int next_token() const { return static_cast<int>(emitted.size()) + 1; }
};

struct Arc {
  int head = 0, dep = 0;
  int label = 0;
  bool operator==(const Arc&) const = default;
};

struct ParserState {
  int n = 0;
  bool right_to_left = false;
  std::vector<int> stack;  // token indices, top = back()
  int consumed = 0;        // tokens shifted so far
  std::vector<Arc> arcs;
  // Global step of the last decision that shifted token i or attached a new
  // child to it; index 1..n, 0 = never touched.
  std::vector<int> last_modifier_step;

  bool buffer_empty() const { return consumed >= n; }
  // Next unread token in sentence order; when the buffer is exhausted,
  // the sentinel is the last token consumed.
  int next_token() const;
  int stack_token(int depth) const;  // 0 = top (S0); throws when too shallow
};

using TransitionState = std::variant<ShiftOnlyState, TaggerState, ParserState>;

TransitionState initial_state(const TransitionSystemSpec& spec, int n);
bool is_terminal(const TransitionSystemSpec& spec, const TransitionState& state);
// Decisions legal in `state`; throws when called on a terminal state.
std::vector<int> allowed(const TransitionSystemSpec& spec, const TransitionState& state);
// Applies a legal decision; `global_step` is recorded by parser states for
// Subtree bookkeeping. Pure: equal arguments give equal results.
TransitionState apply(const TransitionSystemSpec& spec, const TransitionState& state,
                      int decision, int global_step = 0);
// Number of decisions in any complete derivation: n for shift-only and
// tagger, 2n - 1 for arc-standard.
int num_steps(const TransitionSystemSpec& spec, int n);

// Static oracle: the gold decision at `state`. Tagger reads the annotation
// selected by spec.tag_source; arc-standard uses the standard eager-attach
// rule (LeftArc when S1's gold head is S0 and S1 is complete, else RightArc
// symmetrically, else Shift). Requires a projective gold tree.
int gold_decision(const TransitionSystemSpec& spec, const TransitionState& state,
                  const Sentence& gold);

// Index of the next input token for parser / shift-only states.
int input_pointer(const TransitionState& state);
// Global step of the last decision that modified the stack token at `slot`
// (0 = S0, 1 = S1). Throws when the stack is too shallow.
int subtree_step(const ParserState& state, int slot);

}  // namespace tbru
