// Copyright 2026 The tbru Authors
// SPDX-License-Identifier: Apache-2.0

#include "tbru/transition.hpp"

#include <algorithm>
#include <stdexcept>

namespace tbru {

int TransitionSystemSpec::num_decisions() const {
  switch (kind) {
    case SystemKind::kShiftOnly:
      return 1;
    case SystemKind::kTagger:
      return static_cast<int>(tags.size());
    case SystemKind::kArcStandard:
      return 1 + 2 * static_cast<int>(labels.size());
  }
  return 0;
}

std::string TransitionSystemSpec::decision_name(int d) const {
  switch (kind) {
    case SystemKind::kShiftOnly:
      return "advance";
    case SystemKind::kTagger:
      return tags.at(d);
    case SystemKind::kArcStandard:
      if (d == kShift) return "shift";
      if (is_left_arc(d)) return "left(" + labels.at(arc_label(d)) + ")";
      return "right(" + labels.at(arc_label(d)) + ")";
  }
  return "?";
}

int TransitionSystemSpec::tag_index(const std::string& tag) const {
  auto it = std::find(tags.begin(), tags.end(), tag);
  if (it == tags.end()) throw std::out_of_range("unknown tag: " + tag);
  return static_cast<int>(it - tags.begin());
}

int ShiftOnlyState::current_token() const {
  const int p = std::min(pointer, n);
  return right_to_left ? n - p + 1 : p;
}

int ParserState::next_token() const {
  if (buffer_empty()) return right_to_left ? 1 : n;
  return right_to_left ? n - consumed : consumed + 1;
}

int ParserState::stack_token(int depth) const {
  if (depth < 0 || depth >= static_cast<int>(stack.size())) {
    throw std::out_of_range("stack slot S" + std::to_string(depth) + " requested on a stack of " +
                            std::to_string(stack.size()));
  }
  return stack[stack.size() - 1 - static_cast<std::size_t>(depth)];
}

TransitionState initial_state(const TransitionSystemSpec& spec, int n) {
  if (n < 1) throw std::invalid_argument("initial_state: empty sentence");
  switch (spec.kind) {
    case SystemKind::kShiftOnly: {
      ShiftOnlyState s;
      s.pointer = 1;
      s.n = n;
      s.right_to_left = spec.right_to_left;
      return s;
    }
    case SystemKind::kTagger: {
      TaggerState s;
      s.n = n;
      return s;
    }
    case SystemKind::kArcStandard: {
      ParserState s;
      s.n = n;
      s.right_to_left = spec.right_to_left;
      s.last_modifier_step.assign(static_cast<std::size_t>(n) + 1, 0);
      return s;
    }
  }
  throw std::logic_error("initial_state: bad system kind");
}

bool is_terminal(const TransitionSystemSpec& spec, const TransitionState& state) {
  switch (spec.kind) {
    case SystemKind::kShiftOnly: {
      const auto& s = std::get<ShiftOnlyState>(state);
      return s.pointer == s.n + 1;
    }
    case SystemKind::kTagger: {
      const auto& s = std::get<TaggerState>(state);
      return static_cast<int>(s.emitted.size()) == s.n;
    }
    case SystemKind::kArcStandard: {
      const auto& s = std::get<ParserState>(state);
      return s.buffer_empty() && s.stack.size() == 1;
    }
  }
  return false;
}

std::vector<int> allowed(const TransitionSystemSpec& spec, const TransitionState& state) {
  if (is_terminal(spec, state)) {
    throw std::logic_error("allowed: called on a terminal state");
  }
  switch (spec.kind) {
    case SystemKind::kShiftOnly:
      return {0};
    case SystemKind::kTagger: {
      std::vector<int> out(spec.tags.size());
      for (int i = 0; i < static_cast<int>(out.size()); ++i) out[i] = i;
      return out;
    }
    case SystemKind::kArcStandard: {
      const auto& s = std::get<ParserState>(state);
      std::vector<int> out;
      if (!s.buffer_empty()) out.push_back(TransitionSystemSpec::kShift);
      if (s.stack.size() >= 2) {
        for (int l = 0; l < static_cast<int>(spec.labels.size()); ++l) {
          out.push_back(TransitionSystemSpec::left_arc(l));
          out.push_back(TransitionSystemSpec::right_arc(l));
        }
      }
      return out;
    }
  }
  return {};
}

TransitionState apply(const TransitionSystemSpec& spec, const TransitionState& state,
                      int decision, int global_step) {
  const std::vector<int> legal = allowed(spec, state);
  if (std::find(legal.begin(), legal.end(), decision) == legal.end()) {
    throw std::invalid_argument("apply: decision " + std::to_string(decision) +
                                " not allowed in this state");
  }
  switch (spec.kind) {
    case SystemKind::kShiftOnly: {
      auto s = std::get<ShiftOnlyState>(state);
      ++s.pointer;
      return s;
    }
    case SystemKind::kTagger: {
      auto s = std::get<TaggerState>(state);
      s.emitted.push_back(decision);
      return s;
    }
    case SystemKind::kArcStandard: {
      auto s = std::get<ParserState>(state);
      if (decision == TransitionSystemSpec::kShift) {
        const int t = s.next_token();
        s.stack.push_back(t);
        ++s.consumed;
        s.last_modifier_step[t] = global_step;
      } else if (TransitionSystemSpec::is_left_arc(decision)) {
        // S1 <- S0: S0 gains a child, S1 leaves the stack.
        const int head = s.stack_token(0);
        const int dep = s.stack_token(1);
        s.arcs.push_back(Arc{head, dep, TransitionSystemSpec::arc_label(decision)});
        s.stack.erase(s.stack.end() - 2);
        s.last_modifier_step[head] = global_step;
      } else {
        // S1 -> S0: S1 gains a child, S0 leaves the stack.
        const int head = s.stack_token(1);
        const int dep = s.stack_token(0);
        s.arcs.push_back(Arc{head, dep, TransitionSystemSpec::arc_label(decision)});
        s.stack.pop_back();
        s.last_modifier_step[head] = global_step;
      }
      return s;
    }
  }
  throw std::logic_error("apply: bad system kind");
}

int num_steps(const TransitionSystemSpec& spec, int n) {
  if (n < 1) throw std::invalid_argument("num_steps: n must be >= 1");
  return spec.kind == SystemKind::kArcStandard ? 2 * n - 1 : n;
}

namespace {

int label_index(const TransitionSystemSpec& spec, const std::string& label) {
  auto it = std::find(spec.labels.begin(), spec.labels.end(), label);
  if (it == spec.labels.end()) {
    throw std::out_of_range("gold label not in label vocabulary: " + label);
  }
  return static_cast<int>(it - spec.labels.begin());
}

int arc_label_for(const TransitionSystemSpec& spec, const Sentence& gold, int dep) {
  if (spec.labels.size() == 1) return 0;  // unlabeled / degenerate configuration
  return label_index(spec, gold.labels[dep - 1]);
}

// True when every gold child of `tok` is already attached.
bool children_complete(const ParserState& s, const Sentence& gold, int tok) {
  int gold_children = 0;
  for (int d = 1; d <= s.n; ++d) {
    if (d != tok && gold.heads[d - 1] == tok) ++gold_children;
  }
  int attached = 0;
  for (const Arc& a : s.arcs) {
    if (a.head == tok) ++attached;
  }
  return attached == gold_children;
}

}  // namespace

int gold_decision(const TransitionSystemSpec& spec, const TransitionState& state,
                  const Sentence& gold) {
  switch (spec.kind) {
    case SystemKind::kShiftOnly:
      return 0;
    case SystemKind::kTagger: {
      const auto& s = std::get<TaggerState>(state);
      const int tok = s.next_token();
      switch (spec.tag_source) {
        case TagSource::kPos:
          if (!gold.has_pos()) throw std::runtime_error("gold pos tags missing");
          return spec.tag_index(gold.pos[tok - 1]);
        case TagSource::kKeepDrop:
          if (!gold.has_keep_drop()) throw std::runtime_error("gold keep/drop labels missing");
          return gold.keep_drop[tok - 1] ? spec.tag_index("keep") : spec.tag_index("drop");
        case TagSource::kNone:
          throw std::logic_error("gold_decision: tagger has no tag source");
      }
      break;
    }
    case SystemKind::kArcStandard: {
      const auto& s = std::get<ParserState>(state);
      if (!gold.has_heads()) throw std::runtime_error("gold heads missing");
      if (s.stack.size() >= 2) {
        const int s0 = s.stack_token(0);
        const int s1 = s.stack_token(1);
        if (gold.heads[s1 - 1] == s0 && children_complete(s, gold, s1)) {
          return TransitionSystemSpec::left_arc(arc_label_for(spec, gold, s1));
        }
        if (gold.heads[s0 - 1] == s1 && children_complete(s, gold, s0)) {
          return TransitionSystemSpec::right_arc(arc_label_for(spec, gold, s0));
        }
      }
      if (s.buffer_empty()) {
        throw std::runtime_error(
            "gold_decision: no valid decision; gold tree is not derivable (non-projective?)");
      }
      return TransitionSystemSpec::kShift;
    }
  }
  throw std::logic_error("gold_decision: bad system kind");
}

int input_pointer(const TransitionState& state) {
  if (const auto* p = std::get_if<ParserState>(&state)) return p->next_token();
  if (const auto* s = std::get_if<ShiftOnlyState>(&state)) return s->current_token();
  if (const auto* t = std::get_if<TaggerState>(&state)) {
    return std::min(t->next_token(), t->n);
  }
  throw std::logic_error("input_pointer: bad state");
}

int subtree_step(const ParserState& state, int slot) {
  const int tok = state.stack_token(slot);
  return state.last_modifier_step[tok];
}

}  // namespace tbru
