// Copyright 2026 The tbru Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

namespace tbru {

// One annotated sentence. `heads` are 1-based token indices with the root
// stored as a self-pointer; all annotation arrays are either empty or of
// length size().
struct Sentence {
  std::vector<std::string> tokens;
  std::vector<std::string> pos;
  std::vector<int> heads;
  std::vector<std::string> labels;   // dependency labels, parallel to heads
  std::vector<int> keep_drop;        // 1 = keep, 0 = drop

  int size() const { return static_cast<int>(tokens.size()); }
  bool has_pos() const { return !pos.empty(); }
  bool has_heads() const { return !heads.empty(); }
  bool has_keep_drop() const { return !keep_drop.empty(); }
};

struct Corpus {
  std::vector<Sentence> sentences;
  int skipped_nonprojective = 0;

  int size() const { return static_cast<int>(sentences.size()); }
};

// heads uses the internal convention (1-based, root = self).
bool is_single_rooted_tree(const std::vector<int>& heads);
bool is_projective(const std::vector<int>& heads);

// CoNLL-style TSV: one token per line, blank line between sentences.
// Columns: index, form, pos, head, deplabel, keepdrop; the last three may be
// "_" when absent; head 0 marks the root. Non-projective sentences are
// skipped (counted in Corpus::skipped_nonprojective).
Corpus read_conll(const std::string& path);
Corpus read_conll_stream(std::istream& in);
void write_conll(const Corpus& corpus, const std::string& path);
void write_conll_stream(const Corpus& corpus, std::ostream& out);

// Random projective dependency trees over a small bracket language. The head
// of every token is decidable from the bracket structure, so a stack-aware
// parser can recover it exactly while a fixed-size encoding cannot. Fixed
// seed => identical corpus.
Corpus gen_synthetic_trees(int n_sentences, int max_len, std::uint64_t seed);

// Same trees plus keep/drop labels that are a deterministic function of the
// gold tree: every token inside a subtree opened by a type-2 bracket is
// dropped, everything else kept.
Corpus gen_synthetic_compression(int n_sentences, std::uint64_t seed);
// The labeling rule itself, applied to gold structure (test oracle).
std::vector<int> compression_rule(const Sentence& s);

struct Vocab {
  static constexpr int kUnknown = 0;
  static constexpr int kStart = 1;

  std::vector<std::string> id_to_token;  // [0]="<unk>", [1]="<s>"
  std::unordered_map<std::string, int> token_to_id;

  int lookup(const std::string& tok) const;
  int size() const { return static_cast<int>(id_to_token.size()); }
};

// Frequency-filtered vocabulary with deterministic id order
// (frequency desc, then lexicographic).
Vocab build_vocab(const Corpus& corpus, int min_count = 1);

// Sorted unique annotation inventories.
std::vector<std::string> collect_pos_tags(const Corpus& corpus);
std::vector<std::string> collect_dep_labels(const Corpus& corpus);

}  // namespace tbru
