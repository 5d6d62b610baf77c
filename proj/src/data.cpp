// Copyright 2026 The tbru Authors
// SPDX-License-Identifier: Apache-2.0

#include "tbru/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

namespace tbru {

namespace {

std::runtime_error parse_error(int line_no, const std::string& msg) {
  return std::runtime_error("conll parse error at line " + std::to_string(line_no) + ": " + msg);
}

}  // namespace

bool is_single_rooted_tree(const std::vector<int>& heads) {
  const int n = static_cast<int>(heads.size());
  if (n == 0) return false;
  int root = -1;
  for (int i = 1; i <= n; ++i) {
    const int h = heads[i - 1];
    if (h < 1 || h > n) return false;
    if (h == i) {
      if (root != -1) return false;  // multiple roots
      root = i;
    }
  }
  if (root == -1) return false;
  // Every token must reach the root without cycling.
  for (int i = 1; i <= n; ++i) {
    int at = i;
    int hops = 0;
    while (at != root) {
      at = heads[at - 1];
      if (++hops > n) return false;
    }
  }
  return true;
}

bool is_projective(const std::vector<int>& heads) {
  const int n = static_cast<int>(heads.size());
  for (int d = 1; d <= n; ++d) {
    const int h = heads[d - 1];
    if (h == d) continue;
    const int lo = std::min(h, d), hi = std::max(h, d);
    for (int d2 = 1; d2 <= n; ++d2) {
      const int h2 = heads[d2 - 1];
      if (h2 == d2) continue;
      const int lo2 = std::min(h2, d2), hi2 = std::max(h2, d2);
      if (lo < lo2 && lo2 < hi && hi < hi2) return false;
    }
  }
  return true;
}

// ---- CoNLL-style TSV --------------------------------------------------------

namespace {

struct RawToken {
  std::string form, pos, label, keepdrop;
  int head = -1;  // file convention: 0 = root
  int line_no = 0;
};

void finish_sentence(std::vector<RawToken>& raw, Corpus& corpus, int block_line) {
  if (raw.empty()) return;
  const int n = static_cast<int>(raw.size());
  Sentence s;
  int with_head = 0, with_pos = 0, with_kd = 0;
  for (const RawToken& t : raw) {
    s.tokens.push_back(t.form);
    if (t.head >= 0) ++with_head;
    if (t.pos != "_") ++with_pos;
    if (t.keepdrop != "_") ++with_kd;
  }
  if (with_pos != 0 && with_pos != n) {
    throw parse_error(block_line, "pos annotated for only part of a sentence");
  }
  if (with_head != 0 && with_head != n) {
    throw parse_error(block_line, "heads annotated for only part of a sentence");
  }
  if (with_kd != 0 && with_kd != n) {
    throw parse_error(block_line, "keep/drop annotated for only part of a sentence");
  }
  if (with_pos == n) {
    for (const RawToken& t : raw) s.pos.push_back(t.pos);
  }
  if (with_kd == n) {
    for (const RawToken& t : raw) {
      if (t.keepdrop != "keep" && t.keepdrop != "drop") {
        throw parse_error(t.line_no, "keepdrop column must be keep|drop|_");
      }
      s.keep_drop.push_back(t.keepdrop == "keep" ? 1 : 0);
    }
  }
  if (with_head == n) {
    for (int i = 0; i < n; ++i) {
      const RawToken& t = raw[i];
      if (t.head > n) {
        throw parse_error(t.line_no, "head index " + std::to_string(t.head) +
                                         " past sentence end (n=" + std::to_string(n) + ")");
      }
      s.heads.push_back(t.head == 0 ? i + 1 : t.head);  // root stored as self
      s.labels.push_back(t.label == "_" ? "" : t.label);
    }
    if (!is_single_rooted_tree(s.heads)) {
      throw parse_error(block_line, "heads do not form a single-rooted tree");
    }
    if (!is_projective(s.heads)) {
      ++corpus.skipped_nonprojective;
      raw.clear();
      return;
    }
  }
  corpus.sentences.push_back(std::move(s));
  raw.clear();
}

}  // namespace

Corpus read_conll_stream(std::istream& in) {
  Corpus corpus;
  std::vector<RawToken> raw;
  std::string line;
  int line_no = 0;
  int block_line = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::vector<std::string> cols;
    std::string col;
    while (ls >> col) cols.push_back(col);
    if (cols.empty()) {
      finish_sentence(raw, corpus, block_line);
      block_line = line_no + 1;
      continue;
    }
    if (cols.size() < 2 || cols.size() > 6) {
      throw parse_error(line_no, "expected 2..6 columns, got " + std::to_string(cols.size()));
    }
    RawToken t;
    t.line_no = line_no;
    int idx = 0;
    try {
      idx = std::stoi(cols[0]);
    } catch (const std::exception&) {
      throw parse_error(line_no, "token index is not a number: " + cols[0]);
    }
    if (idx != static_cast<int>(raw.size()) + 1) {
      throw parse_error(line_no, "token index out of sequence");
    }
    t.form = cols[1];
    t.pos = cols.size() > 2 ? cols[2] : "_";
    if (cols.size() > 3 && cols[3] != "_") {
      try {
        t.head = std::stoi(cols[3]);
      } catch (const std::exception&) {
        throw parse_error(line_no, "head is not a number: " + cols[3]);
      }
      if (t.head < 0) throw parse_error(line_no, "negative head index");
    }
    t.label = cols.size() > 4 ? cols[4] : "_";
    t.keepdrop = cols.size() > 5 ? cols[5] : "_";
    raw.push_back(std::move(t));
  }
  finish_sentence(raw, corpus, block_line);
  return corpus;
}

Corpus read_conll(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_conll_stream(in);
}

void write_conll_stream(const Corpus& corpus, std::ostream& out) {
  for (const Sentence& s : corpus.sentences) {
    for (int i = 0; i < s.size(); ++i) {
      out << (i + 1) << '\t' << s.tokens[i] << '\t'
          << (s.has_pos() ? s.pos[i] : std::string("_")) << '\t';
      if (s.has_heads()) {
        out << (s.heads[i] == i + 1 ? 0 : s.heads[i]) << '\t'
            << (s.labels[i].empty() ? std::string("_") : s.labels[i]);
      } else {
        out << "_\t_";
      }
      out << '\t' << (s.has_keep_drop() ? (s.keep_drop[i] ? "keep" : "drop") : "_") << '\n';
    }
    out << '\n';
  }
}

void write_conll(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_conll_stream(corpus, out);
}

// ---- synthetic corpora ------------------------------------------------------

namespace {

// Bracket-language tree: a node is either a single leaf word or a typed
// bracket pair wrapping child nodes.
struct BNode {
  int bracket = 0;  // 0 = leaf
  std::string word;
  std::vector<BNode> kids;
};

int node_len(const BNode& n) {
  if (n.bracket == 0) return 1;
  int len = 2;
  for (const BNode& k : n.kids) len += node_len(k);
  return len;
}

BNode gen_node(std::mt19937_64& rng, int budget, int depth) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (budget < 2 || depth >= 4 || unit(rng) < 0.30) {
    BNode leaf;
    leaf.word = "w" + std::to_string(1 + static_cast<int>(rng() % 6));
    return leaf;
  }
  BNode pair;
  pair.bracket = 1 + static_cast<int>(rng() % 2);
  int remaining = budget - 2;
  while (remaining >= 1 && pair.kids.size() < 3) {
    if (!pair.kids.empty() && unit(rng) < 0.45) break;
    BNode kid = gen_node(rng, remaining, depth + 1);
    remaining -= node_len(kid);
    pair.kids.push_back(std::move(kid));
  }
  return pair;
}

std::string pos_of_word(const std::string& w) {
  if (w == "(1") return "B1";
  if (w == "(2") return "B2";
  if (w == ")1") return "E1";
  if (w == ")2") return "E2";
  const int i = w[1] - '0';  // w1..w6
  if (i <= 2) return "N";
  if (i <= 4) return "V";
  return "A";
}

// Appends the node's tokens; returns the index of the node's head token.
// parent < 0 marks the sentence root.
int emit_node(const BNode& n, int parent, Sentence& s) {
  if (n.bracket == 0) {
    s.tokens.push_back(n.word);
    s.pos.push_back(pos_of_word(n.word));
    const int idx = s.size();
    s.heads.push_back(parent < 0 ? idx : parent);
    s.labels.push_back(parent < 0 ? "root" : "arg");
    return idx;
  }
  const std::string ob = "(" + std::to_string(n.bracket);
  const std::string cb = ")" + std::to_string(n.bracket);
  s.tokens.push_back(ob);
  s.pos.push_back(pos_of_word(ob));
  const int open_idx = s.size();
  s.heads.push_back(parent < 0 ? open_idx : parent);
  s.labels.push_back(parent < 0 ? "root" : "arg");
  for (const BNode& k : n.kids) emit_node(k, open_idx, s);
  s.tokens.push_back(cb);
  s.pos.push_back(pos_of_word(cb));
  s.heads.push_back(open_idx);
  s.labels.push_back("cl");
  return open_idx;
}

Sentence gen_sentence(std::mt19937_64& rng, int max_len) {
  const int budget = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_len));
  BNode top = gen_node(rng, budget, 0);
  Sentence s;
  emit_node(top, -1, s);
  return s;
}

}  // namespace

Corpus gen_synthetic_trees(int n_sentences, int max_len, std::uint64_t seed) {
  if (max_len < 1) throw std::invalid_argument("gen_synthetic_trees: max_len must be >= 1");
  std::mt19937_64 rng(seed);
  Corpus corpus;
  for (int i = 0; i < n_sentences; ++i) {
    corpus.sentences.push_back(gen_sentence(rng, max_len));
  }
  return corpus;
}

std::vector<int> compression_rule(const Sentence& s) {
  if (!s.has_heads()) throw std::invalid_argument("compression_rule: sentence has no gold tree");
  std::vector<int> keep(s.size(), 1);
  for (int i = 1; i <= s.size(); ++i) {
    int at = i;
    while (true) {
      if (s.tokens[at - 1] == "(2") {
        keep[i - 1] = 0;
        break;
      }
      const int h = s.heads[at - 1];
      if (h == at) break;
      at = h;
    }
  }
  return keep;
}

Corpus gen_synthetic_compression(int n_sentences, std::uint64_t seed) {
  Corpus corpus = gen_synthetic_trees(n_sentences, 12, seed);
  bool has_keep = false, has_drop = false;
  for (Sentence& s : corpus.sentences) {
    s.keep_drop = compression_rule(s);
    for (int v : s.keep_drop) (v ? has_keep : has_drop) = true;
  }
  // Both classes must appear somewhere in the corpus.
  if (!has_drop && !corpus.sentences.empty()) {
    Sentence s;
    s.tokens = {"(2", "w1", ")2"};
    for (const auto& t : s.tokens) s.pos.push_back(pos_of_word(t));
    s.heads = {1, 1, 1};
    s.labels = {"root", "arg", "cl"};
    s.keep_drop = compression_rule(s);
    corpus.sentences.back() = std::move(s);
  }
  if (!has_keep && !corpus.sentences.empty()) {
    Sentence s;
    s.tokens = {"w1"};
    s.pos = {pos_of_word("w1")};
    s.heads = {1};
    s.labels = {"root"};
    s.keep_drop = {1};
    corpus.sentences.front() = std::move(s);
  }
  return corpus;
}

// ---- vocabularies -----------------------------------------------------------

int Vocab::lookup(const std::string& tok) const {
  auto it = token_to_id.find(tok);
  return it == token_to_id.end() ? kUnknown : it->second;
}

Vocab build_vocab(const Corpus& corpus, int min_count) {
  std::map<std::string, int> counts;
  for (const Sentence& s : corpus.sentences) {
    for (const std::string& t : s.tokens) ++counts[t];
  }
  std::vector<std::pair<std::string, int>> items(counts.begin(), counts.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  v.id_to_token = {"<unk>", "<s>"};
  for (const auto& [tok, count] : items) {
    if (count < min_count) continue;
    v.id_to_token.push_back(tok);
  }
  for (int i = 0; i < v.size(); ++i) v.token_to_id[v.id_to_token[i]] = i;
  return v;
}

namespace {

std::vector<std::string> sorted_unique(std::vector<std::string> items) {
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  return items;
}

}  // namespace

std::vector<std::string> collect_pos_tags(const Corpus& corpus) {
  std::vector<std::string> tags;
  for (const Sentence& s : corpus.sentences) {
    for (const std::string& p : s.pos) tags.push_back(p);
  }
  return sorted_unique(std::move(tags));
}

std::vector<std::string> collect_dep_labels(const Corpus& corpus) {
  std::vector<std::string> labels;
  for (const Sentence& s : corpus.sentences) {
    for (int i = 0; i < s.size(); ++i) {
      if (s.has_heads() && s.heads[i] != i + 1 && !s.labels[i].empty()) {
        labels.push_back(s.labels[i]);
      }
    }
  }
  return sorted_unique(std::move(labels));
}

}  // namespace tbru
