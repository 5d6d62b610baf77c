// Copyright 2026 The tbru Authors
// SPDX-License-Identifier: Apache-2.0

#include "tbru/engine.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

namespace tbru {

namespace {

bool is_token_aligned(SystemKind k) {
  return k == SystemKind::kShiftOnly || k == SystemKind::kTagger;
}

const char* link_kind_name(LinkKind k) {
  switch (k) {
    case LinkKind::kPreviousStep: return "previous_step";
    case LinkKind::kFinalStateOf: return "final_state_of";
    case LinkKind::kInputPointer: return "input_pointer_link";
    case LinkKind::kTokenSuffix: return "token_suffix_link";
    case LinkKind::kSubtree: return "subtree_links";
    case LinkKind::kSubtreeOfInput: return "subtree_of_input";
    case LinkKind::kAllOf: return "all_of";
  }
  return "?";
}

}  // namespace

std::vector<std::string> validate_pipeline(const PipelineConfig& config) {
  std::vector<std::string> errors;
  if (config.tbrus.empty()) {
    errors.push_back("pipeline has no components");
    return errors;
  }
  if (config.embedding_dim < 1) errors.push_back("embedding_dim must be >= 1");

  std::unordered_map<std::string, int> index;
  for (int i = 0; i < static_cast<int>(config.tbrus.size()); ++i) {
    const TBRUConfig& t = config.tbrus[i];
    if (t.name.empty()) errors.push_back("component " + std::to_string(i) + " has no name");
    if (index.count(t.name)) errors.push_back("duplicate component name: " + t.name);
    index.emplace(t.name, i);
  }

  for (int i = 0; i < static_cast<int>(config.tbrus.size()); ++i) {
    const TBRUConfig& t = config.tbrus[i];
    const std::string where = "component " + t.name + ": ";
    if (t.hidden < 1) errors.push_back(where + "hidden must be >= 1");
    if (t.supervised && t.system == SystemKind::kShiftOnly) {
      errors.push_back(where + "shift-only systems produce no supervisable decisions");
    }
    if (t.system == SystemKind::kTagger && t.tag_source == TagSource::kNone) {
      errors.push_back(where + "tagger needs a tag source (pos or keepdrop)");
    }
    if (t.input.kind == InputFnKind::kFeatureTemplates) {
      if (t.system != SystemKind::kArcStandard) {
        errors.push_back(where + "feature templates require an arc-standard state");
      }
      if (t.input.templates < 1 || t.input.templates > 20) {
        errors.push_back(where + "template count must be in [1, 20]");
      }
    }
    if (t.input.kind == InputFnKind::kReversedTokenEmbedding &&
        t.system == SystemKind::kArcStandard) {
      errors.push_back(where + "reversed token input is for shift-only/tagger systems");
    }
    if (t.cell == CellKind::kMlp && !t.links.empty()) {
      errors.push_back(where + "MLP cells are feed-forward; recurrence links not allowed");
    }
    if (t.cell == CellKind::kLstm && t.links.empty() && t.input.kind == InputFnKind::kEmpty) {
      errors.push_back(where + "cell has neither input nor recurrences");
    }
    if (t.cell == CellKind::kMlp && t.input.kind == InputFnKind::kEmpty) {
      errors.push_back(where + "MLP cell needs a non-empty input");
    }
    if (t.policy != AggPolicy::kConcatFixed && t.links.empty()) {
      errors.push_back(where + "mean/attention aggregation needs at least one link");
    }

    bool has_all_of = false;
    for (const Link& l : t.links) {
      if (l.kind == LinkKind::kAllOf) has_all_of = true;
    }
    if (has_all_of && t.policy == AggPolicy::kConcatFixed) {
      errors.push_back(where + "all_of links have variable arity; use mean or attention");
    }

    for (const Link& l : t.links) {
      if (l.kind == LinkKind::kPreviousStep) {
        if (!l.source.empty()) errors.push_back(where + "previous_step takes no source");
        continue;
      }
      auto it = index.find(l.source);
      if (it == index.end()) {
        errors.push_back(where + std::string(link_kind_name(l.kind)) +
                         " references unknown component '" + l.source + "'");
        continue;
      }
      const int src = it->second;
      const TBRUConfig& s = config.tbrus[src];
      const bool self_ok = l.kind == LinkKind::kSubtree;
      if (src > i || (src == i && !self_ok)) {
        errors.push_back(where + std::string(link_kind_name(l.kind)) + " forward reference to '" +
                         l.source + "'");
        continue;
      }
      switch (l.kind) {
        case LinkKind::kInputPointer:
        case LinkKind::kTokenSuffix:
          if (!is_token_aligned(s.system)) {
            errors.push_back(where + std::string(link_kind_name(l.kind)) +
                             " source must be token-aligned (shift-only or tagger)");
          }
          break;
        case LinkKind::kSubtree:
          if (s.system != SystemKind::kArcStandard) {
            errors.push_back(where + "subtree_links source must be arc-standard");
          }
          if (t.system != SystemKind::kArcStandard) {
            errors.push_back(where + "subtree_links need an arc-standard state for S0/S1");
          }
          break;
        case LinkKind::kSubtreeOfInput:
          if (s.system != SystemKind::kArcStandard) {
            errors.push_back(where + "subtree_of_input source must be arc-standard");
          }
          break;
        default:
          break;
      }
    }
  }
  return errors;
}

// ---- Model -------------------------------------------------------------------

namespace {

int input_fn_dim(const InputFn& in, int emb) {
  switch (in.kind) {
    case InputFnKind::kTokenEmbedding:
    case InputFnKind::kReversedTokenEmbedding:
    case InputFnKind::kPrevOutputEmbedding:
      return emb;
    case InputFnKind::kFeatureTemplates:
      return in.templates * emb;
    case InputFnKind::kEmpty:
      return 0;
  }
  return 0;
}

}  // namespace

Model::Model(PipelineConfig config, Vocab vocab, std::vector<std::string> pos_tags,
             std::vector<std::string> dep_labels, std::uint64_t seed)
    : config_(std::move(config)),
      vocab_(std::move(vocab)),
      pos_tags_(std::move(pos_tags)),
      dep_labels_(std::move(dep_labels)) {
  const std::vector<std::string> errors = validate_pipeline(config_);
  if (!errors.empty()) {
    std::string msg = "invalid pipeline:";
    for (const std::string& e : errors) msg += "\n  " + e;
    throw std::invalid_argument(msg);
  }
  if (pos_tags_.empty()) pos_tags_ = {"X"};
  if (dep_labels_.empty()) dep_labels_ = {"dep"};

  const int emb = config_.embedding_dim;
  std::vector<Parameter*> needs_xavier;
  std::vector<Parameter*> lstm_biases;

  word_emb_ = store_.create("embed/word", vocab_.size(), emb);
  needs_xavier.push_back(word_emb_);

  bool uses_templates = false;
  int max_labels = 1;
  for (const TBRUConfig& t : config_.tbrus) {
    if (t.input.kind == InputFnKind::kFeatureTemplates) uses_templates = true;
    if (t.system == SystemKind::kArcStandard && t.labeled) {
      max_labels = std::max(max_labels, static_cast<int>(dep_labels_.size()));
    }
  }
  if (uses_templates) {
    pos_emb_ = store_.create("embed/pos", static_cast<int>(pos_tags_.size()) + 1, emb);
    label_emb_ = store_.create("embed/label", max_labels + 1, emb);
    word_none_ = store_.create("embed/word_none", emb, 1);
    needs_xavier.push_back(pos_emb_);
    needs_xavier.push_back(label_emb_);
  }

  for (int i = 0; i < static_cast<int>(config_.tbrus.size()); ++i) {
    const TBRUConfig& t = config_.tbrus[i];
    TBRUParams tp;
    tp.system.kind = t.system;
    tp.system.right_to_left = t.right_to_left;
    switch (t.system) {
      case SystemKind::kTagger:
        tp.system.tag_source = t.tag_source;
        tp.system.tags = t.tag_source == TagSource::kPos ? pos_tags_
                                                         : std::vector<std::string>{"keep", "drop"};
        break;
      case SystemKind::kArcStandard:
        tp.system.labels = t.labeled ? dep_labels_ : std::vector<std::string>{"dep"};
        break;
      case SystemKind::kShiftOnly:
        break;
    }

    bool has_all_of = false;
    int slot_no = 0;
    for (const Link& l : t.links) {
      LinkInfo li;
      li.kind = l.kind;
      li.source = l.kind == LinkKind::kPreviousStep ? i : component_index(l.source);
      li.dim = config_.tbrus[li.source].hidden;
      const std::string base = t.name + "/link" + std::to_string(slot_no++);
      switch (l.kind) {
        case LinkKind::kAllOf:
          has_all_of = true;
          if (t.policy == AggPolicy::kAttention) {
            li.W_q = store_.create(base + "/attn_q", t.hidden, t.hidden);
            li.W_k = store_.create(base + "/attn_k", t.hidden, li.dim);
            needs_xavier.push_back(li.W_q);
            needs_xavier.push_back(li.W_k);
          }
          tp.context_dim += li.dim;
          break;
        case LinkKind::kSubtree:
          li.fill0 = store_.create(base + "/s0_fill", li.dim, 1);
          li.fill1 = store_.create(base + "/s1_fill", li.dim, 1);
          break;
        case LinkKind::kTokenSuffix:
          li.fill0 = store_.create(base + "/fill", li.dim, 1);
          break;
        default:
          break;
      }
      tp.links.push_back(li);
    }

    tp.pool_direct = t.policy != AggPolicy::kConcatFixed && !has_all_of;
    if (tp.pool_direct) {
      int dim = -1;
      for (const LinkInfo& li : tp.links) {
        if (dim != -1 && li.dim != dim) {
          throw std::invalid_argument("component " + t.name +
                                      ": pooled links must share one hidden dimension");
        }
        dim = li.dim;
      }
      tp.context_dim = dim;
      if (t.policy == AggPolicy::kAttention) {
        // Projections for attention over the direct link set.
        Parameter* wq = store_.create(t.name + "/attn_q", t.hidden, t.hidden);
        Parameter* wk = store_.create(t.name + "/attn_k", t.hidden, dim);
        needs_xavier.push_back(wq);
        needs_xavier.push_back(wk);
        tp.links.front().W_q = wq;
        tp.links.front().W_k = wk;
      }
    } else {
      for (const LinkInfo& li : tp.links) {
        if (li.kind == LinkKind::kAllOf) continue;
        tp.recurrent_dim += li.kind == LinkKind::kSubtree ? 2 * li.dim : li.dim;
      }
    }

    tp.input_dim = input_fn_dim(t.input, emb);
    const int cell_in = tp.input_dim + tp.context_dim;
    if (t.cell == CellKind::kLstm) {
      tp.W_x = store_.create(t.name + "/W_x", 4 * t.hidden, cell_in);
      tp.W_h = store_.create(t.name + "/W_h", 4 * t.hidden, tp.recurrent_dim);
      tp.b = store_.create(t.name + "/b", 4 * t.hidden, 1);
      needs_xavier.push_back(tp.W_x);
      needs_xavier.push_back(tp.W_h);
      lstm_biases.push_back(tp.b);
    } else {
      int in = cell_in;
      for (std::size_t l = 0; l <= t.mlp_hidden.size(); ++l) {
        const int out = l < t.mlp_hidden.size() ? t.mlp_hidden[l] : t.hidden;
        Parameter* w = store_.create(t.name + "/mlp_W" + std::to_string(l), out, in);
        Parameter* bb = store_.create(t.name + "/mlp_b" + std::to_string(l), out, 1);
        needs_xavier.push_back(w);
        tp.mlp_W.push_back(w);
        tp.mlp_b.push_back(bb);
        in = out;
      }
    }

    tp.h0 = store_.create(t.name + "/h0", t.hidden, 1);
    const int nd = tp.system.num_decisions();
    if (nd > 1 || t.supervised) {
      tp.out_W = store_.create(t.name + "/out_W", nd, t.hidden);
      tp.out_b = store_.create(t.name + "/out_b", nd, 1);
      needs_xavier.push_back(tp.out_W);
    }
    if (t.input.kind == InputFnKind::kPrevOutputEmbedding) {
      tp.decision_emb = store_.create(t.name + "/decision_emb", nd + 1, emb);
      needs_xavier.push_back(tp.decision_emb);
    }

    bool has_prev = false;
    for (const Link& l : t.links) {
      if (l.kind == LinkKind::kPreviousStep) has_prev = true;
    }
    tp.threads_cell = t.cell == CellKind::kLstm &&
                      (has_prev || t.policy == AggPolicy::kAttention);
    tbrus_.push_back(std::move(tp));
  }

  // Deterministic initialization in creation order.
  std::mt19937_64 rng(seed);
  std::set<Parameter*> xavier_set(needs_xavier.begin(), needs_xavier.end());
  for (Parameter* p : store_.all()) {
    if (xavier_set.count(p)) xavier_init(p->value, rng);
  }
  for (Parameter* b : lstm_biases) {
    const Eigen::Index h = b->value.rows() / 4;
    b->value.middleRows(h, h).setConstant(1.0);  // forget gate bias
  }
}

int Model::component_index(const std::string& name) const {
  for (int i = 0; i < static_cast<int>(config_.tbrus.size()); ++i) {
    if (config_.tbrus[i].name == name) return i;
  }
  return -1;
}

std::vector<int> Model::supervised_components() const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(config_.tbrus.size()); ++i) {
    if (config_.tbrus[i].supervised) out.push_back(i);
  }
  return out;
}

const ComponentRun* GlobalGraph::find(int component) const {
  for (const ComponentRun& c : components) {
    if (c.index == component) return &c;
  }
  return nullptr;
}

Tensor Unroll::bind(Parameter* p) {
  auto it = bound_.find(p);
  if (it != bound_.end()) return it->second;
  Tensor t = tape.leaf(p->value);
  bound_.emplace(p, t);
  return t;
}

// ---- input resolution ---------------------------------------------------------

namespace {

int state_input_token(const TransitionState& state) { return input_pointer(state); }

struct FeatureContext {
  Unroll& u;
  const ParserState& s;

  Tensor word_at(int tok) {
    Model& m = u.model();
    if (tok < 1 || tok > s.n) return u.bind(m.word_none());
    return row(u.bind(m.word_emb()), m.vocab().lookup(u.sentence().tokens[tok - 1]));
  }
  Tensor pos_at(int tok) {
    Model& m = u.model();
    const int none = static_cast<int>(m.pos_tags().size());
    int idx = none;
    if (tok >= 1 && tok <= s.n && u.sentence().has_pos()) {
      const auto& tags = m.pos_tags();
      auto it = std::find(tags.begin(), tags.end(), u.sentence().pos[tok - 1]);
      if (it != tags.end()) idx = static_cast<int>(it - tags.begin());
    }
    return row(u.bind(m.pos_emb()), idx);
  }
  Tensor label_to(int child) {
    Model& m = u.model();
    const int none = static_cast<int>(m.label_emb()->value.rows()) - 1;
    int idx = none;
    if (child >= 1) {
      for (const Arc& a : s.arcs) {
        if (a.dep == child) {
          idx = std::min(a.label, none - 1);
          break;
        }
      }
    }
    return row(u.bind(m.label_emb()), idx);
  }
  int stack_tok(int depth) const {
    return depth < static_cast<int>(s.stack.size()) ? s.stack_token(depth) : 0;
  }
  int buffer_tok(int k) const {
    if (s.buffer_empty()) return 0;
    const int t = s.right_to_left ? s.next_token() - k : s.next_token() + k;
    return (t >= 1 && t <= s.n && k < s.n - s.consumed) ? t : 0;
  }
  int leftmost_child(int tok) const {
    int best = 0;
    for (const Arc& a : s.arcs) {
      if (a.head == tok && (best == 0 || a.dep < best)) best = a.dep;
    }
    return best;
  }
  int rightmost_child(int tok) const {
    int best = 0;
    for (const Arc& a : s.arcs) {
      if (a.head == tok && a.dep > best) best = a.dep;
    }
    return best;
  }
};

// Canonical template inventory: words and POS of S0..S2 / B0..B2, then the
// words and arc labels of the outermost children of S0 and S1.
std::vector<Tensor> parser_features(Unroll& u, const ParserState& s, int count) {
  FeatureContext fc{u, s};
  std::vector<Tensor> parts;
  parts.reserve(count);
  const int s0 = fc.stack_tok(0), s1 = fc.stack_tok(1), s2 = fc.stack_tok(2);
  const int b0 = fc.buffer_tok(0), b1 = fc.buffer_tok(1), b2 = fc.buffer_tok(2);
  const int toks[6] = {s0, s1, s2, b0, b1, b2};
  const int kids[4] = {fc.leftmost_child(s0), fc.rightmost_child(s0), fc.leftmost_child(s1),
                       fc.rightmost_child(s1)};
  for (int i = 0; i < count; ++i) {
    if (i < 6) {
      parts.push_back(fc.word_at(toks[i]));
    } else if (i < 12) {
      parts.push_back(fc.pos_at(toks[i - 6]));
    } else if (i < 16) {
      parts.push_back(fc.word_at(kids[i - 12]));
    } else {
      parts.push_back(fc.label_to(kids[i - 16]));
    }
  }
  return parts;
}

Tensor resolve_input(Unroll& u, int comp, const TransitionState& state, int local_index) {
  Model& model = u.model();
  const TBRUConfig& cfg = model.config().tbrus[comp];
  const TBRUParams& tp = model.tbrus()[comp];
  const Sentence& sent = u.sentence();
  const int n = sent.size();
  switch (cfg.input.kind) {
    case InputFnKind::kTokenEmbedding: {
      const int tok = state_input_token(state);
      if (tok < 1 || tok > n) throw std::out_of_range("token index out of range");
      return row(u.bind(model.word_emb()), model.vocab().lookup(sent.tokens[tok - 1]));
    }
    case InputFnKind::kReversedTokenEmbedding: {
      const int tok = n - local_index + 1;
      if (tok < 1 || tok > n) throw std::out_of_range("token index out of range");
      return row(u.bind(model.word_emb()), model.vocab().lookup(sent.tokens[tok - 1]));
    }
    case InputFnKind::kPrevOutputEmbedding: {
      const int start_row = tp.system.num_decisions();
      if (local_index == 1) return row(u.bind(tp.decision_emb), start_row);
      return row(u.bind(tp.decision_emb), u.graph.steps.back().decision);
    }
    case InputFnKind::kFeatureTemplates: {
      return concat(parser_features(u, std::get<ParserState>(state), cfg.input.templates), 0);
    }
    case InputFnKind::kEmpty:
      return u.tape.leaf(Matrix(0, 1));
  }
  throw std::logic_error("resolve_input: bad input kind");
}

int token_step(const ComponentRun& run, int n, int tok) {
  if (run.kind == SystemKind::kShiftOnly && run.right_to_left) {
    return run.first + (n - tok);
  }
  return run.first + tok - 1;
}

}  // namespace

ResolvedLinks resolve_recurrence(const Model& model, const GlobalGraph& graph, int component,
                                 const TransitionState& state) {
  const TBRUParams& tp = model.tbrus()[component];
  const int n = graph.n;
  ResolvedLinks out;
  std::vector<std::optional<int>> slots;

  auto source_run = [&](int src) -> const ComponentRun& {
    const ComponentRun* run = graph.find(src);
    if (run == nullptr) {
      throw std::runtime_error("recurrence references component '" +
                               model.config().tbrus[src].name + "' before it has executed");
    }
    return *run;
  };

  for (const LinkInfo& li : tp.links) {
    switch (li.kind) {
      case LinkKind::kAllOf: {
        const ComponentRun& run = source_run(li.source);
        std::vector<int> pool;
        for (int g = run.first; g <= run.last; ++g) pool.push_back(g);
        out.edges.insert(out.edges.end(), pool.begin(), pool.end());
        out.pools.push_back(std::move(pool));
        break;
      }
      case LinkKind::kPreviousStep: {
        std::optional<int> step;
        if (graph.alpha() >= 1) step = graph.alpha();
        if (step) out.edges.push_back(*step);
        slots.push_back(step);
        break;
      }
      case LinkKind::kFinalStateOf: {
        const int step = source_run(li.source).last;
        out.edges.push_back(step);
        slots.push_back(step);
        break;
      }
      case LinkKind::kInputPointer: {
        const ComponentRun& run = source_run(li.source);
        int step;
        const auto* ps = std::get_if<ParserState>(&state);
        if (ps != nullptr && ps->buffer_empty()) {
          step = run.last;  // exhausted buffer maps to the source's final step
        } else {
          step = token_step(run, n, state_input_token(state));
        }
        out.edges.push_back(step);
        slots.push_back(step);
        break;
      }
      case LinkKind::kTokenSuffix: {
        const ComponentRun& run = source_run(li.source);
        const int tok = state_input_token(state);
        const int step = run.first - 1 + (n - tok);
        std::optional<int> opt;
        if (step >= 1) opt = step;
        if (opt) out.edges.push_back(*opt);
        slots.push_back(opt);
        break;
      }
      case LinkKind::kSubtree: {
        const auto& ps = std::get<ParserState>(state);
        for (int depth = 0; depth < 2; ++depth) {
          std::optional<int> opt;
          if (depth < static_cast<int>(ps.stack.size())) {
            if (li.source == component) {
              opt = subtree_step(ps, depth);
            } else {
              const ComponentRun& run = source_run(li.source);
              opt = run.last_modifier.at(ps.stack_token(depth));
            }
          }
          if (opt) out.edges.push_back(*opt);
          slots.push_back(opt);
        }
        break;
      }
      case LinkKind::kSubtreeOfInput: {
        const ComponentRun& run = source_run(li.source);
        const int tok = state_input_token(state);
        const int step = run.last_modifier.at(tok);
        out.edges.push_back(step);
        slots.push_back(step);
        break;
      }
    }
  }

  if (tp.pool_direct) {
    std::vector<int> pool;
    for (const auto& s : slots) {
      if (s) pool.push_back(*s);
    }
    out.pools.push_back(std::move(pool));
  } else {
    out.slots = std::move(slots);
  }
  return out;
}

// ---- pipeline execution --------------------------------------------------------

namespace {

bool gold_available(const TBRUParams& tp, const Sentence& s) {
  switch (tp.system.kind) {
    case SystemKind::kShiftOnly:
      return true;
    case SystemKind::kTagger:
      return tp.system.tag_source == TagSource::kPos ? s.has_pos() : s.has_keep_drop();
    case SystemKind::kArcStandard:
      return s.has_heads();
  }
  return false;
}

}  // namespace

std::unique_ptr<Unroll> run_pipeline(Model& model, const Sentence& sentence,
                                     const RunOptions& opts) {
  if (sentence.size() < 1) throw std::invalid_argument("run_pipeline: empty sentence");
  auto u = std::make_unique<Unroll>(model, sentence);
  const int n = sentence.size();
  u->graph.n = n;
  const int total = static_cast<int>(model.config().tbrus.size());

  for (int c = 0; c < total; ++c) {
    if (opts.stop_after_target && opts.target >= 0 && c > opts.target) break;
    const TBRUConfig& cfg = model.config().tbrus[c];
    const TBRUParams& tp = model.tbrus()[c];
    const int nd = tp.system.num_decisions();
    const bool is_target = c == opts.target;

    bool force_gold = false;
    if (is_target && opts.teacher_force_target) {
      if (!gold_available(tp, sentence)) {
        throw std::runtime_error("teacher forcing " + cfg.name +
                                 " but the required gold annotation is missing");
      }
      force_gold = true;
    } else if (opts.target >= 0 && c < opts.target && cfg.supervised && opts.upstream_gold &&
               gold_available(tp, sentence)) {
      force_gold = true;
    }

    ComponentRun run;
    run.index = c;
    run.name = cfg.name;
    run.kind = tp.system.kind;
    run.right_to_left = tp.system.right_to_left;
    run.first = u->graph.alpha() + 1;

    TransitionState state = initial_state(tp.system, n);
    const int steps = num_steps(tp.system, n);
    for (int i = 1; i <= steps; ++i) {
      const int global = u->graph.alpha() + 1;
      ResolvedLinks rl = resolve_recurrence(model, u->graph, c, state);

      // Fixed input plus any pooled contexts.
      std::vector<Tensor> m_parts;
      m_parts.push_back(resolve_input(*u, c, state, i));
      Tensor query;
      if (cfg.policy == AggPolicy::kAttention) {
        query = (i > 1) ? u->graph.steps.back().hidden : u->bind(tp.h0);
      }
      std::size_t pool_idx = 0;
      for (const LinkInfo& li : tp.links) {
        const bool pooled = li.kind == LinkKind::kAllOf || tp.pool_direct;
        if (!pooled) continue;
        if (pool_idx >= rl.pools.size()) break;
        const std::vector<int>& pool = rl.pools[pool_idx++];
        std::vector<Tensor> keys;
        keys.reserve(pool.size());
        for (int g : pool) keys.push_back(u->graph.step(g).hidden);
        if (cfg.policy == AggPolicy::kAttention) {
          m_parts.push_back(aggregate_attention(u->bind(li.W_q), u->bind(li.W_k), query, keys));
        } else {
          m_parts.push_back(aggregate_mean(keys));
        }
        if (tp.pool_direct) break;  // the direct pool is a single aggregate
      }
      Tensor m_full = concat(m_parts, 0);

      // Direct recurrent slots, missing ones filled by learned vectors.
      Tensor recurrent;
      if (tp.recurrent_dim > 0) {
        std::vector<Tensor> parts;
        std::size_t slot = 0;
        for (const LinkInfo& li : tp.links) {
          if (li.kind == LinkKind::kAllOf) continue;
          const int arity = li.kind == LinkKind::kSubtree ? 2 : 1;
          for (int a = 0; a < arity; ++a, ++slot) {
            const std::optional<int>& s = rl.slots[slot];
            if (s) {
              parts.push_back(u->graph.step(*s).hidden);
            } else if (li.kind == LinkKind::kPreviousStep) {
              parts.push_back(u->bind(tp.h0));
            } else {
              parts.push_back(u->bind(a == 1 ? li.fill1 : li.fill0));
            }
          }
        }
        recurrent = concat(parts, 0);
      } else {
        recurrent = u->tape.leaf(Matrix(0, 1));
      }

      StepRecord rec;
      rec.component = c;
      rec.local_index = i;
      rec.edges = rl.edges;

      if (cfg.cell == CellKind::kLstm) {
        Tensor c_prev = (tp.threads_cell && i > 1) ? u->graph.steps.back().cell_state
                                                   : u->tape.leaf(Matrix::Zero(cfg.hidden, 1));
        LstmStepResult r = lstm_step(u->bind(tp.W_x), u->bind(tp.W_h), u->bind(tp.b), m_full,
                                     recurrent, c_prev, cfg.hidden);
        rec.hidden = r.h;
        rec.cell_state = r.c;
      } else {
        std::vector<Tensor> ws, bs;
        for (std::size_t l = 0; l < tp.mlp_W.size(); ++l) {
          ws.push_back(u->bind(tp.mlp_W[l]));
          bs.push_back(u->bind(tp.mlp_b[l]));
        }
        rec.hidden = mlp_forward(ws, bs, cfg.activation, m_full);
      }

      rec.allowed = allowed(tp.system, state);
      std::vector<bool> mask(nd, false);
      for (int d : rec.allowed) mask[d] = true;

      if (nd > 1) {
        rec.logits = decision_logits(u->bind(tp.out_W), u->bind(tp.out_b), rec.hidden);
      }
      if (is_target && opts.want_loss && nd > 1) {
        rec.logp = masked_log_softmax(rec.logits, mask);
      }

      int decision;
      if (nd == 1) {
        decision = rec.allowed.front();
      } else if (force_gold) {
        decision = gold_decision(tp.system, state, sentence);
      } else {
        decision = masked_argmax(rec.logits.value(), mask);
      }
      rec.decision = decision;
      state = apply(tp.system, state, decision, global);
      u->graph.steps.push_back(std::move(rec));
    }

    run.last = u->graph.alpha();
    if (const auto* ps = std::get_if<ParserState>(&state)) {
      run.last_modifier = ps->last_modifier_step;
    }
    run.final_state = std::move(state);
    u->graph.components.push_back(std::move(run));
  }
  return u;
}

std::string export_trace(const Model& model, const GlobalGraph& graph, bool include_decisions) {
  std::ostringstream out;
  out << "digraph tbru_trace {\n  rankdir=LR;\n";
  for (int g = 1; g <= graph.alpha(); ++g) {
    const StepRecord& rec = graph.step(g);
    const TBRUParams& tp = model.tbrus()[rec.component];
    std::string label =
        model.config().tbrus[rec.component].name + "/" + std::to_string(rec.local_index);
    if (include_decisions && rec.decision >= 0) {
      label += ": " + tp.system.decision_name(rec.decision);
    }
    std::string escaped;
    for (char ch : label) {
      if (ch == '"' || ch == '\\') escaped.push_back('\\');
      escaped.push_back(ch);
    }
    out << "  s" << g << " [label=\"" << escaped << "\"];\n";
  }
  for (int g = 1; g <= graph.alpha(); ++g) {
    for (int e : graph.step(g).edges) {
      out << "  s" << e << " -> s" << g << ";\n";
    }
  }
  out << "}\n";
  return out.str();
}

}  // namespace tbru
