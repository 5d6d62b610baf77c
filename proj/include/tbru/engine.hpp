// Copyright 2026 The tbru Authors
// SPDX-License-Identifier: Apache-2.0
//
// The unroller. A pipeline is an ordered list of TBRUs (transition system +
// input function + recurrence function + cell); executing it against one
// sentence advances a global step counter, records one hidden vector and one
// decision per step, and wires recurrence edges whose sources are chosen at
// runtime from the discrete state. The result is an acyclic compute graph
// built example by example.

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tbru/cells.hpp"
#include "tbru/data.hpp"
#include "tbru/params.hpp"
#include "tbru/tensor.hpp"
#include "tbru/transition.hpp"

namespace tbru {

// ---- pipeline configuration -------------------------------------------------

enum class InputFnKind {
  kTokenEmbedding,          // embedding of the state's next input token
  kReversedTokenEmbedding,  // embedding of token n - i + 1 at local step i
  kPrevOutputEmbedding,     // embedding of this TBRU's previous decision
  kFeatureTemplates,        // concatenated parser feature embeddings
  kEmpty,                   // zero-length input; recurrences only
};

struct InputFn {
  InputFnKind kind = InputFnKind::kTokenEmbedding;
  int templates = 20;  // feature template count (prefix of the canonical list)
  bool operator==(const InputFn&) const = default;
};

enum class LinkKind {
  kPreviousStep,   // global step alpha - 1 (the learned h0 before step 1)
  kFinalStateOf,   // last step of a named earlier component
  kInputPointer,   // step of the named component aligned with Input(s)
  kTokenSuffix,    // right-to-left source: step holding the suffix after Input(s)
  kSubtree,        // steps of the named parser's last decisions on S0 / S1
  kSubtreeOfInput, // named parser's last decision on token Input(s)
  kAllOf,          // every step of a named component (attention pool)
};

struct Link {
  LinkKind kind = LinkKind::kPreviousStep;
  std::string source;  // component name; empty for previous_step
  bool operator==(const Link&) const = default;
};

struct TBRUConfig {
  std::string name;
  SystemKind system = SystemKind::kShiftOnly;
  bool right_to_left = false;
  TagSource tag_source = TagSource::kNone;  // taggers
  bool labeled = true;                      // arc-standard label set vs 3-action degenerate
  InputFn input;
  std::vector<Link> links;
  CellKind cell = CellKind::kLstm;
  AggPolicy policy = AggPolicy::kConcatFixed;
  int hidden = 64;
  std::vector<int> mlp_hidden = {64};  // hidden layer widths for MLP cells
  Activation activation = Activation::kRelu;
  bool supervised = false;
  double loss_weight = 1.0;

  bool operator==(const TBRUConfig&) const = default;
};

struct PipelineConfig {
  std::string name;
  int embedding_dim = 32;
  std::vector<TBRUConfig> tbrus;

  bool operator==(const PipelineConfig&) const = default;
};

// Static validation: forward references, duplicate names, supervision on
// systems without gold capability, cell/link compatibility. Returns an error
// list; empty means valid. Never throws.
std::vector<std::string> validate_pipeline(const PipelineConfig& config);

// ---- model (configuration bound to parameters) ------------------------------

struct LinkInfo {
  LinkKind kind;
  int source = -1;  // component index; own index for previous_step / self subtree
  int dim = 0;      // hidden dim of the source
  Parameter* fill0 = nullptr;  // learned fill when the slot is missing
  Parameter* fill1 = nullptr;  // second subtree slot (S1)
  Parameter* W_q = nullptr;    // attention projections for kAllOf pools
  Parameter* W_k = nullptr;
};

struct TBRUParams {
  TransitionSystemSpec system;
  // LSTM cell
  Parameter* W_x = nullptr;
  Parameter* W_h = nullptr;
  Parameter* b = nullptr;
  // MLP cell
  std::vector<Parameter*> mlp_W;
  std::vector<Parameter*> mlp_b;

  Parameter* h0 = nullptr;            // initial hidden, fills a missing previous step
  Parameter* out_W = nullptr;         // decision scores w_d
  Parameter* out_b = nullptr;
  Parameter* decision_emb = nullptr;  // (|A|+1) x emb; last row is the start symbol

  std::vector<LinkInfo> links;
  int input_dim = 0;      // fixed input m(s)
  int context_dim = 0;    // pooled (attention / mean) contexts joining m(s)
  int recurrent_dim = 0;  // concatenated direct slots
  bool threads_cell = false;  // LSTM c carried along the component's own chain
  bool pool_direct = false;   // mean/attention applied to the direct links
};

class Model {
 public:
  Model(PipelineConfig config, Vocab vocab, std::vector<std::string> pos_tags,
        std::vector<std::string> dep_labels, std::uint64_t seed);

  const PipelineConfig& config() const { return config_; }
  const Vocab& vocab() const { return vocab_; }
  const std::vector<std::string>& pos_tags() const { return pos_tags_; }
  const std::vector<std::string>& dep_labels() const { return dep_labels_; }

  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  std::vector<TBRUParams>& tbrus() { return tbrus_; }
  const std::vector<TBRUParams>& tbrus() const { return tbrus_; }

  Parameter* word_emb() const { return word_emb_; }
  Parameter* pos_emb() const { return pos_emb_; }
  Parameter* label_emb() const { return label_emb_; }
  Parameter* word_none() const { return word_none_; }

  int component_index(const std::string& name) const;  // -1 when absent
  // Supervised component indices in pipeline order (the trainable tasks).
  std::vector<int> supervised_components() const;

 private:
  PipelineConfig config_;
  Vocab vocab_;
  std::vector<std::string> pos_tags_;
  std::vector<std::string> dep_labels_;
  ParamStore store_;
  Parameter* word_emb_ = nullptr;
  Parameter* pos_emb_ = nullptr;
  Parameter* label_emb_ = nullptr;
  Parameter* word_none_ = nullptr;
  std::vector<TBRUParams> tbrus_;
};

// ---- unrolled execution record ----------------------------------------------

struct StepRecord {
  int component = -1;
  int local_index = 0;  // 1-based within the component
  int decision = -1;
  std::vector<int> edges;    // recurrence sources, 1-based global steps
  std::vector<int> allowed;  // allowed decision indices at this state
  Tensor hidden;
  Tensor cell_state;  // LSTM c (invalid for MLP cells)
  Tensor logits;      // invalid when the system has a single decision
  Tensor logp;        // masked log-softmax; only built for loss-bearing steps
};

struct ComponentRun {
  int index = -1;
  std::string name;
  int first = 0, last = 0;  // 1-based inclusive global-step span
  SystemKind kind = SystemKind::kShiftOnly;
  bool right_to_left = false;
  std::vector<int> last_modifier;  // parsers: final token -> step table
  TransitionState final_state;
};

struct GlobalGraph {
  int n = 0;  // sentence length
  std::vector<StepRecord> steps;
  std::vector<ComponentRun> components;

  int alpha() const { return static_cast<int>(steps.size()); }
  const StepRecord& step(int g) const { return steps.at(g - 1); }
  const ComponentRun* find(int component) const;
};

struct RunOptions {
  int target = -1;                  // component index driving the loss; -1 = none
  bool teacher_force_target = false;
  bool upstream_gold = true;        // supervised upstream components follow gold
  bool stop_after_target = false;
  bool want_loss = false;           // record log-probabilities for the target
};

// One unroll: the tape, the graph, and the parameter bindings made on it.
class Unroll {
 public:
  Unroll(Model& model, const Sentence& sentence) : model_(model), sentence_(sentence) {}

  Tape tape;
  GlobalGraph graph;

  Model& model() { return model_; }
  const Sentence& sentence() const { return sentence_; }
  // Places the parameter on the tape on first use.
  Tensor bind(Parameter* p);
  const std::unordered_map<Parameter*, Tensor>& bindings() const { return bound_; }

 private:
  Model& model_;
  const Sentence& sentence_;
  std::unordered_map<Parameter*, Tensor> bound_;
};

struct ResolvedLinks {
  std::vector<int> edges;
  std::vector<std::optional<int>> slots;   // direct slots; nullopt = missing
  std::vector<std::vector<int>> pools;     // one per kAllOf link (or the direct pool)
};

// Recurrence resolution for the state about to take its step (exposed for
// structural tests; run_pipeline calls it internally).
ResolvedLinks resolve_recurrence(const Model& model, const GlobalGraph& graph, int component,
                                 const TransitionState& state);

// Executes the pipeline against one sentence.
std::unique_ptr<Unroll> run_pipeline(Model& model, const Sentence& sentence,
                                     const RunOptions& opts = {});

// Graphviz rendering of the unrolled structure: one node per global step
// (named s<step>), one directed edge per recurrence link, deterministic
// ordering.
std::string export_trace(const Model& model, const GlobalGraph& graph,
                         bool include_decisions = true);

}  // namespace tbru
