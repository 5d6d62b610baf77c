// Copyright 2026 The tbru Authors
// SPDX-License-Identifier: Apache-2.0

#include "tbru/training.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "tbru/pipelines.hpp"

namespace tbru {

Tensor pipeline_loss(Unroll& u, int target) {
  std::vector<int> gold;
  for (const StepRecord& rec : u.graph.steps) {
    if (rec.component == target) gold.push_back(rec.decision);
  }
  return pipeline_loss(u, target, gold);
}

Tensor pipeline_loss(Unroll& u, int target, const std::vector<int>& gold) {
  std::vector<const StepRecord*> steps;
  for (const StepRecord& rec : u.graph.steps) {
    if (rec.component == target) steps.push_back(&rec);
  }
  if (steps.empty()) throw std::invalid_argument("pipeline_loss: target component did not run");
  if (gold.size() != steps.size()) {
    throw std::invalid_argument("pipeline_loss: gold sequence length " +
                                std::to_string(gold.size()) + " != " +
                                std::to_string(steps.size()) + " steps");
  }
  Tensor total;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (!steps[i]->logp.valid()) {
      throw std::logic_error("pipeline_loss: run the pipeline with want_loss");
    }
    if (gold[i] != steps[i]->decision) {
      throw std::invalid_argument("pipeline_loss: gold decision differs from the forced one");
    }
    Tensor term = pick(steps[i]->logp, gold[i]);
    total = i == 0 ? term : add(total, term);
  }
  return scale(total, -1.0);
}

int multitask_schedule(const std::vector<int>& pretrain_steps, const std::vector<double>& dist,
                       std::mt19937_64& rng, int step) {
  if (step < 0) throw std::invalid_argument("multitask_schedule: negative step");
  int window_end = 0;
  for (std::size_t t = 0; t < pretrain_steps.size(); ++t) {
    window_end += pretrain_steps[t];
    if (step < window_end) return static_cast<int>(t);
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  double acc = 0.0;
  for (std::size_t t = 0; t < dist.size(); ++t) {
    acc += dist[t];
    if (u < acc) return static_cast<int>(t);
  }
  return static_cast<int>(dist.size()) - 1;
}

bool component_gold_available(const Model& model, int comp, const Sentence& s) {
  const TransitionSystemSpec& sys = model.tbrus()[comp].system;
  switch (sys.kind) {
    case SystemKind::kShiftOnly:
      return true;
    case SystemKind::kTagger:
      return sys.tag_source == TagSource::kPos ? s.has_pos() : s.has_keep_drop();
    case SystemKind::kArcStandard:
      return s.has_heads();
  }
  return false;
}

// ---- evaluation ---------------------------------------------------------------

namespace {

struct TaskAccum {
  long correct_tags = 0, total_tags = 0;
  long correct_heads = 0, correct_labeled = 0, total_tokens = 0;
  long tp = 0, fp = 0, fn = 0;
  long exact_sentences = 0, sentences = 0;
  double loss_sum = 0.0;
  bool is_keepdrop = false;
  bool is_parser = false;
};

std::vector<int> predicted_heads(const ParserState& ps, std::vector<int>* labels_out) {
  std::vector<int> heads(ps.n);
  std::vector<int> labels(ps.n, -1);
  for (int i = 1; i <= ps.n; ++i) heads[i - 1] = i;
  for (const Arc& a : ps.arcs) {
    heads[a.dep - 1] = a.head;
    labels[a.dep - 1] = a.label;
  }
  if (labels_out) *labels_out = labels;
  return heads;
}

}  // namespace

Metrics evaluate(Model& model, const Corpus& corpus, bool upstream_gold) {
  if (corpus.sentences.empty()) throw std::runtime_error("evaluate: empty corpus");
  const std::vector<int> comps = model.supervised_components();
  if (comps.empty()) throw std::runtime_error("evaluate: pipeline has no supervised components");
  for (int comp : comps) {
    for (const Sentence& s : corpus.sentences) {
      if (!component_gold_available(model, comp, s)) {
        throw std::runtime_error("evaluate: corpus lacks gold annotation for component " +
                                 model.config().tbrus[comp].name);
      }
    }
  }

  std::vector<TaskAccum> acc(comps.size());
  for (std::size_t t = 0; t < comps.size(); ++t) {
    const TransitionSystemSpec& sys = model.tbrus()[comps[t]].system;
    acc[t].is_parser = sys.kind == SystemKind::kArcStandard;
    acc[t].is_keepdrop = sys.kind == SystemKind::kTagger &&
                         sys.tag_source == TagSource::kKeepDrop;
  }

  for (const Sentence& s : corpus.sentences) {
    auto greedy = run_pipeline(model, s, RunOptions{});
    for (std::size_t t = 0; t < comps.size(); ++t) {
      const int comp = comps[t];
      const TransitionSystemSpec& sys = model.tbrus()[comp].system;
      const ComponentRun* run = greedy->graph.find(comp);
      TaskAccum& a = acc[t];
      ++a.sentences;

      if (sys.kind == SystemKind::kTagger) {
        const auto& st = std::get<TaggerState>(run->final_state);
        bool exact = true;
        for (int i = 0; i < s.size(); ++i) {
          int gold;
          if (sys.tag_source == TagSource::kPos) {
            gold = sys.tag_index(s.pos[i]);
          } else {
            gold = s.keep_drop[i] ? sys.tag_index("keep") : sys.tag_index("drop");
          }
          const int pred = st.emitted[i];
          ++a.total_tags;
          if (pred == gold) ++a.correct_tags; else exact = false;
          if (a.is_keepdrop) {
            const bool pk = sys.tags[pred] == "keep";
            const bool gk = s.keep_drop[i] != 0;
            if (pk && gk) ++a.tp;
            if (pk && !gk) ++a.fp;
            if (!pk && gk) ++a.fn;
          }
        }
        if (exact) ++a.exact_sentences;
      } else if (sys.kind == SystemKind::kArcStandard) {
        const auto& ps = std::get<ParserState>(run->final_state);
        std::vector<int> pred_labels;
        const std::vector<int> pred = predicted_heads(ps, &pred_labels);
        for (int i = 0; i < s.size(); ++i) {
          ++a.total_tokens;
          if (pred[i] != s.heads[i]) continue;
          ++a.correct_heads;
          if (s.heads[i] == i + 1) {
            ++a.correct_labeled;  // root: no label to compare
          } else if (pred_labels[i] >= 0 && sys.labels[pred_labels[i]] == s.labels[i]) {
            ++a.correct_labeled;
          }
        }
      }

      // Teacher-forced loss under gold prefixes.
      RunOptions lo;
      lo.target = comp;
      lo.teacher_force_target = true;
      lo.upstream_gold = upstream_gold;
      lo.stop_after_target = true;
      lo.want_loss = true;
      auto forced = run_pipeline(model, s, lo);
      a.loss_sum += pipeline_loss(*forced, comp).scalar();
    }
  }

  Metrics out;
  for (std::size_t t = 0; t < comps.size(); ++t) {
    const TaskAccum& a = acc[t];
    TaskMetrics m;
    m.component = comps[t];
    m.task = model.config().tbrus[comps[t]].name;
    m.loss = a.loss_sum / static_cast<double>(a.sentences);
    if (a.total_tags > 0) {
      m.acc = static_cast<double>(a.correct_tags) / static_cast<double>(a.total_tags);
      m.sent_acc = static_cast<double>(a.exact_sentences) / static_cast<double>(a.sentences);
    }
    if (a.is_keepdrop) {
      const double prec = a.tp + a.fp > 0 ? static_cast<double>(a.tp) / (a.tp + a.fp) : 0.0;
      const double rec = a.tp + a.fn > 0 ? static_cast<double>(a.tp) / (a.tp + a.fn) : 0.0;
      m.f1 = prec + rec > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    }
    if (a.is_parser && a.total_tokens > 0) {
      m.uas = static_cast<double>(a.correct_heads) / static_cast<double>(a.total_tokens);
      m.las = static_cast<double>(a.correct_labeled) / static_cast<double>(a.total_tokens);
    }
    out.tasks.push_back(std::move(m));
  }
  return out;
}

// ---- checkpoint io --------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'T', 'B', 'R', 'U', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void write_matrix(std::ostream& out, const Matrix& m) {
  write_u64(out, static_cast<std::uint64_t>(m.rows()));
  write_u64(out, static_cast<std::uint64_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
}
std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::string read_string(std::istream& in) {
  const std::uint64_t len = read_u64(in);
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  return s;
}
Matrix read_matrix(std::istream& in) {
  const auto rows = static_cast<Eigen::Index>(read_u64(in));
  const auto cols = static_cast<Eigen::Index>(read_u64(in));
  Matrix m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
  return m;
}

void write_string_list(std::ostream& out, const std::vector<std::string>& items) {
  write_u64(out, items.size());
  for (const std::string& s : items) write_string(out, s);
}
std::vector<std::string> read_string_list(std::istream& in) {
  const std::uint64_t count = read_u64(in);
  std::vector<std::string> items;
  items.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) items.push_back(read_string(in));
  return items;
}

}  // namespace

void write_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, kVersion);
  write_u64(out, static_cast<std::uint64_t>(ckpt.step));
  write_string(out, ckpt.rng_state);
  write_string(out, ckpt.pipeline_text);
  write_string_list(out, ckpt.vocab.id_to_token);
  write_string_list(out, ckpt.pos_tags);
  write_string_list(out, ckpt.dep_labels);
  write_u64(out, ckpt.params.size());
  for (const auto& [name, value, momentum] : ckpt.params) {
    write_string(out, name);
    write_matrix(out, value);
    write_matrix(out, momentum);
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::string(magic, 8) != std::string(kMagic, 8)) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  const std::uint32_t version = read_u32(in);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint version mismatch: " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.step = static_cast<int>(read_u64(in));
  ckpt.rng_state = read_string(in);
  ckpt.pipeline_text = read_string(in);
  ckpt.vocab.id_to_token = read_string_list(in);
  for (int i = 0; i < ckpt.vocab.size(); ++i) {
    ckpt.vocab.token_to_id[ckpt.vocab.id_to_token[i]] = i;
  }
  ckpt.pos_tags = read_string_list(in);
  ckpt.dep_labels = read_string_list(in);
  const std::uint64_t count = read_u64(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = read_string(in);
    Matrix value = read_matrix(in);
    Matrix momentum = read_matrix(in);
    ckpt.params.emplace_back(std::move(name), std::move(value), std::move(momentum));
  }
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  return ckpt;
}

void apply_checkpoint_params(const Checkpoint& ckpt, ParamStore& store) {
  if (ckpt.params.size() != store.all().size()) {
    throw std::runtime_error("checkpoint/pipeline mismatch: " + std::to_string(ckpt.params.size()) +
                             " vs " + std::to_string(store.all().size()) + " parameters");
  }
  for (const auto& [name, value, momentum] : ckpt.params) {
    if (!store.has(name)) {
      throw std::runtime_error("checkpoint/pipeline mismatch: unknown parameter " + name);
    }
    Parameter* p = store.get(name);
    if (p->value.rows() != value.rows() || p->value.cols() != value.cols()) {
      throw std::runtime_error("checkpoint/pipeline shape mismatch for " + name);
    }
    p->value = value;
    p->momentum = momentum;
  }
}

// ---- trainer ---------------------------------------------------------------------

Trainer::Trainer(Model& model, const Corpus& train, TrainConfig config)
    : model_(model), train_(train), config_(std::move(config)), rng_(config_.seed) {
  tasks_ = model_.supervised_components();
  if (tasks_.empty()) throw std::invalid_argument("Trainer: pipeline has no supervised components");
  if (config_.task_dist.empty()) {
    config_.task_dist.assign(tasks_.size(), 1.0 / static_cast<double>(tasks_.size()));
  }
  if (config_.task_dist.size() != tasks_.size()) {
    throw std::invalid_argument("Trainer: task distribution size != number of supervised tasks");
  }
  const double total = std::accumulate(config_.task_dist.begin(), config_.task_dist.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-6) {
    throw std::invalid_argument("Trainer: task distribution must sum to 1");
  }
  if (config_.pretrain_steps.empty()) config_.pretrain_steps.assign(tasks_.size(), 0);
  if (config_.pretrain_steps.size() != tasks_.size()) {
    throw std::invalid_argument("Trainer: pretrain step list size != number of supervised tasks");
  }
  for (int ps : config_.pretrain_steps) {
    if (ps < 0) throw std::invalid_argument("Trainer: negative pretraining step count");
  }
  if (config_.batch_size < 1) throw std::invalid_argument("Trainer: batch size must be >= 1");

  eligible_.resize(tasks_.size());
  for (std::size_t t = 0; t < tasks_.size(); ++t) {
    for (int i = 0; i < train_.size(); ++i) {
      if (component_gold_available(model_, tasks_[t], train_.sentences[i])) {
        eligible_[t].push_back(i);
      }
    }
    if (eligible_[t].empty()) {
      throw std::invalid_argument("Trainer: no gold data for task " +
                                  model_.config().tbrus[tasks_[t]].name);
    }
  }
}

TaskMetrics Trainer::train_step() {
  const int task = multitask_schedule(config_.pretrain_steps, config_.task_dist, rng_, step_);
  const int comp = tasks_[task];
  const std::vector<int>& pool = eligible_[task];
  std::uniform_int_distribution<int> pick(0, static_cast<int>(pool.size()) - 1);
  std::vector<int> batch(config_.batch_size);
  for (int& b : batch) b = pool[pick(rng_)];

  const double weight = model_.config().tbrus[comp].loss_weight;
  std::vector<std::unordered_map<Parameter*, Matrix>> grads(batch.size());
  std::vector<double> losses(batch.size(), 0.0);
  std::vector<std::exception_ptr> errors(batch.size());

  auto run_example = [&](std::size_t slot) {
    try {
      const Sentence& s = train_.sentences[batch[slot]];
      RunOptions opts;
      opts.target = comp;
      opts.teacher_force_target = true;
      opts.upstream_gold = config_.upstream_gold;
      opts.stop_after_target = true;
      opts.want_loss = true;
      auto u = run_pipeline(model_, s, opts);
      Tensor loss = pipeline_loss(*u, comp);
      if (weight != 1.0) loss = scale(loss, weight);
      losses[slot] = loss.scalar();
      u->tape.backward(loss);
      for (const auto& [param, tensor] : u->bindings()) {
        grads[slot][param] = u->tape.grad(tensor.node);
      }
    } catch (...) {
      errors[slot] = std::current_exception();
    }
  };

  const int workers = std::max(1, std::min<int>(config_.workers, static_cast<int>(batch.size())));
  if (workers == 1) {
    for (std::size_t slot = 0; slot < batch.size(); ++slot) run_example(slot);
  } else {
    std::vector<std::thread> pool_threads;
    for (int w = 0; w < workers; ++w) {
      pool_threads.emplace_back([&, w]() {
        for (std::size_t slot = static_cast<std::size_t>(w); slot < batch.size();
             slot += static_cast<std::size_t>(workers)) {
          run_example(slot);
        }
      });
    }
    for (std::thread& th : pool_threads) th.join();
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  // Deterministic reduction: slot order, then parameter creation order.
  model_.store().zero_grads();
  for (std::size_t slot = 0; slot < batch.size(); ++slot) {
    for (Parameter* p : model_.store().all()) {
      auto it = grads[slot].find(p);
      if (it != grads[slot].end()) p->grad += it->second;
    }
  }
  double mean_loss = 0.0;
  for (double l : losses) mean_loss += l;
  mean_loss /= static_cast<double>(batch.size());
  if (!std::isfinite(mean_loss)) {
    throw std::runtime_error("train_step " + std::to_string(step_) + " on task " +
                             model_.config().tbrus[comp].name + ": non-finite loss");
  }

  const double inv = 1.0 / static_cast<double>(batch.size());
  double sq_norm = 0.0;
  for (Parameter* p : model_.store().all()) {
    p->grad *= inv;
    sq_norm += p->grad.squaredNorm();
  }
  const double norm = std::sqrt(sq_norm);
  const double clip = config_.clip_norm > 0 && norm > config_.clip_norm
                          ? config_.clip_norm / norm
                          : 1.0;
  for (Parameter* p : model_.store().all()) {
    p->momentum = config_.momentum * p->momentum + clip * p->grad;
    p->value -= config_.lr * p->momentum;
  }

  ++step_;
  TaskMetrics m;
  m.component = comp;
  m.task = model_.config().tbrus[comp].name;
  m.loss = mean_loss;
  return m;
}

void Trainer::save_checkpoint(const std::string& path) const {
  Checkpoint ckpt;
  ckpt.pipeline_text = serialize_pipeline_config(model_.config());
  ckpt.vocab = model_.vocab();
  ckpt.pos_tags = model_.pos_tags();
  ckpt.dep_labels = model_.dep_labels();
  ckpt.step = step_;
  std::ostringstream rng_text;
  rng_text << rng_;
  ckpt.rng_state = rng_text.str();
  for (const Parameter* p : model_.store().all()) {
    ckpt.params.emplace_back(p->name, p->value, p->momentum);
  }
  write_checkpoint(ckpt, path);
}

void Trainer::load_checkpoint(const std::string& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  apply_checkpoint_params(ckpt, model_.store());
  step_ = ckpt.step;
  std::istringstream rng_text(ckpt.rng_state);
  rng_text >> rng_;
  if (!rng_text) throw std::runtime_error("checkpoint rng state is corrupt");
}

}  // namespace tbru
