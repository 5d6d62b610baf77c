// Copyright 2026 The tbru Authors
// SPDX-License-Identifier: Apache-2.0
//
// Locally normalized log-likelihood training over unrolled pipelines:
// teacher-forced loss, momentum SGD with gradient clipping, the multi-task
// sampling schedule, evaluation metrics, and checkpointing.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "tbru/engine.hpp"

namespace tbru {

struct TrainConfig {
  double lr = 0.05;
  double momentum = 0.9;
  double clip_norm = 5.0;
  int batch_size = 4;
  int max_steps = 1000;
  int workers = 1;
  std::vector<double> task_dist;    // over supervised components; empty = uniform
  std::vector<int> pretrain_steps;  // deterministic per-task windows; empty = none
  bool upstream_gold = true;        // upstream components follow gold when available
  std::uint64_t seed = 1;
};

// -1 marks a metric that does not apply to the task.
struct TaskMetrics {
  int component = -1;
  std::string task;
  double loss = -1.0;
  double acc = -1.0;       // tag accuracy
  double uas = -1.0;
  double las = -1.0;
  double f1 = -1.0;        // per-token F1 on the keep class
  double sent_acc = -1.0;  // exact label-sequence match
};

struct Metrics {
  std::vector<TaskMetrics> tasks;
};

// Negative sum of gold-decision log-probabilities recorded for the target
// component (the graph must have been produced teacher-forced with
// want_loss). The overload taking `gold` additionally checks the sequence
// against the recorded steps.
Tensor pipeline_loss(Unroll& unroll, int target);
Tensor pipeline_loss(Unroll& unroll, int target, const std::vector<int>& gold);

// Task index for a global step: the deterministic pretraining windows first
// (in task order), then samples from the task distribution.
int multitask_schedule(const std::vector<int>& pretrain_steps, const std::vector<double>& dist,
                       std::mt19937_64& rng, int step);

// Greedy decoding over the corpus; one row per supervised component. Losses
// are teacher-forced per-sentence means.
Metrics evaluate(Model& model, const Corpus& corpus, bool upstream_gold = true);

// Whether `sentence` carries the gold annotation component `comp` trains on.
bool component_gold_available(const Model& model, int comp, const Sentence& sentence);

struct Checkpoint {
  std::string pipeline_text;
  Vocab vocab;
  std::vector<std::string> pos_tags, dep_labels;
  int step = 0;
  std::string rng_state;
  // name, value, momentum
  std::vector<std::tuple<std::string, Matrix, Matrix>> params;
};

void write_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint read_checkpoint(const std::string& path);
// Bit-exact restore into an existing store; throws on name/shape mismatch.
void apply_checkpoint_params(const Checkpoint& ckpt, ParamStore& store);

class Trainer {
 public:
  Trainer(Model& model, const Corpus& train, TrainConfig config);

  // One sampled-task batch step: averaged gradients, clipping, classical
  // momentum update. Returns the task row with the batch's mean loss.
  TaskMetrics train_step();

  int step() const { return step_; }
  const std::vector<int>& tasks() const { return tasks_; }
  std::mt19937_64& rng() { return rng_; }
  Model& model() { return model_; }

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);

 private:
  Model& model_;
  const Corpus& train_;
  TrainConfig config_;
  int step_ = 0;
  std::mt19937_64 rng_;
  std::vector<int> tasks_;                  // supervised component indices
  std::vector<std::vector<int>> eligible_;  // per task: usable sentence indices
};

}  // namespace tbru
