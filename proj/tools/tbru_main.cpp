// Copyright 2026 The tbru Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point: train, eval, trace, gen-data, gradcheck, presets.
// Machine-parseable records go to stdout (one JSON object per line);
// human-readable progress goes to stderr. Exit codes: 0 success, 1 usage
// error, 2 runtime failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "tbru/data.hpp"
#include "tbru/engine.hpp"
#include "tbru/gradcheck.hpp"
#include "tbru/pipelines.hpp"
#include "tbru/training.hpp"

namespace {

using nlohmann::json;

json metrics_json(const tbru::TaskMetrics& m) {
  json j;
  j["task"] = m.task;
  j["loss"] = m.loss;
  j["uas"] = m.uas < 0 ? json() : json(m.uas);
  j["las"] = m.las < 0 ? json() : json(m.las);
  j["acc"] = m.acc < 0 ? json() : json(m.acc);
  j["f1"] = m.f1 < 0 ? json() : json(m.f1);
  j["sent_acc"] = m.sent_acc < 0 ? json() : json(m.sent_acc);
  return j;
}

std::vector<double> parse_dist(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

// Model construction shared by train/eval/trace: vocabularies either come
// from a corpus or from a checkpoint.
tbru::Model model_from_corpus(const tbru::PipelineConfig& config, const tbru::Corpus& corpus,
                              int min_count, std::uint64_t seed) {
  return tbru::Model(config, tbru::build_vocab(corpus, min_count),
                     tbru::collect_pos_tags(corpus), tbru::collect_dep_labels(corpus), seed);
}

tbru::Model model_from_checkpoint(const tbru::PipelineConfig& config,
                                  const tbru::Checkpoint& ckpt, std::uint64_t seed) {
  tbru::Model model(config, ckpt.vocab, ckpt.pos_tags, ckpt.dep_labels, seed);
  tbru::apply_checkpoint_params(ckpt, model.store());
  return model;
}

int cmd_train(const std::string& pipeline, const std::string& train_path,
              const std::string& dev_path, int steps, std::uint64_t seed,
              const std::string& out_path, const std::string& task_dist,
              const std::string& pretrain, const tbru::PresetDims& dims, double lr,
              double momentum, double clip, int batch, int eval_every, int workers,
              bool upstream_predicted, int min_count, const std::string& metrics_path) {
  tbru::PipelineConfig config = tbru::load_pipeline(pipeline, dims);
  tbru::Corpus train = tbru::read_conll(train_path);
  if (train.skipped_nonprojective > 0) {
    std::cerr << "warning: skipped " << train.skipped_nonprojective
              << " non-projective sentences in " << train_path << "\n";
  }
  if (train.sentences.empty()) throw std::runtime_error("training corpus is empty");
  tbru::Corpus dev;
  if (!dev_path.empty()) dev = tbru::read_conll(dev_path);

  tbru::Model model = model_from_corpus(config, train, min_count, seed);
  tbru::TrainConfig tc;
  tc.lr = lr;
  tc.momentum = momentum;
  tc.clip_norm = clip;
  tc.batch_size = batch;
  tc.max_steps = steps;
  tc.workers = workers;
  tc.seed = seed;
  tc.upstream_gold = !upstream_predicted;
  if (!task_dist.empty()) tc.task_dist = parse_dist(task_dist);
  if (!pretrain.empty()) tc.pretrain_steps = parse_int_list(pretrain);
  tbru::Trainer trainer(model, train, tc);

  std::ofstream metrics_file;
  if (!metrics_path.empty()) {
    metrics_file.open(metrics_path);
    if (!metrics_file) throw std::runtime_error("cannot open " + metrics_path);
  }
  auto emit = [&](const json& j) {
    const std::string line = j.dump();
    std::cout << line << "\n";
    if (metrics_file.is_open()) metrics_file << line << "\n";
  };
  auto emit_eval = [&](tbru::Corpus& corpus, const char* split) {
    tbru::Metrics m = tbru::evaluate(model, corpus, tc.upstream_gold);
    for (const tbru::TaskMetrics& tm : m.tasks) {
      json j = metrics_json(tm);
      j["step"] = trainer.step();
      j["split"] = split;
      j["upstream"] = tc.upstream_gold ? "gold" : "predicted";
      emit(j);
    }
  };

  double running = 0.0;
  int running_n = 0;
  for (int s = 0; s < steps; ++s) {
    tbru::TaskMetrics m = trainer.train_step();
    running += m.loss;
    ++running_n;
    if (eval_every > 0 && trainer.step() % eval_every == 0) {
      std::cerr << "step " << trainer.step() << " task " << m.task << " mean-loss "
                << running / running_n << "\n";
      running = 0.0;
      running_n = 0;
      if (!dev.sentences.empty()) emit_eval(dev, "dev");
    }
  }
  emit_eval(train, "train");
  if (!dev.sentences.empty()) emit_eval(dev, "dev");
  if (!out_path.empty()) {
    trainer.save_checkpoint(out_path);
    std::cerr << "checkpoint written to " << out_path << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& pipeline, const std::string& ckpt_path, const std::string& data,
             const tbru::PresetDims& dims) {
  tbru::Checkpoint ckpt = tbru::read_checkpoint(ckpt_path);
  tbru::PipelineConfig config = tbru::load_pipeline(pipeline, dims);
  tbru::Model model = model_from_checkpoint(config, ckpt, /*seed=*/1);
  tbru::Corpus corpus = tbru::read_conll(data);
  tbru::Metrics m = tbru::evaluate(model, corpus);
  for (const tbru::TaskMetrics& tm : m.tasks) {
    json j = metrics_json(tm);
    j["step"] = ckpt.step;
    j["split"] = "eval";
    std::cout << j.dump() << "\n";
  }
  return 0;
}

int cmd_trace(const std::string& pipeline, const std::string& ckpt_path,
              const std::string& sentence_text, const std::string& format,
              const tbru::PresetDims& dims) {
  if (format != "dot") throw CLI::ValidationError("--format", "only 'dot' is supported");
  std::istringstream ss(sentence_text);
  tbru::Sentence sentence;
  std::string tok;
  while (ss >> tok) sentence.tokens.push_back(tok);
  if (sentence.tokens.empty()) throw std::runtime_error("empty --sentence");

  tbru::PipelineConfig config = tbru::load_pipeline(pipeline, dims);
  if (!ckpt_path.empty()) {
    tbru::Checkpoint ckpt = tbru::read_checkpoint(ckpt_path);
    tbru::Model model = model_from_checkpoint(config, ckpt, 1);
    auto u = tbru::run_pipeline(model, sentence);
    std::cout << tbru::export_trace(model, u->graph, /*include_decisions=*/true);
    return 0;
  }
  tbru::Corpus tiny;
  tiny.sentences.push_back(sentence);
  tbru::Model model = model_from_corpus(config, tiny, 1, /*seed=*/1);
  auto u = tbru::run_pipeline(model, sentence);
  std::cout << tbru::export_trace(model, u->graph, /*include_decisions=*/false);
  return 0;
}

int cmd_gen_data(const std::string& kind, const std::string& out, int count, int max_len,
                 std::uint64_t seed) {
  tbru::Corpus corpus;
  if (kind == "trees") {
    corpus = tbru::gen_synthetic_trees(count, max_len, seed);
  } else if (kind == "compression") {
    corpus = tbru::gen_synthetic_compression(count, seed);
  } else {
    throw CLI::ValidationError("--kind", "expected trees|compression");
  }
  tbru::write_conll(corpus, out);
  std::cerr << "wrote " << corpus.size() << " sentences to " << out << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& pipeline, int len, double tol, std::uint64_t seed,
                  bool corrupt) {
  // Gradient correctness is dimension-independent; small dimensions keep the
  // central-difference sweep fast.
  tbru::PresetDims dims{4, 5};
  tbru::PipelineConfig config = tbru::load_pipeline(pipeline, dims);

  tbru::Corpus pool = tbru::gen_synthetic_compression(512, seed);
  tbru::Sentence sentence;
  bool found = false;
  for (const tbru::Sentence& s : pool.sentences) {
    if (s.size() == len) {
      sentence = s;
      found = true;
      break;
    }
  }
  if (!found) throw std::runtime_error("no synthetic sentence of length " + std::to_string(len));

  tbru::Model model = model_from_corpus(config, pool, 1, seed);
  const std::vector<int> tasks = model.supervised_components();
  if (tasks.empty()) throw std::runtime_error("pipeline has no supervised components");

  bool all_ok = true;
  for (int comp : tasks) {
    auto f = [&](bool accumulate) {
      tbru::RunOptions opts;
      opts.target = comp;
      opts.teacher_force_target = true;
      opts.upstream_gold = true;
      opts.stop_after_target = true;
      opts.want_loss = true;
      auto u = tbru::run_pipeline(model, sentence, opts);
      tbru::Tensor loss = tbru::pipeline_loss(*u, comp);
      const double value = loss.scalar();
      if (accumulate) {
        u->tape.backward(loss);
        for (const auto& [param, tensor] : u->bindings()) {
          param->grad += u->tape.grad(tensor.node);
        }
      }
      return value;
    };
    std::function<void()> hook;
    if (corrupt) {
      hook = [&]() {
        tbru::Parameter* first = model.store().all().front();
        if (first->grad.size() > 0) first->grad(0, 0) += 1e-2;
      };
    }
    tbru::GradCheckReport report = tbru::finite_diff_check(model.store(), f, 1e-5, hook);
    const std::string task = model.config().tbrus[comp].name;
    std::fprintf(stderr, "%-28s %-30s max-rel-err\n", "parameter", ("(task " + task + ")").c_str());
    for (const tbru::GradCheckEntry& e : report.entries) {
      std::fprintf(stderr, "%-59s %.3e\n", e.param.c_str(), e.max_rel_err);
    }
    json j;
    j["task"] = task;
    j["worst_param"] = report.worst_param;
    j["worst_rel_err"] = report.worst_rel_err;
    j["pass"] = report.passed(tol);
    std::cout << j.dump() << "\n";
    if (!report.passed(tol)) {
      std::cerr << "gradcheck FAILED for task " << task << ": worst " << report.worst_param
                << " rel err " << report.worst_rel_err << " (tol " << tol << ")\n";
      all_ok = false;
    }
  }
  if (!all_ok) throw std::runtime_error("gradient check failed");
  return 0;
}

int cmd_presets(const std::string& dump) {
  if (!dump.empty()) {
    std::cout << tbru::serialize_pipeline_config(tbru::preset(dump));
    return 0;
  }
  for (const std::string& name : tbru::preset_names()) std::cout << name << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"transition-based recurrent unit pipelines"};
  app.require_subcommand(1);

  tbru::PresetDims dims;
  std::string pipeline, train_path, dev_path, out_path, ckpt_path, data_path;
  std::string sentence_text, format = "dot", kind = "trees", task_dist, pretrain, dump;
  std::string metrics_path;
  std::uint64_t seed = 1;
  int steps = 1000, count = 100, max_len = 10, len = 3, batch = 4;
  int eval_every = 0, workers = 1, min_count = 1;
  double lr = 0.05, momentum = 0.9, clip = 5.0, tol = 1e-4;
  bool upstream_predicted = false, corrupt = false;

  auto add_dims = [&](CLI::App* cmd) {
    cmd->add_option("--hidden", dims.hidden, "hidden dimension");
    cmd->add_option("--embedding-dim", dims.embedding, "embedding dimension");
  };

  CLI::App* train = app.add_subcommand("train", "train a pipeline");
  train->add_option("--pipeline", pipeline, "preset name or config path")->required();
  train->add_option("--train", train_path, "training corpus (CoNLL TSV)")->required();
  train->add_option("--dev", dev_path, "development corpus");
  train->add_option("--steps", steps, "number of batch steps");
  train->add_option("--seed", seed, "random seed");
  train->add_option("--out", out_path, "checkpoint output path");
  train->add_option("--task-dist", task_dist, "comma list, e.g. 0.5,0.5");
  train->add_option("--pretrain-steps", pretrain, "comma list of per-task pretraining steps");
  train->add_option("--lr", lr, "learning rate");
  train->add_option("--momentum", momentum, "momentum coefficient");
  train->add_option("--clip", clip, "gradient clip norm (0 disables)");
  train->add_option("--batch", batch, "batch size");
  train->add_option("--eval-every", eval_every, "dev evaluation interval");
  train->add_option("--workers", workers, "parallel unroll workers");
  train->add_option("--min-count", min_count, "vocabulary frequency cutoff");
  train->add_option("--metrics-out", metrics_path, "also write metric records here");
  train->add_flag("--upstream-predicted", upstream_predicted,
                  "unroll upstream tasks greedily instead of using gold");
  add_dims(train);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--pipeline", pipeline)->required();
  eval->add_option("--ckpt", ckpt_path)->required();
  eval->add_option("--data", data_path)->required();
  add_dims(eval);

  CLI::App* trace = app.add_subcommand("trace", "emit the unrolled graph as DOT");
  trace->add_option("--pipeline", pipeline)->required();
  trace->add_option("--ckpt", ckpt_path);
  trace->add_option("--sentence", sentence_text, "space-separated tokens")->required();
  trace->add_option("--format", format, "dot");
  add_dims(trace);

  CLI::App* gen = app.add_subcommand("gen-data", "write a synthetic corpus");
  gen->add_option("--kind", kind, "trees|compression");
  gen->add_option("--out", out_path)->required();
  gen->add_option("--count", count, "number of sentences");
  gen->add_option("--max-len", max_len, "maximum sentence length (trees)");
  gen->add_option("--seed", seed);

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gc->add_option("--pipeline", pipeline)->required();
  gc->add_option("--len", len, "sentence length (<= 5)");
  gc->add_option("--tol", tol, "relative tolerance");
  gc->add_option("--seed", seed);
  gc->add_flag("--corrupt-gradient", corrupt, "negative control: perturb one gradient")
      ->group("");  // hidden test hook

  CLI::App* presets = app.add_subcommand("presets", "list presets or dump one as config text");
  presets->add_option("--dump", dump, "preset name to print");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*train) {
      return cmd_train(pipeline, train_path, dev_path, steps, seed, out_path, task_dist, pretrain,
                       dims, lr, momentum, clip, batch, eval_every, workers, upstream_predicted,
                       min_count, metrics_path);
    }
    if (*eval) return cmd_eval(pipeline, ckpt_path, data_path, dims);
    if (*trace) return cmd_trace(pipeline, ckpt_path, sentence_text, format, dims);
    if (*gen) return cmd_gen_data(kind, out_path, count, max_len, seed);
    if (*gc) {
      if (len < 1 || len > 5) {
        std::cerr << "gradcheck: --len must be in [1, 5]\n";
        return 1;
      }
      return cmd_gradcheck(pipeline, len, tol, seed, corrupt);
    }
    if (*presets) return cmd_presets(dump);
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
