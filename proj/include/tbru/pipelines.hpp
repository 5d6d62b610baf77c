// Copyright 2026 The tbru Authors
// SPDX-License-Identifier: Apache-2.0
//
// Declarative pipeline presets and the block-structured text config format.

#pragma once

#include <string>
#include <vector>

#include "tbru/engine.hpp"

namespace tbru {

struct PresetDims {
  int embedding = 32;
  int hidden = 64;
};

// Named pipeline presets:
//   tagger_rnn              single LSTM tagger over token embeddings
//   keepdrop_tagger         the same cell supervised on keep/drop labels
//   feedforward_parser      arc-standard MLP over feature-template embeddings
//   encoder_decoder_tagger  shift-only encoder + tagger decoder off the final state
//   bilstm_tagger           two opposite encoders + per-token tagger
//   multitask_luong         shared bi-directional encoders, two taggers
//   multitask_stackprop     as above, the second tagger also reads the first
//   compositional_parser    right-to-left encoder + arc-standard with
//                           input-pointer and subtree links
//   summarizer_stackprop    encoder + parser + keep/drop tagger over parse subtrees
//   deep_stacked_parser     POS tagger, two encoders, left-to-right parser,
//                           right-to-left parser linked to the first parser's subtrees
//   parser_ablation(I,R)    I in {final_state, attention, input_pointer},
//                           R in {previous_step, subtree}
PipelineConfig preset(const std::string& name, const PresetDims& dims = {});
std::vector<std::string> preset_names();
bool is_preset_name(const std::string& name);

struct ConfigError : std::runtime_error {
  int line;
  ConfigError(int line_no, const std::string& msg)
      : std::runtime_error("config error at line " + std::to_string(line_no) + ": " + msg),
        line(line_no) {}
};

// Line-oriented key/value blocks, one [tbru] block per component. Round-trips
// through serialize_pipeline_config. Throws ConfigError with a line number on
// malformed input; validation problems are reported the same way.
PipelineConfig parse_pipeline_config(const std::string& text);
std::string serialize_pipeline_config(const PipelineConfig& config);

// A preset name (including parser_ablation(...)) or a path to a config file.
PipelineConfig load_pipeline(const std::string& name_or_path, const PresetDims& dims = {});

}  // namespace tbru
