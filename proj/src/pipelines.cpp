// Copyright 2026 The tbru Authors
// SPDX-License-Identifier: Apache-2.0

#include "tbru/pipelines.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace tbru {

namespace {

TBRUConfig shift_encoder(const std::string& name, bool r2l, const PresetDims& dims) {
  TBRUConfig t;
  t.name = name;
  t.system = SystemKind::kShiftOnly;
  t.right_to_left = r2l;
  t.input.kind = r2l ? InputFnKind::kReversedTokenEmbedding : InputFnKind::kTokenEmbedding;
  t.links = {{LinkKind::kPreviousStep, ""}};
  t.hidden = dims.hidden;
  return t;
}

TBRUConfig tagger(const std::string& name, TagSource source, const PresetDims& dims) {
  TBRUConfig t;
  t.name = name;
  t.system = SystemKind::kTagger;
  t.tag_source = source;
  t.hidden = dims.hidden;
  t.supervised = true;
  return t;
}

TBRUConfig arc_parser(const std::string& name, const PresetDims& dims) {
  TBRUConfig t;
  t.name = name;
  t.system = SystemKind::kArcStandard;
  t.input.kind = InputFnKind::kPrevOutputEmbedding;
  t.hidden = dims.hidden;
  t.supervised = true;
  return t;
}

PipelineConfig ablation(const std::string& input_link, const std::string& recur_link,
                        const PresetDims& dims) {
  PipelineConfig p;
  p.name = "parser_ablation(" + input_link + "," + recur_link + ")";
  p.embedding_dim = dims.embedding;
  p.tbrus.push_back(shift_encoder("encoder", /*r2l=*/true, dims));
  TBRUConfig parser = arc_parser("parser", dims);
  if (input_link == "final_state") {
    parser.links.push_back({LinkKind::kFinalStateOf, "encoder"});
  } else if (input_link == "attention") {
    parser.links.push_back({LinkKind::kAllOf, "encoder"});
    parser.policy = AggPolicy::kAttention;
  } else if (input_link == "input_pointer") {
    parser.links.push_back({LinkKind::kInputPointer, "encoder"});
  } else {
    throw std::invalid_argument("parser_ablation: unknown input link '" + input_link + "'");
  }
  if (recur_link == "previous_step") {
    // Under attention the previous hidden state is already threaded through
    // the query and the cell memory; a separate slot would widen every step's
    // recurrence beyond the encoder length.
    if (input_link != "attention") parser.links.push_back({LinkKind::kPreviousStep, ""});
  } else if (recur_link == "subtree") {
    parser.links.push_back({LinkKind::kSubtree, "parser"});
  } else {
    throw std::invalid_argument("parser_ablation: unknown recurrent link '" + recur_link + "'");
  }
  p.tbrus.push_back(parser);
  return p;
}

const std::vector<std::string> kBaseNames = {
    "tagger_rnn",          "keepdrop_tagger",      "feedforward_parser",
    "encoder_decoder_tagger", "bilstm_tagger",     "multitask_luong",
    "multitask_stackprop", "compositional_parser", "summarizer_stackprop",
    "deep_stacked_parser",
};

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> names = kBaseNames;
  for (const char* in : {"final_state", "attention", "input_pointer"}) {
    for (const char* re : {"previous_step", "subtree"}) {
      names.push_back(std::string("parser_ablation(") + in + "," + re + ")");
    }
  }
  return names;
}

bool is_preset_name(const std::string& name) {
  if (name.rfind("parser_ablation(", 0) == 0) return true;
  return std::find(kBaseNames.begin(), kBaseNames.end(), name) != kBaseNames.end();
}

PipelineConfig preset(const std::string& name, const PresetDims& dims) {
  PipelineConfig p;
  p.name = name;
  p.embedding_dim = dims.embedding;

  if (name.rfind("parser_ablation(", 0) == 0) {
    if (name.back() != ')') throw std::invalid_argument("malformed ablation name: " + name);
    std::string args = name.substr(16, name.size() - 17);
    args.erase(std::remove(args.begin(), args.end(), ' '), args.end());
    const auto comma = args.find(',');
    if (comma == std::string::npos) {
      throw std::invalid_argument("parser_ablation needs (input_link, recurrent_link)");
    }
    return ablation(args.substr(0, comma), args.substr(comma + 1), dims);
  }

  if (name == "tagger_rnn" || name == "keepdrop_tagger") {
    TBRUConfig t = tagger("tagger", name == "tagger_rnn" ? TagSource::kPos : TagSource::kKeepDrop,
                          dims);
    t.input.kind = InputFnKind::kTokenEmbedding;
    t.links = {{LinkKind::kPreviousStep, ""}};
    p.tbrus.push_back(t);
    return p;
  }
  if (name == "feedforward_parser") {
    TBRUConfig t = arc_parser("parser", dims);
    t.input.kind = InputFnKind::kFeatureTemplates;
    t.input.templates = 20;
    t.cell = CellKind::kMlp;
    t.mlp_hidden = {dims.hidden};
    p.tbrus.push_back(t);
    return p;
  }
  if (name == "encoder_decoder_tagger") {
    p.tbrus.push_back(shift_encoder("encoder", false, dims));
    TBRUConfig dec = tagger("decoder", TagSource::kPos, dims);
    dec.input.kind = InputFnKind::kPrevOutputEmbedding;
    dec.links = {{LinkKind::kFinalStateOf, "encoder"}, {LinkKind::kPreviousStep, ""}};
    p.tbrus.push_back(dec);
    return p;
  }
  if (name == "bilstm_tagger" || name == "multitask_luong" || name == "multitask_stackprop") {
    p.tbrus.push_back(shift_encoder("fwd", false, dims));
    p.tbrus.push_back(shift_encoder("bwd", true, dims));
    TBRUConfig tag = tagger(name == "bilstm_tagger" ? "tagger" : "tagger_a", TagSource::kPos, dims);
    tag.input.kind = InputFnKind::kEmpty;
    tag.links = {{LinkKind::kInputPointer, "fwd"}, {LinkKind::kTokenSuffix, "bwd"}};
    p.tbrus.push_back(tag);
    if (name != "bilstm_tagger") {
      TBRUConfig second = tagger("tagger_b", TagSource::kKeepDrop, dims);
      second.input.kind = InputFnKind::kEmpty;
      second.links = {{LinkKind::kInputPointer, "fwd"}, {LinkKind::kTokenSuffix, "bwd"}};
      if (name == "multitask_stackprop") {
        second.links.push_back({LinkKind::kInputPointer, "tagger_a"});
      }
      p.tbrus.push_back(second);
    }
    return p;
  }
  if (name == "compositional_parser") {
    p.tbrus.push_back(shift_encoder("encoder", true, dims));
    TBRUConfig parser = arc_parser("parser", dims);
    parser.links = {{LinkKind::kInputPointer, "encoder"}, {LinkKind::kSubtree, "parser"}};
    p.tbrus.push_back(parser);
    return p;
  }
  if (name == "summarizer_stackprop") {
    p.tbrus.push_back(shift_encoder("encoder", true, dims));
    TBRUConfig parser = arc_parser("parser", dims);
    parser.links = {{LinkKind::kInputPointer, "encoder"}, {LinkKind::kSubtree, "parser"}};
    p.tbrus.push_back(parser);
    TBRUConfig comp = tagger("compressor", TagSource::kKeepDrop, dims);
    comp.input.kind = InputFnKind::kEmpty;
    comp.links = {{LinkKind::kInputPointer, "encoder"}, {LinkKind::kSubtreeOfInput, "parser"}};
    p.tbrus.push_back(comp);
    return p;
  }
  if (name == "deep_stacked_parser") {
    TBRUConfig pos = tagger("pos_tagger", TagSource::kPos, dims);
    pos.input.kind = InputFnKind::kTokenEmbedding;
    pos.links = {{LinkKind::kPreviousStep, ""}};
    p.tbrus.push_back(pos);
    TBRUConfig fwd = shift_encoder("fwd", false, dims);
    fwd.links.push_back({LinkKind::kInputPointer, "pos_tagger"});
    p.tbrus.push_back(fwd);
    TBRUConfig bwd = shift_encoder("bwd", true, dims);
    bwd.links.push_back({LinkKind::kInputPointer, "pos_tagger"});
    p.tbrus.push_back(bwd);
    TBRUConfig l2r = arc_parser("parser_l2r", dims);
    l2r.links = {{LinkKind::kInputPointer, "fwd"}, {LinkKind::kSubtree, "parser_l2r"}};
    p.tbrus.push_back(l2r);
    TBRUConfig r2l = arc_parser("parser_r2l", dims);
    r2l.right_to_left = true;
    r2l.links = {{LinkKind::kInputPointer, "bwd"}, {LinkKind::kSubtree, "parser_l2r"}};
    p.tbrus.push_back(r2l);
    return p;
  }
  throw std::invalid_argument("unknown preset: " + name);
}

// ---- config text format --------------------------------------------------------

namespace {

const char* system_name(SystemKind k) {
  switch (k) {
    case SystemKind::kShiftOnly: return "shift_only";
    case SystemKind::kTagger: return "tagger";
    case SystemKind::kArcStandard: return "arc_standard";
  }
  return "?";
}

const char* input_name(InputFnKind k) {
  switch (k) {
    case InputFnKind::kTokenEmbedding: return "token_embedding";
    case InputFnKind::kReversedTokenEmbedding: return "reversed_token_embedding";
    case InputFnKind::kPrevOutputEmbedding: return "previous_output_embedding";
    case InputFnKind::kFeatureTemplates: return "feature_templates";
    case InputFnKind::kEmpty: return "empty";
  }
  return "?";
}

const char* link_name(LinkKind k) {
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

const char* policy_name(AggPolicy p) {
  switch (p) {
    case AggPolicy::kConcatFixed: return "concat";
    case AggPolicy::kMean: return "mean";
    case AggPolicy::kAttention: return "attention";
  }
  return "?";
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kLinear: return "linear";
  }
  return "?";
}

Link parse_link(const std::string& text, int line) {
  const auto open = text.find('(');
  std::string kind_name = open == std::string::npos ? text : text.substr(0, open);
  std::string source;
  if (open != std::string::npos) {
    if (text.back() != ')') throw ConfigError(line, "malformed link: " + text);
    source = text.substr(open + 1, text.size() - open - 2);
  }
  Link l;
  if (kind_name == "previous_step") l.kind = LinkKind::kPreviousStep;
  else if (kind_name == "final_state_of") l.kind = LinkKind::kFinalStateOf;
  else if (kind_name == "input_pointer_link") l.kind = LinkKind::kInputPointer;
  else if (kind_name == "token_suffix_link") l.kind = LinkKind::kTokenSuffix;
  else if (kind_name == "subtree_links") l.kind = LinkKind::kSubtree;
  else if (kind_name == "subtree_of_input") l.kind = LinkKind::kSubtreeOfInput;
  else if (kind_name == "all_of") l.kind = LinkKind::kAllOf;
  else throw ConfigError(line, "unknown recurrence function: " + kind_name);
  l.source = source;
  return l;
}

bool parse_bool(const std::string& v, int line) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(line, "expected true|false, got " + v);
}

int parse_int(const std::string& v, int line) {
  try {
    return std::stoi(v);
  } catch (const std::exception&) {
    throw ConfigError(line, "expected an integer, got " + v);
  }
}

std::vector<std::string> split_commas(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char c : v) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == ',' && depth == 0) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  for (std::string& s : out) {
    s.erase(std::remove(s.begin(), s.end(), ' '), s.end());
  }
  return out;
}

}  // namespace

PipelineConfig parse_pipeline_config(const std::string& text) {
  PipelineConfig config;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool saw_version = false;
  TBRUConfig* current = nullptr;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "[tbru]") {
      config.tbrus.emplace_back();
      config.tbrus.back().links.clear();
      current = &config.tbrus.back();
      continue;
    }
    std::string value;
    std::getline(ls, value);
    const auto first = value.find_first_not_of(" \t");
    value = first == std::string::npos ? "" : value.substr(first);
    while (!value.empty() && (value.back() == ' ' || value.back() == '\t')) value.pop_back();
    if (value.empty() && key != "links") throw ConfigError(line_no, "missing value for " + key);

    if (current == nullptr) {
      if (key == "format_version") {
        if (parse_int(value, line_no) != 1) throw ConfigError(line_no, "unsupported format_version");
        saw_version = true;
      } else if (key == "pipeline") {
        config.name = value;
      } else if (key == "embedding_dim") {
        config.embedding_dim = parse_int(value, line_no);
      } else {
        throw ConfigError(line_no, "unknown header key: " + key);
      }
      continue;
    }

    TBRUConfig& t = *current;
    if (key == "name") t.name = value;
    else if (key == "transition") {
      if (value == "shift_only") t.system = SystemKind::kShiftOnly;
      else if (value == "tagger") t.system = SystemKind::kTagger;
      else if (value == "arc_standard") t.system = SystemKind::kArcStandard;
      else throw ConfigError(line_no, "unknown transition system: " + value);
    } else if (key == "direction") {
      if (value == "left_to_right") t.right_to_left = false;
      else if (value == "right_to_left") t.right_to_left = true;
      else throw ConfigError(line_no, "unknown direction: " + value);
    } else if (key == "tags") {
      if (value == "pos") t.tag_source = TagSource::kPos;
      else if (value == "keepdrop") t.tag_source = TagSource::kKeepDrop;
      else throw ConfigError(line_no, "unknown tag source: " + value);
    } else if (key == "labeled") {
      t.labeled = parse_bool(value, line_no);
    } else if (key == "input") {
      if (value == "token_embedding") t.input.kind = InputFnKind::kTokenEmbedding;
      else if (value == "reversed_token_embedding") t.input.kind = InputFnKind::kReversedTokenEmbedding;
      else if (value == "previous_output_embedding") t.input.kind = InputFnKind::kPrevOutputEmbedding;
      else if (value == "feature_templates") t.input.kind = InputFnKind::kFeatureTemplates;
      else if (value == "empty") t.input.kind = InputFnKind::kEmpty;
      else throw ConfigError(line_no, "unknown input function: " + value);
    } else if (key == "templates") {
      t.input.templates = parse_int(value, line_no);
    } else if (key == "links") {
      t.links.clear();
      for (const std::string& item : split_commas(value)) {
        if (!item.empty()) t.links.push_back(parse_link(item, line_no));
      }
    } else if (key == "cell") {
      if (value == "lstm") t.cell = CellKind::kLstm;
      else if (value == "mlp") t.cell = CellKind::kMlp;
      else throw ConfigError(line_no, "unknown cell: " + value);
    } else if (key == "policy") {
      if (value == "concat") t.policy = AggPolicy::kConcatFixed;
      else if (value == "mean") t.policy = AggPolicy::kMean;
      else if (value == "attention") t.policy = AggPolicy::kAttention;
      else throw ConfigError(line_no, "unknown aggregation policy: " + value);
    } else if (key == "hidden") {
      t.hidden = parse_int(value, line_no);
    } else if (key == "mlp_hidden") {
      t.mlp_hidden.clear();
      for (const std::string& item : split_commas(value)) {
        t.mlp_hidden.push_back(parse_int(item, line_no));
      }
    } else if (key == "activation") {
      if (value == "relu") t.activation = Activation::kRelu;
      else if (value == "tanh") t.activation = Activation::kTanh;
      else if (value == "linear") t.activation = Activation::kLinear;
      else throw ConfigError(line_no, "unknown activation: " + value);
    } else if (key == "supervised") {
      t.supervised = parse_bool(value, line_no);
    } else if (key == "loss_weight") {
      try {
        t.loss_weight = std::stod(value);
      } catch (const std::exception&) {
        throw ConfigError(line_no, "expected a number, got " + value);
      }
    } else {
      throw ConfigError(line_no, "unknown key: " + key);
    }
  }
  if (!saw_version) throw ConfigError(1, "missing format_version");
  const std::vector<std::string> errors = validate_pipeline(config);
  if (!errors.empty()) {
    std::string msg = "invalid pipeline";
    for (const std::string& e : errors) msg += "; " + e;
    throw ConfigError(0, msg);
  }
  return config;
}

std::string serialize_pipeline_config(const PipelineConfig& config) {
  std::ostringstream out;
  out << "format_version 1\n";
  out << "pipeline " << config.name << "\n";
  out << "embedding_dim " << config.embedding_dim << "\n";
  for (const TBRUConfig& t : config.tbrus) {
    out << "\n[tbru]\n";
    out << "name " << t.name << "\n";
    out << "transition " << system_name(t.system) << "\n";
    out << "direction " << (t.right_to_left ? "right_to_left" : "left_to_right") << "\n";
    if (t.system == SystemKind::kTagger) {
      out << "tags " << (t.tag_source == TagSource::kPos ? "pos" : "keepdrop") << "\n";
    }
    if (t.system == SystemKind::kArcStandard) {
      out << "labeled " << (t.labeled ? "true" : "false") << "\n";
    }
    out << "input " << input_name(t.input.kind) << "\n";
    if (t.input.kind == InputFnKind::kFeatureTemplates) {
      out << "templates " << t.input.templates << "\n";
    }
    out << "links ";
    for (std::size_t i = 0; i < t.links.size(); ++i) {
      if (i) out << ", ";
      out << link_name(t.links[i].kind);
      if (t.links[i].kind != LinkKind::kPreviousStep) out << "(" << t.links[i].source << ")";
    }
    out << "\n";
    out << "cell " << (t.cell == CellKind::kLstm ? "lstm" : "mlp") << "\n";
    out << "policy " << policy_name(t.policy) << "\n";
    out << "hidden " << t.hidden << "\n";
    if (t.cell == CellKind::kMlp) {
      out << "mlp_hidden ";
      for (std::size_t i = 0; i < t.mlp_hidden.size(); ++i) {
        if (i) out << ", ";
        out << t.mlp_hidden[i];
      }
      out << "\n";
      out << "activation " << activation_name(t.activation) << "\n";
    }
    out << "supervised " << (t.supervised ? "true" : "false") << "\n";
    out << "loss_weight " << t.loss_weight << "\n";
  }
  return out.str();
}

PipelineConfig load_pipeline(const std::string& name_or_path, const PresetDims& dims) {
  if (is_preset_name(name_or_path)) return preset(name_or_path, dims);
  if (!std::filesystem::exists(name_or_path)) {
    throw std::invalid_argument("'" + name_or_path +
                                "' is neither a preset name nor a config file");
  }
  std::ifstream in(name_or_path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_pipeline_config(buf.str());
}

}  // namespace tbru
