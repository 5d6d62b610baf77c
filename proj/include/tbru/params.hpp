// Copyright 2026 The tbru Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "tbru/tensor.hpp"

namespace tbru {

// A named trainable array plus its accumulated gradient and the optimizer's
// momentum buffer. Values are read-shared across unrolls; grad/momentum are
// written only by the serialized update step.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix momentum;
};

class ParamStore {
 public:
  Parameter* create(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  Parameter* get(const std::string& name) const;  // throws if absent
  bool has(const std::string& name) const;
  const std::vector<Parameter*>& all() const { return order_; }  // creation order
  std::size_t total_elements() const;
  void zero_grads();

 private:
  std::vector<std::unique_ptr<Parameter>> owned_;
  std::vector<Parameter*> order_;
  std::unordered_map<std::string, Parameter*> by_name_;
};

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)). Fills in a fixed
// row-major order so a given seed always yields the same values.
void xavier_init(Matrix& m, std::mt19937_64& rng);

}  // namespace tbru
