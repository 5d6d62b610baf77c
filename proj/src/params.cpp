// Copyright 2026 The tbru Authors
// SPDX-License-Identifier: Apache-2.0

#include "tbru/params.hpp"

#include <cmath>
#include <stdexcept>

namespace tbru {

Parameter* ParamStore::create(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  if (by_name_.count(name)) {
    throw std::invalid_argument("ParamStore: duplicate parameter name " + name);
  }
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Matrix::Zero(rows, cols);
  p->grad = Matrix::Zero(rows, cols);
  p->momentum = Matrix::Zero(rows, cols);
  Parameter* raw = p.get();
  owned_.push_back(std::move(p));
  order_.push_back(raw);
  by_name_.emplace(name, raw);
  return raw;
}

Parameter* ParamStore::get(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
  return it->second;
}

bool ParamStore::has(const std::string& name) const { return by_name_.count(name) != 0; }

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const Parameter* p : order_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void ParamStore::zero_grads() {
  for (Parameter* p : order_) p->grad.setZero();
}

void xavier_init(Matrix& m, std::mt19937_64& rng) {
  if (m.size() == 0) return;
  const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  std::uniform_real_distribution<double> dist(-a, a);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      m(r, c) = dist(rng);
    }
  }
}

}  // namespace tbru
