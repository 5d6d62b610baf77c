// Copyright 2026 The tbru Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tbru/params.hpp"

namespace tbru {

struct GradCheckEntry {
  std::string param;
  double max_rel_err = 0.0;
  double analytic = 0.0;  // analytic gradient at the worst element
  double numeric = 0.0;   // central difference at the worst element
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;  // one per parameter
  double worst_rel_err = 0.0;
  std::string worst_param;

  bool passed(double tol) const { return worst_rel_err < tol; }
};

// Central-difference gradient verification against every element of every
// parameter in `store`.
//
// `f(accumulate)` evaluates the loss with the store's current values. When
// `accumulate` is true it must additionally leave d loss / d param in each
// Parameter::grad (grads are zeroed by the checker beforehand). f must be
// deterministic and its discrete structure must not depend on the parameter
// values being perturbed (run it teacher-forced).
//
// Relative error is |analytic - numeric| / max(1, |analytic|, |numeric|).
// `after_analytic` is a test hook invoked between the analytic pass and the
// numeric sweeps.
GradCheckReport finite_diff_check(ParamStore& store,
                                  const std::function<double(bool accumulate)>& f,
                                  double step = 1e-5,
                                  const std::function<void()>& after_analytic = nullptr);

}  // namespace tbru
