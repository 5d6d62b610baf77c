// Copyright 2026 The tbru Authors
// SPDX-License-Identifier: Apache-2.0

#include "tbru/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace tbru {

GradCheckReport finite_diff_check(ParamStore& store,
                                  const std::function<double(bool)>& f, double step,
                                  const std::function<void()>& after_analytic) {
  store.zero_grads();
  f(/*accumulate=*/true);
  if (after_analytic) after_analytic();

  GradCheckReport report;
  for (Parameter* p : store.all()) {
    GradCheckEntry entry;
    entry.param = p->name;
    for (Eigen::Index r = 0; r < p->value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
        const double orig = p->value(r, c);
        p->value(r, c) = orig + step;
        const double up = f(false);
        p->value(r, c) = orig - step;
        const double down = f(false);
        p->value(r, c) = orig;
        const double numeric = (up - down) / (2.0 * step);
        const double analytic = p->grad(r, c);
        const double rel = std::abs(analytic - numeric) /
                           std::max({1.0, std::abs(analytic), std::abs(numeric)});
        if (rel >= entry.max_rel_err) {
          entry.max_rel_err = rel;
          entry.analytic = analytic;
          entry.numeric = numeric;
        }
      }
    }
    if (entry.max_rel_err >= report.worst_rel_err) {
      report.worst_rel_err = entry.max_rel_err;
      report.worst_param = entry.param;
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace tbru
