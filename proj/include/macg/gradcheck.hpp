#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "macg/tape.hpp"

namespace macg::ad {

using NamedParams = std::vector<std::pair<std::string, Matrix>>;
using ParamVars = std::map<std::string, Var>;

/// Builds a scalar loss on the given tape from registered parameter vars.
using TracedScalarFn = std::function<Var(Tape&, const ParamVars&)>;

struct GradCheckEntry {
  std::string param;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tol = 0.0;
  double step = 0.0;
  double worst = 0.0;
  std::string worst_param;
  bool pass = false;
};

/// Compares analytic gradients against central finite differences, one
/// parameter coordinate at a time. Relative error uses the denominator
/// max(1, |analytic|, |numeric|); pass iff every entry stays below tol.
GradCheckReport grad_check(const TracedScalarFn& f, const NamedParams& params,
                           double tol, double step = 1e-4);

}  // namespace macg::ad
