#include "macg/gradcheck.hpp"

#include <cmath>

#include "macg/errors.hpp"

namespace macg::ad {

namespace {

double evaluate(const TracedScalarFn& f, const NamedParams& params) {
  Tape tape;
  ParamVars vars;
  for (const auto& [name, value] : params) vars[name] = tape.param(name, value);
  Var loss = f(tape, vars);
  double v = tape.value(loss)(0, 0);
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite value at probe point");
  return v;
}

}  // namespace

GradCheckReport grad_check(const TracedScalarFn& f, const NamedParams& params,
                           double tol, double step) {
  if (step <= 0.0) throw ContractError("grad_check: step must be positive");
  GradCheckReport report;
  report.tol = tol;
  report.step = step;

  GradientMap analytic;
  {
    Tape tape;
    ParamVars vars;
    for (const auto& [name, value] : params) vars[name] = tape.param(name, value);
    Var loss = f(tape, vars);
    if (!std::isfinite(tape.value(loss)(0, 0))) {
      throw NumericError("grad_check: non-finite value at base point");
    }
    analytic = tape.backward(loss);
  }

  NamedParams probe = params;
  for (size_t p = 0; p < probe.size(); ++p) {
    const std::string& name = probe[p].first;
    Matrix& m = probe[p].second;
    const Matrix& grad = analytic.at(name);
    GradCheckEntry entry{name, 0.0};
    for (size_t i = 0; i < m.size(); ++i) {
      double saved = m.values()[i];
      m.values()[i] = saved + step;
      double up = evaluate(f, probe);
      m.values()[i] = saved - step;
      double down = evaluate(f, probe);
      m.values()[i] = saved;
      double numeric = (up - down) / (2.0 * step);
      double a = grad.values()[i];
      double denom = std::max(1.0, std::max(std::fabs(a), std::fabs(numeric)));
      double rel = std::fabs(a - numeric) / denom;
      if (rel > entry.max_rel_err) entry.max_rel_err = rel;
    }
    if (entry.max_rel_err > report.worst) {
      report.worst = entry.max_rel_err;
      report.worst_param = name;
    }
    report.entries.push_back(std::move(entry));
  }
  report.pass = report.worst < tol;
  return report;
}

}  // namespace macg::ad
