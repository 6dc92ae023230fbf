#pragma once

#include "bemem/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace bemem {

struct GradCheckResult {
  double max_rel_error = 0.0;
  Index worst_index = -1;  // flat row-major index into x
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Scalar-valued function of one differentiable input, built on a fresh tape.
using ScalarFn = std::function<Var<double>(Tape<double>&, const Var<double>&)>;

/// Compares tape gradients with central differences (f(x+h e_i) - f(x-h e_i)) / 2h.
///
/// The per-element error is |analytic - numeric| / max(|analytic|, |numeric|, floor)
/// where floor = max(1e-6, 1e-2 * largest gradient magnitude), so entries that
/// are zero up to rounding do not dominate.
inline GradCheckResult grad_check(const ScalarFn& f, const MatrixD& x, double h = 1e-3) {
  MatrixD analytic;
  {
    Tape<double> tape;
    auto xv = tape.variable(x);
    auto y = f(tape, xv);
    tape.backward(y);
    analytic = tape.grad(xv.id);
  }
  auto eval = [&](const MatrixD& at) {
    Tape<double> tape;
    auto xv = tape.constant(at);
    return f(tape, xv).value()(0, 0);
  };
  MatrixD numeric(x.rows(), x.cols());
  MatrixD probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + h;
    const double up = eval(probe);
    probe.data()[i] = orig - h;
    const double down = eval(probe);
    probe.data()[i] = orig;
    numeric.data()[i] = (up - down) / (2.0 * h);
  }
  const double gmax = std::max(analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff());
  const double floor = std::max(1e-6, 1e-2 * gmax);
  GradCheckResult r;
  for (Index i = 0; i < x.size(); ++i) {
    const double a = analytic.data()[i], n = numeric.data()[i];
    const double err = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
    if (err > r.max_rel_error || r.worst_index < 0) {
      r.max_rel_error = err;
      r.worst_index = i;
      r.analytic = a;
      r.numeric = n;
    }
  }
  return r;
}

}  // namespace bemem
