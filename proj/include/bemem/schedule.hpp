#pragma once

#include "bemem/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace bemem {

/// Noise schedule over steps t = 1..T. Vectors are indexed t-1.
struct NoiseSchedule {
  int steps = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  double beta(int t) const { return betas.at(static_cast<std::size_t>(t - 1)); }
  double alpha(int t) const { return alphas.at(static_cast<std::size_t>(t - 1)); }
  double alpha_bar(int t) const { return alpha_bars.at(static_cast<std::size_t>(t - 1)); }
};

class ScheduleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Linear beta ramp from beta_start to beta_end; alpha_bar is the running product.
inline NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ScheduleError("make_schedule: T must be >= 1");
  if (!(beta_start > 0.0) || beta_start > beta_end || !(beta_end < 1.0))
    throw ScheduleError("make_schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.steps = steps;
  s.betas.resize(static_cast<std::size_t>(steps));
  s.alphas.resize(s.betas.size());
  s.alpha_bars.resize(s.betas.size());
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    const double b = beta_start + (beta_end - beta_start) * frac;
    s.betas[static_cast<std::size_t>(i)] = b;
    s.alphas[static_cast<std::size_t>(i)] = 1.0 - b;
    prod *= 1.0 - b;
    s.alpha_bars[static_cast<std::size_t>(i)] = prod;
  }
  return s;
}

/// Closed-form forward kernel: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
template <typename Derived, typename DerivedEps>
Matrix<typename Derived::Scalar> q_sample(const Eigen::MatrixBase<Derived>& x0, int t,
                                          const Eigen::MatrixBase<DerivedEps>& eps,
                                          const NoiseSchedule& s) {
  using Scalar = typename Derived::Scalar;
  if (t < 1 || t > s.steps) throw ScheduleError("q_sample: t out of [1, T]");
  require_same_shape(x0, eps, "q_sample");
  const double ab = s.alpha_bar(t);
  return (x0 * static_cast<Scalar>(std::sqrt(ab)) + eps * static_cast<Scalar>(std::sqrt(1.0 - ab))).eval();
}

}  // namespace bemem
