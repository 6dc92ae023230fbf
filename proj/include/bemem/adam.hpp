#pragma once

#include "bemem/params.hpp"

#include <cmath>
#include <vector>

namespace bemem {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer over a ParamSet; gradients arrive in the same order.
template <typename Scalar>
class Adam {
 public:
  Adam(const ParamSet<Scalar>& params, AdamConfig cfg) : cfg_(cfg) {
    for (const auto& t : params) {
      m_.push_back(Matrix<Scalar>::Zero(t.value.rows(), t.value.cols()));
      v_.push_back(Matrix<Scalar>::Zero(t.value.rows(), t.value.cols()));
    }
  }

  /// One update. `lr_scale` multiplies the configured rate (for schedules).
  void step(ParamSet<Scalar>& params, const std::vector<Matrix<Scalar>>& grads, double lr_scale = 1.0) {
    if (grads.size() != params.size()) throw ShapeError("Adam: gradient count mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double lr = cfg_.lr * lr_scale;
    const auto b1 = static_cast<Scalar>(cfg_.beta1), b2 = static_cast<Scalar>(cfg_.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i].value;
      const auto& g = grads[i];
      require_same_shape(p, g, "Adam::step");
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g.cwiseProduct(g);
      for (Index k = 0; k < p.size(); ++k) {
        const double mh = m_[i].data()[k] / c1;
        const double vh = v_[i].data()[k] / c2;
        p.data()[k] -= static_cast<Scalar>(lr * mh / (std::sqrt(vh) + cfg_.eps));
      }
    }
  }

  long steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<Matrix<Scalar>> m_;
  std::vector<Matrix<Scalar>> v_;
  long t_ = 0;
};

}  // namespace bemem
