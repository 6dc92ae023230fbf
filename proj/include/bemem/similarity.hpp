#pragma once

// Image similarity scores. Images are [pixels x channels] matrices; masks are
// per-pixel weight vectors replicated across channels.

#include "bemem/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace bemem {

/// Default decision threshold on sscd_sub for the S and LS gates.
inline constexpr double kSscdThreshold = 0.5;

/// Copy-detection stand-in: (1 + cos(xh - mean(xh), x - mean(x))) / 2 over
/// all flattened entries. A zero-variance input scores 0.5.
template <typename A, typename B>
double sscd_sub(const Eigen::MatrixBase<A>& generated, const Eigen::MatrixBase<B>& reference) {
  require_same_shape(generated, reference, "sscd_sub");
  const double ma = mean_of(generated), mb = mean_of(reference);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (Index i = 0; i < generated.rows(); ++i)
    for (Index j = 0; j < generated.cols(); ++j) {
      const double a = static_cast<double>(generated(i, j)) - ma;
      const double b = static_cast<double>(reference(i, j)) - mb;
      dot += a * b;
      na += a * a;
      nb += b * b;
    }
  if (na == 0.0 || nb == 0.0) return 0.5;
  const double c = dot / std::sqrt(na * nb);
  return std::clamp((1.0 + c) / 2.0, 0.0, 1.0);
}

/// ||(xh - x) o m||_2 with m broadcast over channels.
template <typename A, typename B>
double masked_distance(const Eigen::MatrixBase<A>& generated, const Eigen::MatrixBase<B>& reference,
                       const Eigen::VectorXd& pixel_weights) {
  require_same_shape(generated, reference, "masked_distance");
  if (pixel_weights.size() != generated.rows())
    throw ShapeError("masked_distance: mask has " + std::to_string(pixel_weights.size()) +
                     " pixels, image has " + std::to_string(generated.rows()));
  double acc = 0.0;
  for (Index i = 0; i < generated.rows(); ++i) {
    const double w = pixel_weights[i];
    for (Index j = 0; j < generated.cols(); ++j) {
      const double d = (static_cast<double>(generated(i, j)) - static_cast<double>(reference(i, j))) * w;
      acc += d * d;
    }
  }
  return std::sqrt(acc);
}

/// -1{sscd_sub > threshold} * ||xh - x||_2
template <typename A, typename B>
double s_metric(const Eigen::MatrixBase<A>& generated, const Eigen::MatrixBase<B>& reference,
                double threshold = kSscdThreshold) {
  require_same_shape(generated, reference, "s_metric");
  if (!(sscd_sub(generated, reference) > threshold)) return 0.0;
  const double d = std::sqrt(squared_norm(generated.template cast<double>() - reference.template cast<double>()));
  return d == 0.0 ? 0.0 : -d;
}

/// -1{sscd_sub > threshold} * ||(xh - x) o m||_2
template <typename A, typename B>
double ls_metric(const Eigen::MatrixBase<A>& generated, const Eigen::MatrixBase<B>& reference,
                 const Eigen::VectorXd& pixel_weights, double threshold = kSscdThreshold) {
  if (!(sscd_sub(generated, reference) > threshold)) return 0.0;
  const double d = masked_distance(generated, reference, pixel_weights);
  return d == 0.0 ? 0.0 : -d;
}

}  // namespace bemem
