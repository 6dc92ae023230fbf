#include "bemem/detect.hpp"

#include <cmath>

namespace bemem {

int resolve_budget(const TrajectoryRecord& traj, int budget) {
  if (traj.steps() == 0) throw MaskError("detection: empty trajectory");
  if (budget < 0 || budget > traj.steps())
    throw MaskError("detection: step budget " + std::to_string(budget) + " exceeds " + std::to_string(traj.steps()));
  return budget == 0 ? traj.steps() : budget;
}

double step_magnitude(const TrajectoryRecord& traj, int k, const BEMask* mask) {
  if (k < static_cast<int>(traj.eps_cond.size())) {
    const MatrixF& c = traj.eps_cond[static_cast<std::size_t>(k)];
    const MatrixF& u = traj.eps_uncond[static_cast<std::size_t>(k)];
    double acc = 0.0;
    for (Index i = 0; i < c.rows(); ++i) {
      const double w = mask ? mask->pixel_weights[i] : 1.0;
      for (Index j = 0; j < c.cols(); ++j) {
        const double d = (static_cast<double>(c(i, j)) - static_cast<double>(u(i, j))) * w;
        acc += d * d;
      }
    }
    return std::sqrt(acc);
  }
  if (traj.patch_sq_diff.cols() != kPatches) throw ShapeError("detection: patch norms missing");
  double acc = 0.0;
  for (int p = 0; p < kPatches; ++p) {
    const double w = mask ? mask->patch_weights[p] : 1.0;
    acc += w * w * traj.patch_sq_diff(k, p);
  }
  return std::sqrt(acc);
}

DetectionScore detection_stat_baseline(const TrajectoryRecord& traj, int k) {
  const int n = resolve_budget(traj, k);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += step_magnitude(traj, i, nullptr);
  return {acc / n, n, false, false};
}

DetectionScore detection_stat_masked(const TrajectoryRecord& traj, int k, const BEMask& mask) {
  if (mask.pixel_weights.size() != kPixels || mask.patch_weights.size() != kPatches)
    throw ShapeError("detection: mask shape mismatch");
  const int n = resolve_budget(traj, k);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += step_magnitude(traj, i, &mask);
  const double mean = mask.pixel_weights.mean();
  const bool floored = mean < kMaskMeanFloor;
  return {(acc / n) / (floored ? kMaskMeanFloor : mean), n, true, floored};
}

}  // namespace bemem
