#pragma once

// Noise-difference magnitude detectors and per-stratum classifier summaries.

#include "bemem/be_mask.hpp"
#include "bemem/roc.hpp"

namespace bemem {

inline constexpr double kMaskMeanFloor = 1e-6;

struct DetectionScore {
  double value = 0.0;
  int steps_used = 0;
  bool masked = false;
  bool floored = false;  // mask mean hit kMaskMeanFloor
};

/// ||(eps_c - eps_u) o m||_2 at sampler step k. Uses the raw pair when
/// stored, otherwise the per-patch squared norms (exact for patch-constant m).
double step_magnitude(const TrajectoryRecord& traj, int k, const BEMask* mask);

/// (1/k) sum_{t<k} ||eps_c - eps_u||_2 over the first k steps.
DetectionScore detection_stat_baseline(const TrajectoryRecord& traj, int k);

/// Same with the difference weighted by m, divided by max(mean m, 1e-6).
DetectionScore detection_stat_masked(const TrajectoryRecord& traj, int k, const BEMask& mask);

/// Step budget k, with 0 meaning all recorded steps.
int resolve_budget(const TrajectoryRecord& traj, int budget);

}  // namespace bemem
