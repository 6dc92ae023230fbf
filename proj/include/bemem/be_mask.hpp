#pragma once

// Bright-ending mask: END-token cross-attention at the final sampler step.

#include "bemem/diffusion.hpp"

#include <filesystem>
#include <vector>

namespace bemem {

class MaskError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BEMask {
  Eigen::VectorXd patch_weights;  // [kPatches], row-major over the 4x4 grid
  Eigen::VectorXd pixel_weights;  // [kPixels], nearest-patch copy

  static BEMask from_patches(const Eigen::VectorXd& patch_weights);
  static BEMask constant(double value) { return from_patches(Eigen::VectorXd::Constant(kPatches, value)); }
};

/// Layers used when none are requested: every cross-attention block.
std::vector<int> default_be_layers();

/// Head mean, then layer mean, of the END column of the last-step maps.
BEMask extract_be_mask(const TrajectoryRecord& traj, const std::vector<int>& layers = default_be_layers());

/// Mean patch weight.
double be_score(const BEMask& mask);
double be_score_max(const BEMask& mask);

/// 16x16 8-bit PGM (weight 1 -> 255) and a text sidecar with exact values.
void export_mask_pgm(const BEMask& mask, const std::filesystem::path& pgm);
void export_mask_values(const BEMask& mask, const std::filesystem::path& txt);
BEMask load_mask_values(const std::filesystem::path& txt);

}  // namespace bemem
