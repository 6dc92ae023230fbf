#include "bemem/be_mask.hpp"

#include <fstream>
#include <iomanip>
#include <set>

namespace bemem {

BEMask BEMask::from_patches(const Eigen::VectorXd& patch_weights) {
  if (patch_weights.size() != kPatches) throw MaskError("BEMask: expected 16 patch weights");
  BEMask m;
  m.patch_weights = patch_weights;
  m.pixel_weights.resize(kPixels);
  for (int p = 0; p < kPatches; ++p)
    for (int f = 0; f < kPatchDim; f += kChannels) m.pixel_weights[patch_pixel(p, f)] = patch_weights[p];
  return m;
}

std::vector<int> default_be_layers() {
  std::vector<int> l;
  for (int b = 0; b < kBlocks; ++b) l.push_back(b);
  return l;
}

BEMask extract_be_mask(const TrajectoryRecord& traj, const std::vector<int>& layers) {
  if (layers.empty()) throw MaskError("extract_be_mask: empty layer set");
  const int end = traj.tokens.end_position();
  if (end < 0) throw MaskError("extract_be_mask: prompt has no END token");
  const int last = traj.steps() - 1;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(kPatches);
  for (int layer : std::set<int>(layers.begin(), layers.end())) {
    Eigen::VectorXd head_sum = Eigen::VectorXd::Zero(kPatches);
    int heads = 0;
    for (const auto& rec : traj.final_attention) {
      if (rec.layer != layer || rec.step != last) continue;
      if (rec.weights.rows() != kPatches || rec.weights.cols() != kTokens)
        throw MaskError("extract_be_mask: attention map has wrong shape");
      for (int p = 0; p < kPatches; ++p) head_sum[p] += rec.weights(p, end);
      ++heads;
    }
    if (heads == 0) throw MaskError("extract_be_mask: no final-step record for layer " + std::to_string(layer));
    acc += head_sum / heads;
  }
  acc /= static_cast<double>(std::set<int>(layers.begin(), layers.end()).size());
  return BEMask::from_patches(acc);
}

double be_score(const BEMask& mask) { return mask.patch_weights.mean(); }
double be_score_max(const BEMask& mask) { return mask.patch_weights.maxCoeff(); }

void export_mask_pgm(const BEMask& mask, const std::filesystem::path& pgm) {
  std::ofstream f(pgm, std::ios::binary);
  if (!f) throw MaskError("cannot write " + pgm.string());
  f << "P5\n" << kImageSide << " " << kImageSide << "\n255\n";
  for (int i = 0; i < kPixels; ++i) {
    const double w = std::clamp(mask.pixel_weights[i], 0.0, 1.0);
    f.put(static_cast<char>(static_cast<unsigned char>(std::lround(w * 255.0))));
  }
}

void export_mask_values(const BEMask& mask, const std::filesystem::path& txt) {
  std::ofstream f(txt);
  if (!f) throw MaskError("cannot write " + txt.string());
  f << std::setprecision(17);
  for (int p = 0; p < kPatches; ++p) f << mask.patch_weights[p] << ((p + 1) % kGridSide ? ' ' : '\n');
}

BEMask load_mask_values(const std::filesystem::path& txt) {
  std::ifstream f(txt);
  if (!f) throw MaskError("cannot read " + txt.string());
  Eigen::VectorXd w(kPatches);
  for (int p = 0; p < kPatches; ++p)
    if (!(f >> w[p])) throw MaskError("mask sidecar truncated: " + txt.string());
  return BEMask::from_patches(w);
}

}  // namespace bemem
