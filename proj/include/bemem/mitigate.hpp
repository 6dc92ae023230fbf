#pragma once

// Prompt-embedding optimisation against the masked first-step magnitude.

#include "bemem/detect.hpp"

namespace bemem {

class MitigationDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MitigationConfig {
  double target = 0.0;  // stop once the loss is <= target
  int max_iters = 100;
  double lr = 0.05;
  int noise_samples = 1;  // x_T draws averaged per iteration
  double divergence_factor = 10.0;
};

/// Where the generation is compared after regeneration.
struct MitigationReference {
  const Image* image = nullptr;
  int attribute_id = 0;
  Region template_region;
  BEMask ls_mask = BEMask::constant(1.0);  // weights for ls_metric
};

struct MitigationResult {
  PromptEmbedding<float> original;
  PromptEmbedding<float> optimized;
  std::vector<double> loss_trace;  // loss before each update, then the final loss
  int iterations = 0;
  bool reached_target = false;
  double target = 0.0;
  TrajectoryRecord generation;
  double utility = 0.0;
  double sscd = 0.0;
  double s = 0.0;
  double ls = 0.0;
};

/// Mask as a [kPatches x kPatchDim] weight block, one weight per patch row.
template <typename Scalar>
Matrix<Scalar> patch_weight_block(const BEMask& m) {
  Matrix<Scalar> w(kPatches, kPatchDim);
  for (int p = 0; p < kPatches; ++p) w.row(p).setConstant(static_cast<Scalar>(m.patch_weights[p]));
  return w;
}

/// Mean over noise draws of ||(eps_c - eps_u) o m|| / max(mean m, 1e-6) at
/// model timestep t. `x_patches` stacks the draws.
template <typename Scalar>
Var<Scalar> mitigation_loss(const BoundParams<Scalar>& p, const Var<Scalar>& rows, const TokenSeq& layout,
                            const Matrix<Scalar>& phi_rows, const Matrix<Scalar>& x_patches, int t,
                            const BEMask& mask) {
  auto& tape = *rows.tape;
  const Index draws = x_patches.rows() / kPatches;
  std::vector<RowTerm> rep;
  for (Index d = 0; d < draws; ++d)
    for (int i = 0; i < kTokens; ++i) rep.push_back({d * kTokens + i, i, 1.0});
  auto p_rows = combine_rows(rows, std::move(rep), draws * kTokens);
  const std::vector<TokenSeq> pl(static_cast<std::size_t>(draws), layout);
  const std::vector<TokenSeq> ul(static_cast<std::size_t>(draws), unconditional_tokens());
  auto pair = predict_noise_pair(p, tape.constant(x_patches), std::vector<int>(static_cast<std::size_t>(draws), t),
                                 p_rows, pl, tape.constant(repeat_rows(phi_rows, draws)), ul);
  const Matrix<Scalar> w = patch_weight_block<Scalar>(mask);
  const double mean = std::max(mask.pixel_weights.mean(), kMaskMeanFloor);
  const Scalar k = static_cast<Scalar>(1.0 / (mean * static_cast<double>(draws)));
  Var<Scalar> total;
  for (Index d = 0; d < draws; ++d) {
    std::vector<RowTerm> pick;
    for (int r = 0; r < kPatches; ++r) pick.push_back({r, d * kPatches + r, 1.0});
    auto diff = combine_rows(sub(pair.cond, pair.uncond), std::move(pick), kPatches);
    auto n = l2_norm(mul_const(diff, w));
    total = d == 0 ? n : add(total, n);
  }
  return scale(total, k);
}

/// Gradient descent on the prompt rows. The loss uses the first sampler
/// timestep with fresh x_T draws from a stream seeded by `seed`; the final
/// image reuses `generation_seed` so an untouched embedding regenerates the
/// unmitigated image exactly.
MitigationResult mitigate_prompt(const DenoiserParams<float>& params, const PromptEmbedding<float>& e_p,
                                 const BEMask& mask, const NoiseSchedule& s, const SamplerConfig& sampler,
                                 const MitigationConfig& cfg, std::uint64_t seed, std::uint64_t generation_seed,
                                 const MitigationReference& ref);

/// Same procedure with the unmasked magnitude.
MitigationResult mitigate_prompt_baseline(const DenoiserParams<float>& params, const PromptEmbedding<float>& e_p,
                                          const NoiseSchedule& s, const SamplerConfig& sampler,
                                          const MitigationConfig& cfg, std::uint64_t seed,
                                          std::uint64_t generation_seed, const MitigationReference& ref);

/// 1 - ||mean colour outside the template region - palette colour|| / (2 sqrt 3), clipped to [0, 1].
double utility_score(const Image& image, int attribute_id, const Region& template_region);

}  // namespace bemem
