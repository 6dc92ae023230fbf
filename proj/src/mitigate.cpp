#include "bemem/mitigate.hpp"

#include "bemem/similarity.hpp"

#include <cmath>

namespace bemem {

double utility_score(const Image& image, int attribute_id, const Region& template_region) {
  const auto c = palette_color(attribute_id);
  double acc[3] = {0.0, 0.0, 0.0};
  int n = 0;
  for (int y = 0; y < kImageSide; ++y)
    for (int x = 0; x < kImageSide; ++x) {
      if (template_region.contains(y, x)) continue;
      for (int ch = 0; ch < kChannels; ++ch) acc[ch] += image(y * kImageSide + x, ch);
      ++n;
    }
  if (n == 0) return 0.0;
  double d2 = 0.0;
  for (int ch = 0; ch < kChannels; ++ch) {
    const double d = acc[ch] / n - c[static_cast<std::size_t>(ch)];
    d2 += d * d;
  }
  return std::clamp(1.0 - std::sqrt(d2) / (2.0 * std::sqrt(3.0)), 0.0, 1.0);
}

MitigationResult mitigate_prompt(const DenoiserParams<float>& params, const PromptEmbedding<float>& e_p,
                                 const BEMask& mask, const NoiseSchedule& s, const SamplerConfig& sampler,
                                 const MitigationConfig& cfg, std::uint64_t seed, std::uint64_t generation_seed,
                                 const MitigationReference& ref) {
  if (cfg.max_iters < 0 || cfg.noise_samples < 1 || !(cfg.lr > 0.0))
    throw std::invalid_argument("mitigate: invalid configuration");
  MitigationResult r;
  r.original = e_p;
  r.optimized = e_p;
  r.target = cfg.target;
  const int t = sampler_timesteps(s, sampler.steps).front();
  const MatrixF phi = unconditional_embedding(params).rows;
  Rng rng(derive_seed(seed, "mitigate"));

  double first = 0.0;
  for (int it = 0;; ++it) {
    MatrixF x(cfg.noise_samples * kPatches, kPatchDim);
    for (int d = 0; d < cfg.noise_samples; ++d)
      x.middleRows(d * kPatches, kPatches) = patchify(rng.normal_matrix<float>(kPixels, kChannels));
    Tape<float> tape;
    BoundParams<float> bound(tape, params.set, false);
    auto rows = tape.variable(r.optimized.rows);
    auto loss = mitigation_loss(bound, rows, e_p.layout, phi, x, t, mask);
    const double value = loss.value()(0, 0);
    if (!std::isfinite(value)) throw NumericalError("mitigate: non-finite loss");
    r.loss_trace.push_back(value);
    if (it == 0) first = value;
    if (value > cfg.divergence_factor * first)
      throw MitigationDiverged("mitigate: loss " + std::to_string(value) + " exceeds " +
                               std::to_string(cfg.divergence_factor) + "x the initial " + std::to_string(first));
    if (value <= cfg.target) {
      r.reached_target = true;
      break;
    }
    if (it == cfg.max_iters) break;
    tape.backward(loss);
    r.optimized.rows -= static_cast<float>(cfg.lr) * rows.grad();
    r.optimized.is_unconditional = false;
    ++r.iterations;
  }

  r.generation = sample(params, r.optimized, s, sampler, generation_seed);
  if (ref.image) {
    const Image img = r.generation.image();
    r.utility = utility_score(img, ref.attribute_id, ref.template_region);
    r.sscd = sscd_sub(img, *ref.image);
    r.s = s_metric(img, *ref.image);
    r.ls = ls_metric(img, *ref.image, ref.ls_mask.pixel_weights);
  }
  return r;
}

MitigationResult mitigate_prompt_baseline(const DenoiserParams<float>& params, const PromptEmbedding<float>& e_p,
                                          const NoiseSchedule& s, const SamplerConfig& sampler,
                                          const MitigationConfig& cfg, std::uint64_t seed,
                                          std::uint64_t generation_seed, const MitigationReference& ref) {
  return mitigate_prompt(params, e_p, BEMask::constant(1.0), s, sampler, cfg, seed, generation_seed, ref);
}

}  // namespace bemem
