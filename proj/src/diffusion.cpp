#include "bemem/diffusion.hpp"

#include <cmath>

namespace bemem {

std::vector<int> sampler_timesteps(const NoiseSchedule& s, int steps) {
  if (steps < 1 || steps > s.steps) throw ScheduleError("sampler steps must be in [1, T]");
  std::vector<int> ts;
  if (steps == 1) return {s.steps};
  for (int i = steps - 1; i >= 0; --i)
    ts.push_back(1 + static_cast<int>(std::lround(static_cast<double>(i) * (s.steps - 1) / (steps - 1))));
  return ts;
}

std::vector<TrajectoryRecord> sample_batch(const DenoiserParams<float>& params,
                                           const PromptEmbedding<float>& prompt, const NoiseSchedule& s,
                                           const SamplerConfig& cfg, const std::vector<std::uint64_t>& seeds) {
  if (!(cfg.guidance >= 0.0)) throw ScheduleError("guidance must be >= 0");
  if (prompt.rows.rows() != kTokens || prompt.rows.cols() != kWidth)
    throw ShapeError("sample: prompt embedding must be [8x64]");
  const auto ts = sampler_timesteps(s, cfg.steps);
  const int n_steps = static_cast<int>(ts.size());
  const Index g = static_cast<Index>(seeds.size());
  if (g == 0) return {};

  const auto phi = unconditional_embedding(params);
  const MatrixF p_rows = repeat_rows(prompt.rows, g);
  const MatrixF phi_rows = repeat_rows(phi.rows, g);
  const std::vector<TokenSeq> p_layout(static_cast<std::size_t>(g), prompt.layout);
  const std::vector<TokenSeq> phi_layout(static_cast<std::size_t>(g), phi.layout);

  std::vector<Rng> rngs;
  std::vector<TrajectoryRecord> out(static_cast<std::size_t>(g));
  MatrixF x(g * kPixels, kChannels);
  for (Index i = 0; i < g; ++i) {
    auto& r = out[static_cast<std::size_t>(i)];
    r.seed = seeds[static_cast<std::size_t>(i)];
    r.guidance = cfg.guidance;
    r.tokens = prompt.layout;
    r.timesteps = ts;
    r.patch_sq_diff = MatrixD::Zero(n_steps, kPatches);
    rngs.emplace_back(r.seed);
    x.middleRows(i * kPixels, kPixels) = rngs.back().normal_matrix<float>(kPixels, kChannels);
  }

  for (int k = 0; k < n_steps; ++k) {
    const int t = ts[static_cast<std::size_t>(k)];
    const double ab = s.alpha_bar(t);
    const double ab_prev = k + 1 < n_steps ? s.alpha_bar(ts[static_cast<std::size_t>(k + 1)]) : 1.0;
    // full-length sampling uses the schedule entries directly
    const double beta = n_steps == s.steps ? s.beta(t) : 1.0 - ab / ab_prev;
    const double alpha = n_steps == s.steps ? s.alpha(t) : 1.0 - beta;

    MatrixF xp(g * kPatches, kPatchDim);
    for (Index i = 0; i < g; ++i) xp.middleRows(i * kPatches, kPatches) = patchify(x.middleRows(i * kPixels, kPixels));

    Tape<float> tape;
    BoundParams<float> bound(tape, params.set, false);
    auto pair = predict_noise_pair(bound, tape.constant(xp), std::vector<int>(static_cast<std::size_t>(g), t),
                                   tape.constant(p_rows), p_layout, tape.constant(phi_rows), phi_layout);
    const MatrixF& ec = pair.cond.value();
    const MatrixF& eu = pair.uncond.value();
    require_finite(ec, "conditional noise prediction");
    require_finite(eu, "unconditional noise prediction");

    const float c_eps = static_cast<float>(beta / std::sqrt(1.0 - ab));
    const float c_mean = static_cast<float>(1.0 / std::sqrt(alpha));
    const float sigma = static_cast<float>(std::sqrt(beta));
    for (Index i = 0; i < g; ++i) {
      auto& r = out[static_cast<std::size_t>(i)];
      const MatrixF c = ec.middleRows(i * kPatches, kPatches);
      const MatrixF u = eu.middleRows(i * kPatches, kPatches);
      for (int p = 0; p < kPatches; ++p) r.patch_sq_diff(k, p) = squared_norm(c.row(p).cast<double>() - u.row(p).cast<double>());
      if (k < cfg.keep_eps) {
        r.eps_cond.push_back(unpatchify(c));
        r.eps_uncond.push_back(unpatchify(u));
      }
      const MatrixF e = unpatchify(guided_eps(c, u, cfg.guidance));
      auto xi = x.middleRows(i * kPixels, kPixels);
      MatrixF mean = (xi - c_eps * e) * c_mean;
      if (k + 1 < n_steps) mean += sigma * rngs[static_cast<std::size_t>(i)].normal_matrix<float>(kPixels, kChannels);
      xi = mean;
      if (k + 1 == n_steps) {
        for (int layer = 0; layer < kBlocks; ++layer)
          for (int h = 0; h < kHeads; ++h)
            r.final_attention.push_back(
                {k, layer, h, pair.cond_weights[static_cast<std::size_t>(layer)].middleRows((i * kHeads + h) * kPatches, kPatches)});
      }
    }
    require_finite(x, "sampler state");
  }
  for (Index i = 0; i < g; ++i) out[static_cast<std::size_t>(i)].x0 = x.middleRows(i * kPixels, kPixels);
  return out;
}

TrajectoryRecord sample(const DenoiserParams<float>& params, const PromptEmbedding<float>& prompt,
                        const NoiseSchedule& s, const SamplerConfig& cfg, std::uint64_t seed) {
  return sample_batch(params, prompt, s, cfg, {seed}).front();
}

}  // namespace bemem
