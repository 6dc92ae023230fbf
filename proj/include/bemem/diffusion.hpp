#pragma once

// Epsilon-prediction training and classifier-free-guidance ancestral sampling.

#include "bemem/adam.hpp"
#include "bemem/denoiser.hpp"
#include "bemem/schedule.hpp"

#include <cstdint>
#include <vector>

namespace bemem {

class TrainingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainExample {
  const Image* image = nullptr;
  TokenSeq tokens;
};

/// One noised minibatch: x_t = q_sample(x0, t, eps), patch layout.
template <typename Scalar>
struct NoisedBatch {
  Matrix<Scalar> x_t;  // [items*kPatches x kPatchDim]
  Matrix<Scalar> eps;  // same shape
  std::vector<int> t;
  std::vector<TokenSeq> tokens;  // after conditioning dropout
};

/// Draws t uniformly in [1, T], eps ~ N(0, I), and replaces each prompt by the
/// all-padding sequence with probability drop_prob.
template <typename Scalar>
NoisedBatch<Scalar> make_noised_batch(const std::vector<TrainExample>& batch, const NoiseSchedule& s,
                                      double drop_prob, Rng& rng) {
  if (batch.empty()) throw TrainingError("train_step: empty batch");
  if (!(drop_prob >= 0.0 && drop_prob < 1.0)) throw TrainingError("train_step: drop_prob must be in [0, 1)");
  const Index n = static_cast<Index>(batch.size());
  NoisedBatch<Scalar> nb;
  nb.x_t.resize(n * kPatches, kPatchDim);
  nb.eps.resize(n * kPatches, kPatchDim);
  for (Index b = 0; b < n; ++b) {
    const auto& ex = batch[static_cast<std::size_t>(b)];
    const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.steps)));
    const bool drop = rng.uniform() < drop_prob;
    Matrix<Scalar> eps = rng.normal_matrix<Scalar>(kPatches, kPatchDim);
    const Matrix<Scalar> x0 = patchify(ex.image->template cast<Scalar>());
    nb.x_t.middleRows(b * kPatches, kPatches) = q_sample(x0, t, eps, s);
    nb.eps.middleRows(b * kPatches, kPatches) = eps;
    nb.t.push_back(t);
    nb.tokens.push_back(drop ? unconditional_tokens() : ex.tokens);
  }
  return nb;
}

/// Mean squared error of the noise prediction over every element of the batch.
template <typename Scalar>
Var<Scalar> batch_loss(const BoundParams<Scalar>& p, const NoisedBatch<Scalar>& nb) {
  auto& tape = *p.vars().front().tape;
  auto x = tape.constant(nb.x_t);
  auto rows = gather_tokens(p, nb.tokens);
  auto fw = denoiser_forward(p, x, nb.t, rows, nb.tokens);
  return mse(fw.eps, nb.eps);
}

/// One optimizer step on a minibatch. Returns the pre-update loss.
template <typename Scalar>
double train_step(DenoiserParams<Scalar>& params, Adam<Scalar>& opt, const std::vector<TrainExample>& batch,
                  const NoiseSchedule& s, double drop_prob, Rng& rng, double lr_scale = 1.0) {
  const auto nb = make_noised_batch<Scalar>(batch, s, drop_prob, rng);
  Tape<Scalar> tape;
  BoundParams<Scalar> bound(tape, params.set, true);
  auto loss = batch_loss(bound, nb);
  const double value = loss.value()(0, 0);
  if (!std::isfinite(value)) throw NumericalError("train_step: non-finite loss");
  tape.backward(loss);
  opt.step(params.set, bound.grads(), lr_scale);
  return value;
}

/// Conditional and unconditional predictions at shared (x_t, t). Both passes
/// have identical shapes, so e_p == e_phi gives bit-identical outputs.
template <typename Scalar>
struct NoisePair {
  Var<Scalar> cond;
  Var<Scalar> uncond;
  std::vector<Matrix<Scalar>> cond_weights;
};

template <typename Scalar>
NoisePair<Scalar> predict_noise_pair(const BoundParams<Scalar>& p, const Var<Scalar>& x_patches,
                                     const std::vector<int>& t, const Var<Scalar>& e_p,
                                     const std::vector<TokenSeq>& p_layouts, const Var<Scalar>& e_phi,
                                     const std::vector<TokenSeq>& phi_layouts) {
  require_same_shape(e_p.value(), e_phi.value(), "predict_noise_pair");
  auto c = denoiser_forward(p, x_patches, t, e_p, p_layouts);
  auto u = denoiser_forward(p, x_patches, t, e_phi, phi_layouts);
  return {c.eps, u.eps, std::move(c.cross_weights)};
}

/// Stacks `copies` of one embedding's rows.
template <typename Scalar>
Matrix<Scalar> repeat_rows(const Matrix<Scalar>& rows, Index copies) {
  Matrix<Scalar> out(rows.rows() * copies, rows.cols());
  for (Index i = 0; i < copies; ++i) out.middleRows(i * rows.rows(), rows.rows()) = rows;
  return out;
}

/// Cross-attention probabilities of one (step, layer, head).
struct AttentionRecord {
  int step = 0;  // sampler step index, 0 = first
  int layer = 0;
  int head = 0;
  MatrixF weights;  // [kPatches x kTokens]
};

/// Everything recorded along one generation.
struct TrajectoryRecord {
  std::uint64_t seed = 0;
  double guidance = 0.0;
  TokenSeq tokens;
  std::vector<int> timesteps;  // model timestep at each sampler step, sampling order
  std::vector<MatrixF> eps_cond;    // image layout, first `keep_eps` steps only
  std::vector<MatrixF> eps_uncond;
  MatrixD patch_sq_diff;  // [steps x kPatches] squared norm of (eps_cond - eps_uncond) per patch
  MatrixF x0;             // final state, unclamped
  std::vector<AttentionRecord> final_attention;  // conditional pass, last step, every layer and head

  int steps() const { return static_cast<int>(timesteps.size()); }
  /// Decoded image clamped to the data range.
  Image image() const { return x0.cwiseMax(-1.0f).cwiseMin(1.0f); }
};

struct SamplerConfig {
  int steps = 100;
  double guidance = 5.0;
  int keep_eps = 0;  // number of leading steps whose raw eps pair is stored
};

/// Guided noise estimate eps_u + w (eps_c - eps_u).
template <typename Derived>
Matrix<typename Derived::Scalar> guided_eps(const Eigen::MatrixBase<Derived>& cond,
                                            const Eigen::MatrixBase<Derived>& uncond, double guidance) {
  using Scalar = typename Derived::Scalar;
  if (guidance == 1.0) return cond;
  return (uncond + static_cast<Scalar>(guidance) * (cond - uncond)).eval();
}

/// Timesteps visited by a sampler with `steps` <= T steps, descending, ending at 1.
std::vector<int> sampler_timesteps(const NoiseSchedule& s, int steps);

/// One generation per seed, batched. Each generation draws from its own
/// stream seeded by its seed, so results do not depend on batch composition.
std::vector<TrajectoryRecord> sample_batch(const DenoiserParams<float>& params,
                                           const PromptEmbedding<float>& prompt, const NoiseSchedule& s,
                                           const SamplerConfig& cfg, const std::vector<std::uint64_t>& seeds);

TrajectoryRecord sample(const DenoiserParams<float>& params, const PromptEmbedding<float>& prompt,
                        const NoiseSchedule& s, const SamplerConfig& cfg, std::uint64_t seed);

}  // namespace bemem
