#include "doctest.h"

#include "bemem/grad_check.hpp"
#include "bemem/mitigate.hpp"

#include <limits>

using namespace bemem;

namespace {

struct Fixture {
  Corpus corpus;
  DenoiserParams<float> params;
  NoiseSchedule sched = make_schedule(10, 1e-3, 0.3);
  SamplerConfig sampler;
  Fixture() {
    CorpusSpec spec;
    spec.global_families = 1;
    spec.local_families = 1;
    spec.nonmem_items = 4;
    spec.duplication = 50;
    corpus = build_corpus(spec);
    params = init_denoiser<float>(corpus.vocab.size(), 21);
    sampler.steps = 10;
  }
};

}  // namespace

TEST_CASE("utility score") {
  const Region top;
  Image img(kPixels, kChannels);
  const auto red = palette_color(0);
  for (int i = 0; i < kPixels; ++i)
    for (int c = 0; c < kChannels; ++c) img(i, c) = red[static_cast<std::size_t>(c)];
  CHECK(utility_score(img, 0, top) == doctest::Approx(1.0));
  img = -img;
  CHECK(utility_score(img, 0, top) == doctest::Approx(0.0));
  img.setZero();
  CHECK(utility_score(img, 0, top) == doctest::Approx(0.5));
  // the template region does not count
  for (int i = 0; i < kPixels / 2; ++i) img.row(i).setConstant(1.0f);
  CHECK(utility_score(img, 0, top) == doctest::Approx(0.5));
}

TEST_CASE("mitigation loss gradient") {
  Fixture f;
  const auto pd = f.params.cast<double>();
  const auto ep = embed_prompt(pd, f.corpus.train.front().tokens);
  const MatrixD phi = unconditional_embedding(pd).rows;
  Rng rng(2);
  MatrixD x(2 * kPatches, kPatchDim);
  x << rng.normal_matrix<double>(kPatches, kPatchDim), rng.normal_matrix<double>(kPatches, kPatchDim);
  Eigen::VectorXd w(kPatches);
  for (int p = 0; p < kPatches; ++p) w[p] = rng.uniform();
  const auto mask = BEMask::from_patches(w);
  ScalarFn fn = [&](Tape<double>& tape, const Var<double>& rows) {
    BoundParams<double> bound(tape, pd.set, false);
    return mitigation_loss(bound, rows, ep.layout, phi, x, 10, mask);
  };
  const auto r = grad_check(fn, ep.rows);
  CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("mitigate_prompt") {
  Fixture f;
  const auto& item = f.corpus.train.front();
  const auto ep = embed_prompt(f.params, item.tokens);
  Eigen::VectorXd w(kPatches);
  for (int p = 0; p < kPatches; ++p) w[p] = 0.1 + 0.05 * p;
  const auto mask = BEMask::from_patches(w);
  MitigationReference ref{&item.image, item.attribute_id, Region{}, mask};
  MitigationConfig cfg;
  cfg.max_iters = 5;
  cfg.lr = 0.05;

  SUBCASE("infinite target is a no-op") {
    cfg.target = std::numeric_limits<double>::infinity();
    const auto r = mitigate_prompt(f.params, ep, mask, f.sched, f.sampler, cfg, 1, 9, ref);
    CHECK(r.iterations == 0);
    CHECK(r.reached_target);
    CHECK(r.optimized.rows == ep.rows);
    CHECK(r.generation.x0 == sample(f.params, ep, f.sched, f.sampler, 9).x0);
  }

  SUBCASE("descends and is reproducible") {
    const auto a = mitigate_prompt(f.params, ep, mask, f.sched, f.sampler, cfg, 1, 9, ref);
    const auto b = mitigate_prompt(f.params, ep, mask, f.sched, f.sampler, cfg, 1, 9, ref);
    CHECK(a.iterations == 5);
    CHECK(a.loss_trace.size() == 6);
    CHECK(!a.reached_target);
    CHECK(a.optimized.rows != ep.rows);
    CHECK(a.optimized.rows == b.optimized.rows);
    CHECK(a.loss_trace == b.loss_trace);
    CHECK(a.generation.x0 == b.generation.x0);
    CHECK(a.utility >= 0.0);
    CHECK(a.utility <= 1.0);
    CHECK(a.ls <= 0.0);
  }

  SUBCASE("unit mask matches the baseline") {
    const auto a = mitigate_prompt(f.params, ep, BEMask::constant(1.0), f.sched, f.sampler, cfg, 3, 9, ref);
    const auto b = mitigate_prompt_baseline(f.params, ep, f.sched, f.sampler, cfg, 3, 9, ref);
    CHECK(a.loss_trace == b.loss_trace);
    CHECK(a.optimized.rows == b.optimized.rows);
  }

  SUBCASE("lowers the loss with enough steps") {
    cfg.max_iters = 40;
    cfg.lr = 0.5;
    cfg.noise_samples = 2;
    const auto r = mitigate_prompt(f.params, ep, mask, f.sched, f.sampler, cfg, 4, 9, ref);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 5; ++i) head += r.loss_trace[static_cast<std::size_t>(i)];
    for (int i = 0; i < 5; ++i) tail += r.loss_trace[r.loss_trace.size() - 1 - static_cast<std::size_t>(i)];
    CHECK(tail < head);
  }

  SUBCASE("divergence aborts") {
    cfg.divergence_factor = 0.5;
    CHECK_THROWS_AS(mitigate_prompt(f.params, ep, mask, f.sched, f.sampler, cfg, 1, 9, ref), MitigationDiverged);
  }
}
