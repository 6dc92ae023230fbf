#include "doctest.h"

#include "bemem/detect.hpp"
#include "bemem/similarity.hpp"
#include "support/synthetic.hpp"

#include <filesystem>
#include <fstream>

using namespace bemem;
using bemem::testing::difference_trajectory;
using bemem::testing::random_trajectory;
using bemem::testing::top_half_patches;

TEST_CASE("be mask extraction") {
  Rng rng(1);
  auto tr = random_trajectory(rng, 3, 0);

  SUBCASE("uniform attention") {
    const auto m = extract_be_mask(tr);
    for (int p = 0; p < kPatches; ++p) CHECK(m.patch_weights[p] == doctest::Approx(0.125));
    CHECK(be_score(m) == doctest::Approx(0.125));
  }

  SUBCASE("layer average") {
    const int end = tr.tokens.end_position();
    for (auto& a : tr.final_attention) {
      a.weights.setZero();
      a.weights.col(a.layer == 0 ? end : 0).setOnes();
    }
    const auto m = extract_be_mask(tr);
    for (int p = 0; p < kPatches; ++p) CHECK(m.patch_weights[p] == doctest::Approx(0.5));
    CHECK(extract_be_mask(tr, {0}).patch_weights.minCoeff() == 1.0);
    CHECK(extract_be_mask(tr, {1}).patch_weights.maxCoeff() == 0.0);
  }

  SUBCASE("END column zero") {
    for (auto& a : tr.final_attention) a.weights.col(tr.tokens.end_position()).setZero();
    const auto m = extract_be_mask(tr);
    CHECK(be_score(m) == 0.0);
    const auto d = detection_stat_masked(tr, 0, m);
    CHECK(d.floored);
    CHECK(d.value == 0.0);
  }

  SUBCASE("pixels replicate patches") {
    Eigen::VectorXd w(kPatches);
    for (int p = 0; p < kPatches; ++p) w[p] = p / 16.0;
    const auto m = BEMask::from_patches(w);
    for (int y = 0; y < kImageSide; ++y)
      for (int x = 0; x < kImageSide; ++x)
        CHECK(m.pixel_weights[y * kImageSide + x] == w[(y / kPatchSide) * kGridSide + x / kPatchSide]);
    CHECK(m.pixel_weights.mean() == doctest::Approx(w.mean()).epsilon(1e-12));
    CHECK(be_score_max(m) == 15.0 / 16.0);
  }

  SUBCASE("errors") {
    auto missing = tr;
    missing.final_attention.clear();
    CHECK_THROWS_AS(extract_be_mask(missing), MaskError);
    CHECK_THROWS_AS(extract_be_mask(tr, {7}), MaskError);
    auto no_end = tr;
    no_end.tokens = unconditional_tokens();
    CHECK_THROWS_AS(extract_be_mask(no_end), MaskError);
  }

  SUBCASE("deterministic") {
    CHECK(extract_be_mask(tr).patch_weights == extract_be_mask(tr).patch_weights);
  }
}

TEST_CASE("mask export round trip") {
  Eigen::VectorXd w(kPatches);
  for (int p = 0; p < kPatches; ++p) w[p] = 1.0 / (p + 3.0);
  const auto m = BEMask::from_patches(w);
  const auto dir = std::filesystem::temp_directory_path();
  export_mask_pgm(m, dir / "bemem_mask.pgm");
  export_mask_values(m, dir / "bemem_mask.txt");
  CHECK(load_mask_values(dir / "bemem_mask.txt").patch_weights == w);
  std::ifstream f(dir / "bemem_mask.pgm", std::ios::binary);
  std::string magic;
  int wd = 0, ht = 0, mx = 0;
  f >> magic >> wd >> ht >> mx;
  f.get();
  CHECK(magic == "P5");
  CHECK(wd == 16);
  CHECK(mx == 255);
  std::string px((std::istreambuf_iterator<char>(f)), {});
  REQUIRE(px.size() == kPixels);
  CHECK(static_cast<unsigned char>(px[0]) == std::lround(255.0 / 3.0));
}

TEST_CASE("baseline detector") {
  SUBCASE("identical predictions") {
    const auto tr = difference_trajectory(MatrixF::Zero(kPixels, kChannels));
    CHECK(detection_stat_baseline(tr, 1).value == 0.0);
  }
  SUBCASE("constant difference") {
    const auto tr = difference_trajectory(MatrixF::Constant(kPixels, kChannels, 2.0f));
    CHECK(detection_stat_baseline(tr, 1).value == doctest::Approx(2.0 * std::sqrt(768.0)).epsilon(1e-12));
  }
  SUBCASE("equal per-step norms") {
    Rng rng(3);
    auto tr = random_trajectory(rng, 10, 0);
    for (int k = 0; k < 10; ++k) tr.patch_sq_diff.row(k) = tr.patch_sq_diff.row(0);
    const double d1 = detection_stat_baseline(tr, 1).value;
    CHECK(detection_stat_baseline(tr, 10).value == doctest::Approx(d1).epsilon(1e-12));
    CHECK(detection_stat_baseline(tr, 0).steps_used == 10);
  }
  SUBCASE("errors") {
    Rng rng(3);
    auto tr = random_trajectory(rng, 4, 0);
    CHECK_THROWS(detection_stat_baseline(tr, 5));
    TrajectoryRecord empty;
    CHECK_THROWS(detection_stat_baseline(empty, 0));
  }
}

TEST_CASE("raw pairs and patch norms agree") {
  Rng rng(5);
  auto tr = random_trajectory(rng, 6, 6);
  auto stripped = tr;
  stripped.eps_cond.clear();
  stripped.eps_uncond.clear();
  Eigen::VectorXd w(kPatches);
  for (int p = 0; p < kPatches; ++p) w[p] = rng.uniform();
  const auto m = BEMask::from_patches(w);
  for (int k = 0; k < 6; ++k) {
    CHECK(step_magnitude(tr, k, nullptr) == doctest::Approx(step_magnitude(stripped, k, nullptr)).epsilon(1e-9));
    CHECK(step_magnitude(tr, k, &m) == doctest::Approx(step_magnitude(stripped, k, &m)).epsilon(1e-9));
  }
}

TEST_CASE("masked detector") {
  Rng rng(7);
  SUBCASE("constant masks reduce to the baseline") {
    for (int i = 0; i < 20; ++i) {
      const auto tr = random_trajectory(rng, 12, 3);
      for (double c : {1.0, 0.3, 0.77}) {
        for (int k : {1, 10, 0}) {
          const double b = detection_stat_baseline(tr, k).value;
          const double m = detection_stat_masked(tr, k, BEMask::constant(c)).value;
          CHECK(std::abs(m - b) <= 1e-9 * b);
        }
      }
      const auto one = BEMask::constant(1.0);
      CHECK(detection_stat_masked(tr, 1, one).value == detection_stat_baseline(tr, 1).value);
    }
  }

  SUBCASE("top-half difference with top-half mask") {
    MatrixF diff = MatrixF::Zero(kPixels, kChannels);
    for (int i = 0; i < kPixels / 2; ++i) diff.row(i).setConstant(1.0f);
    const auto tr = difference_trajectory(diff);
    const double b = detection_stat_baseline(tr, 1).value;
    const double m = detection_stat_masked(tr, 1, BEMask::from_patches(top_half_patches())).value;
    CHECK(b == doctest::Approx(std::sqrt(384.0)));
    CHECK(m == doctest::Approx(2.0 * std::sqrt(384.0)));
    CHECK(m > b);
  }

  SUBCASE("enlarging the difference region never lowers the masked score") {
    Eigen::VectorXd w(kPatches);
    for (int p = 0; p < kPatches; ++p) w[p] = rng.uniform();
    const auto mask = BEMask::from_patches(w);
    MatrixF diff = MatrixF::Zero(kPixels, kChannels);
    double prev = 0.0;
    for (int i = 0; i < kPixels; i += 7) {
      diff.row(i) = rng.normal_matrix<float>(1, kChannels);
      const double d = detection_stat_masked(difference_trajectory(diff), 1, mask).value;
      CHECK(d >= prev);
      prev = d;
    }
  }

  SUBCASE("shape mismatch") {
    BEMask bad;
    bad.patch_weights = Eigen::VectorXd::Ones(3);
    bad.pixel_weights = Eigen::VectorXd::Ones(3);
    CHECK_THROWS_AS(detection_stat_masked(random_trajectory(rng, 2, 0), 1, bad), ShapeError);
  }
}

TEST_CASE("similarity scores") {
  Rng rng(11);
  const MatrixD x = rng.normal_matrix<double>(kPixels, kChannels);
  const MatrixD xc = x.array() - mean_of(x);
  const auto ones = Eigen::VectorXd::Ones(kPixels);

  CHECK(sscd_sub(x, x) == doctest::Approx(1.0));
  CHECK(sscd_sub(-xc, xc) == doctest::Approx(0.0));
  CHECK(sscd_sub(MatrixD::Zero(kPixels, kChannels), x) == 0.5);

  SUBCASE("half copy matches the closed form") {
    MatrixD h = x;
    h.bottomRows(kPixels / 2) = rng.normal_matrix<double>(kPixels / 2, kChannels);
    const MatrixD a = h.array() - mean_of(h), b = xc;
    const double cosv = (a.array() * b.array()).sum() / (a.norm() * b.norm());
    const double s = sscd_sub(h, x);
    CHECK(s == doctest::Approx((1.0 + cosv) / 2.0).epsilon(1e-12));
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }

  SUBCASE("S and LS") {
    CHECK(s_metric(x, x) == 0.0);
    CHECK(s_metric(-xc, xc) == 0.0);
    const MatrixD shifted = x.array() + 0.1;
    CHECK(s_metric(shifted, x) == doctest::Approx(-0.1 * std::sqrt(768.0)));
    CHECK(ls_metric(shifted, x, ones) == s_metric(shifted, x));
    CHECK(ls_metric(shifted, x, Eigen::VectorXd::Zero(kPixels)) == 0.0);

    const auto top = BEMask::from_patches(top_half_patches());
    MatrixD bottom = x;
    bottom.bottomRows(kPixels / 2).array() += 0.3;
    CHECK(s_metric(bottom, x) < 0.0);
    CHECK(ls_metric(bottom, x, top.pixel_weights) == 0.0);
  }

  SUBCASE("LS ignores zero-mask pixels; bounded by S") {
    Eigen::VectorXd w(kPatches);
    for (int p = 0; p < kPatches; ++p) w[p] = p < 8 ? rng.uniform() : 0.0;
    const auto m = BEMask::from_patches(w);
    for (int trial = 0; trial < 50; ++trial) {
      MatrixD g = x + 0.2 * rng.normal_matrix<double>(kPixels, kChannels);
      const double ls = ls_metric(g, x, m.pixel_weights);
      const double s = s_metric(g, x);
      CHECK(ls <= 0.0);
      CHECK(s <= 0.0);
      CHECK(std::abs(ls) <= std::abs(s));
      MatrixD g2 = g;
      for (int i = 0; i < kPixels; ++i)
        if (m.pixel_weights[i] == 0.0) g2.row(i) += 0.1 * rng.normal_matrix<double>(1, kChannels);
      if (sscd_sub(g2, x) > kSscdThreshold) CHECK(ls_metric(g2, x, m.pixel_weights) == ls);
    }
  }
}

TEST_CASE("roc metrics") {
  SUBCASE("perfect separation") {
    const std::vector<double> s = {0.9, 0.8, 0.2, 0.1};
    const std::vector<int> l = {1, 1, 0, 0};
    const auto r = roc_metrics(s, l);
    CHECK(r.auc == 1.0);
    CHECK(r.f1 == 1.0);
    CHECK(r.tpr_at_1pct_fpr == 1.0);
  }
  SUBCASE("three of four pairs ordered") {
    const std::vector<double> s = {0.9, 0.6, 0.4, 0.1};
    const std::vector<int> l = {1, 0, 1, 0};
    CHECK(roc_metrics(s, l).auc == 0.75);
  }
  SUBCASE("all ties") {
    const std::vector<double> s(6, 0.3);
    const std::vector<int> l = {1, 0, 1, 0, 0, 1};
    CHECK(roc_metrics(s, l).auc == 0.5);
  }
  SUBCASE("degenerate labels") {
    const std::vector<double> s = {0.1, 0.2};
    const std::vector<int> l = {1, 1};
    CHECK_THROWS_AS(roc_metrics(s, l), DegenerateLabels);
  }
}
