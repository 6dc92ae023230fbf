#include "doctest.h"

#include "bemem/rng.hpp"
#include "bemem/schedule.hpp"

using namespace bemem;

TEST_CASE("make_schedule constant beta") {
  const auto s = make_schedule(4, 0.1, 0.1);
  const double expect[] = {0.9, 0.81, 0.729, 0.6561};
  for (int t = 1; t <= 4; ++t) {
    CHECK(s.alpha_bar(t) == doctest::Approx(expect[t - 1]).epsilon(1e-15));
    CHECK(s.alpha(t) == 0.9);
  }
  for (int t = 2; t <= 4; ++t) CHECK(s.alpha_bar(t) == s.alpha_bar(t - 1) * s.alpha(t));
}

TEST_CASE("make_schedule long linear ramp") {
  const auto s = make_schedule(1000, 1e-4, 0.02);
  CHECK(s.alpha_bar(1000) < 0.01);
  CHECK(s.beta(1) == doctest::Approx(1e-4));
  CHECK(s.beta(1000) == doctest::Approx(0.02));
  for (int t = 2; t <= 1000; ++t) {
    CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    CHECK(s.beta(t) > 0.0);
    CHECK(s.beta(t) < 1.0);
  }
}

TEST_CASE("make_schedule small beta limit") {
  const auto s = make_schedule(10, 1e-12, 1e-12);
  for (int t = 1; t <= 10; ++t) CHECK(s.alpha_bar(t) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("make_schedule rejects bad ranges") {
  CHECK_THROWS_AS(make_schedule(0, 0.1, 0.2), ScheduleError);
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.2), ScheduleError);
  CHECK_THROWS_AS(make_schedule(10, 0.3, 0.2), ScheduleError);
  CHECK_THROWS_AS(make_schedule(10, 0.1, 1.0), ScheduleError);
}

TEST_CASE("q_sample closed form") {
  const auto s = make_schedule(4, 0.1, 0.1);
  const MatrixD x0 = MatrixD::Ones(3, 2);
  const MatrixD zero = MatrixD::Zero(3, 2);
  const MatrixD xt = q_sample(x0, 2, zero, s);
  CHECK((xt.array() - 0.9).abs().maxCoeff() < 1e-15);

  const auto id = make_schedule(3, 1e-300, 1e-300);
  Rng rng(1);
  const MatrixD eps = rng.normal_matrix<double>(3, 2);
  CHECK(q_sample(x0, 1, eps, id) == x0);

  CHECK_THROWS_AS(q_sample(x0, 0, zero, s), ScheduleError);
  CHECK_THROWS_AS(q_sample(x0, 5, zero, s), ScheduleError);
  CHECK_THROWS_AS(q_sample(x0, 1, MatrixD::Zero(2, 2), s), ShapeError);
}

TEST_CASE("q_sample Monte-Carlo variance") {
  const auto s = make_schedule(100, 1e-3, 0.2);
  Rng rng(11);
  const int n = 100000;
  MatrixD x0(1, 4);
  x0 << 0.5, -1.0, 0.0, 1.0;
  for (int t : {1, 10, 50, 100}) {
    Eigen::RowVector4d sum = Eigen::RowVector4d::Zero(), sq = Eigen::RowVector4d::Zero();
    for (int i = 0; i < n; ++i) {
      const MatrixD xt = q_sample(x0, t, rng.normal_matrix<double>(1, 4), s);
      sum += xt.row(0);
      sq += xt.row(0).cwiseProduct(xt.row(0));
    }
    const Eigen::RowVector4d mean = sum / n;
    const Eigen::RowVector4d var = sq / n - mean.cwiseProduct(mean);
    const double target = 1.0 - s.alpha_bar(t);
    INFO("t = " << t);
    for (int j = 0; j < 4; ++j) CHECK(std::abs(var(j) / target - 1.0) < 0.03);
  }
}

TEST_CASE("composed single-step transitions match the closed-form kernel") {
  const auto s = make_schedule(4, 0.05, 0.3);
  Rng rng(5);
  const int n = 100000;
  const double x0 = 0.7;
  for (int t = 1; t <= 4; ++t) {
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
      double x = x0;
      for (int k = 1; k <= t; ++k) x = std::sqrt(s.alpha(k)) * x + std::sqrt(s.beta(k)) * rng.normal();
      sum += x;
      sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    INFO("t = " << t);
    CHECK(std::abs(mean / (std::sqrt(s.alpha_bar(t)) * x0) - 1.0) < 0.03);
    CHECK(std::abs(var / (1.0 - s.alpha_bar(t)) - 1.0) < 0.03);
  }
}
