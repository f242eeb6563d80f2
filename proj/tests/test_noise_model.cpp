#include "pbias/noise_model.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <stdexcept>

#include "oracles.hpp"

using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;
using pbias::BinaryCounts;
using pbias::NoiseModel;

TEST_CASE("NoiseModel and BinaryCounts validate their fields", "[noise_model]") {
  CHECK_NOTHROW(NoiseModel(0.0, 1.0));
  CHECK_THROWS_AS(NoiseModel(-0.01, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(NoiseModel(0.5, 1.01), std::invalid_argument);
  CHECK_THROWS_AS(NoiseModel(std::nan(""), 0.5), std::invalid_argument);
  CHECK_THROWS_AS(BinaryCounts(-1, 3), std::invalid_argument);
  CHECK_THROWS_AS(BinaryCounts(0, 0), std::invalid_argument);
  const BinaryCounts c(3, 1);
  CHECK(c.n() == 4);
  CHECK(c.mu_hat() == 0.75);
}

TEST_CASE("predictive_prob", "[noise_model]") {
  CHECK(pbias::predictive_prob(NoiseModel(1.0, 0.3), 1) == 1.0);
  CHECK(pbias::predictive_prob(NoiseModel(0.0, 0.3), 1) == 0.3);
  CHECK_THAT(pbias::predictive_prob(NoiseModel(0.5, 0.8), 0), WithinAbs(0.4, 1e-15));
  CHECK_THROWS_AS(pbias::predictive_prob(NoiseModel(0.5, 0.8), 2), std::invalid_argument);
}

TEST_CASE("expected_prediction_mean", "[noise_model]") {
  CHECK_THAT(pbias::expected_prediction_mean(NoiseModel(1.0, 0.8), 0.6), WithinAbs(0.6, 1e-15));
  CHECK_THAT(pbias::expected_prediction_mean(NoiseModel(0.0, 0.8), 0.6), WithinAbs(0.8, 1e-15));
  CHECK_THAT(pbias::expected_prediction_mean(NoiseModel(0.5, 0.8), 0.6), WithinAbs(0.7, 1e-15));
  CHECK_THROWS_AS(pbias::expected_prediction_mean(NoiseModel(0.5, 0.8), 1.5), std::invalid_argument);
}

TEST_CASE("expected_prediction_mean is affine with slope m and fixes p_train", "[noise_model][property]") {
  for (int mi = 0; mi <= 10; ++mi) {
    for (int pi = 0; pi <= 10; ++pi) {
      const double m = mi / 10.0, p = pi / 10.0;
      const NoiseModel model(m, p);
      const double f0 = pbias::expected_prediction_mean(model, 0.0);
      CHECK_THAT(f0, WithinAbs((1 - m) * p, 1e-15));
      for (int ui = 0; ui <= 10; ++ui) {
        const double mu = ui / 10.0;
        CHECK_THAT(pbias::expected_prediction_mean(model, mu), WithinAbs(f0 + m * mu, 1e-14));
        CHECK_THAT(pbias::expected_prediction_mean(model, mu), WithinAbs(oracle::positive_prob(m, p, mu), 1e-14));
      }
      CHECK_THAT(pbias::expected_prediction_mean(model, p), WithinAbs(p, 1e-15));
    }
  }
}

TEST_CASE("prediction_variance and standard_error", "[noise_model]") {
  for (double p : {0.0, 0.3, 1.0}) CHECK(pbias::prediction_variance(NoiseModel(1.0, p), 0.5) == 0.0);
  CHECK_THAT(pbias::prediction_variance(NoiseModel(0.0, 0.5), 0.3), WithinAbs(0.25, 1e-15));
  CHECK_THAT(pbias::prediction_variance(NoiseModel(0.5, 0.5), 0.5), WithinAbs(0.1875, 1e-15));

  CHECK(pbias::standard_error(NoiseModel(1.0, 0.4), 0.5, 100) == 0.0);
  CHECK_THAT(pbias::standard_error(NoiseModel(0.0, 0.5), 0.5, 100), WithinAbs(0.05, 1e-15));
  CHECK_THAT(pbias::standard_error(NoiseModel(0.5, 0.5), 0.5, 1000), WithinAbs(0.0136930639376, 1e-12));
  CHECK_THROWS_AS(pbias::standard_error(NoiseModel(0.5, 0.5), 0.5, 0), std::invalid_argument);
}

TEST_CASE("Monte Carlo moments agree with the closed forms", "[noise_model][property]") {
  // Labels are laid out with an exact composition mu, the setting the
  // variance formula describes.
  std::mt19937_64 eng(20261014);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  struct Case {
    double m, p, mu;
  };
  for (const auto c : {Case{0.5, 0.5, 0.5}, Case{0.79, 0.25, 0.6}, Case{0.2, 0.8, 0.1}, Case{0.0, 0.3, 0.7}}) {
    const NoiseModel model(c.m, c.p);
    const int draws = 1'000'000;
    const int positives = static_cast<int>(std::lround(c.mu * draws));
    double sum = 0, within = 0;
    for (int y = 0; y <= 1; ++y) {
      const int count = y ? positives : draws - positives;
      double s = 0, ss = 0;
      for (int i = 0; i < count; ++i) {
        const int yhat = u(eng) < c.m ? y : (u(eng) < c.p ? 1 : 0);
        s += yhat;
        ss += yhat * yhat;
      }
      sum += s;
      within += ss - s * s / count;
    }
    const double mean = sum / draws;
    const double var = within / draws;
    const double se = pbias::standard_error(model, c.mu, draws);
    INFO("m=" << c.m << " p=" << c.p << " mu=" << c.mu);
    CHECK(std::abs(mean - pbias::expected_prediction_mean(model, c.mu)) <= 4 * se);
    CHECK_THAT(var, WithinRel(pbias::prediction_variance(model, c.mu), 0.05));
  }
}

TEST_CASE("log_likelihood named values", "[noise_model]") {
  CHECK_THAT(pbias::log_likelihood(NoiseModel(0.5, 0.5), BinaryCounts(1, 0), 0.5), WithinAbs(std::log(0.5), 1e-15));
  for (double p : {0.0, 0.4, 1.0}) {
    CHECK_THAT(pbias::log_likelihood(NoiseModel(1.0, p), BinaryCounts(2, 1), 0.5), WithinAbs(std::log(0.375), 1e-14));
  }
  // Zero-probability outcome: a perfect model cannot predict a positive at mu = 0.
  CHECK(pbias::log_likelihood(NoiseModel(1.0, 0.5), BinaryCounts(1, 4), 0.0) == -INFINITY);
  CHECK(pbias::log_likelihood(NoiseModel(1.0, 0.5), BinaryCounts(0, 4), 0.0) == 0.0);
}

TEST_CASE("log_likelihood at large counts matches high-precision values", "[noise_model]") {
  // Reference values computed offline with 50-digit arithmetic.
  struct Ref {
    double m, p, h, t, mu, with_comb, without_comb;
  };
  const Ref refs[] = {
      {0.8, 0.25, 1e5, 3e5, 0.3, -1607.001997803419138643754, -226534.5282841945175795928},
      {0.8, 0.25, 1e5, 3e5, 0.25, -6.531561132241674263046221, -224934.0578475233401152121},
      {0.5, 0.1, 7, 1234567, 0.01, -69770.53360329487208673144, -69860.19208062873492371022},
      {0.99, 0.6, 2500000, 7500000, 0.27, -13931.22012698264306155743, -5637274.525316888136833887},
  };
  for (const auto& r : refs) {
    const NoiseModel model(r.m, r.p);
    const BinaryCounts counts(static_cast<std::int64_t>(r.h), static_cast<std::int64_t>(r.t));
    INFO("h=" << r.h << " t=" << r.t << " mu=" << r.mu);
    CHECK_THAT(pbias::log_likelihood(model, counts, r.mu, true), WithinRel(r.with_comb, 1e-9));
    CHECK_THAT(pbias::log_likelihood(model, counts, r.mu, false), WithinRel(r.without_comb, 1e-12));
  }
}

TEST_CASE("likelihood matches an exact convolution of independent predictions", "[noise_model][property]") {
  for (double m : {0.0, 0.3, 0.79, 1.0}) {
    for (double mu : {0.0, 0.2, 0.9}) {
      const double p = 0.35;
      const std::int64_t n = 60;
      const auto dist = oracle::count_distribution(n, oracle::positive_prob(m, p, mu));
      for (std::int64_t h = 0; h <= n; ++h) {
        const double got = std::exp(pbias::log_likelihood(NoiseModel(m, p), BinaryCounts(h, n - h), mu));
        CHECK_THAT(got, WithinAbs(dist[static_cast<std::size_t>(h)], 1e-13));
      }
    }
  }
}

TEST_CASE("likelihood sums to one over outcomes", "[noise_model][property]") {
  for (std::int64_t n : {1, 7, 50, 200}) {
    for (double m : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      for (double p : {0.0, 0.1, 0.5, 0.9, 1.0}) {
        for (double mu : {0.0, 0.3, 0.5, 0.6, 1.0}) {
          double total = 0;
          for (std::int64_t h = 0; h <= n; ++h) {
            total += std::exp(pbias::log_likelihood(NoiseModel(m, p), BinaryCounts(h, n - h), mu));
          }
          INFO("n=" << n << " m=" << m << " p=" << p << " mu=" << mu);
          CHECK_THAT(total, WithinAbs(1.0, 1e-9));
        }
      }
    }
  }
}

TEST_CASE("noise_from_mcc clamps and flags", "[noise_model]") {
  auto e = pbias::noise_from_mcc(1.0);
  CHECK(e.m == 1.0);
  CHECK(e.caution);
  e = pbias::noise_from_mcc(0.0);
  CHECK(e.m == 0.0);
  CHECK(e.caution);
  e = pbias::noise_from_mcc(-0.2);
  CHECK(e.m == 0.0);
  CHECK(e.caution);
  CHECK_FALSE(e.note.empty());
  e = pbias::noise_from_mcc(0.79);
  CHECK(e.m == 0.79);
  CHECK_FALSE(e.caution);
  CHECK_THROWS_AS(pbias::noise_from_mcc(std::nan("")), std::invalid_argument);
}
