#include "pbias/calibration.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"

using Catch::Matchers::WithinAbs;
using pbias::ConfusionMatrix;

TEST_CASE("ScoredDataset validation", "[calibration]") {
  pbias::ScoredDataset ds;
  ds.split = pbias::Split::train;
  CHECK_THROWS_AS(ds.validate(), std::invalid_argument);
  ds.records = {{0.3, 1}, {0.2, std::nullopt}};
  CHECK_THROWS_AS(ds.validate(), std::invalid_argument);
  ds.split = pbias::Split::evaluation;
  CHECK_NOTHROW(ds.validate());
  CHECK_FALSE(ds.fully_labeled());
  ds.records = {{0.3, 1}, {INFINITY, 0}};
  CHECK_THROWS_AS(ds.validate(), std::invalid_argument);
  ds.records = {{0.3, 1}, {0.2, 2}};
  CHECK_THROWS_AS(ds.validate(), std::invalid_argument);
  ds.records = {{0.3, 1}, {0.2, 0}, {0.9, 1}, {0.1, 1}};
  CHECK(ds.label_mean() == 0.75);
}

TEST_CASE("calibrate_threshold named cases", "[calibration]") {
  const std::vector<double> s{0.1, 0.4, 0.6, 0.9};
  auto c = pbias::calibrate_threshold(s, 0.5);
  CHECK_THAT(c.threshold, WithinAbs(0.5, 1e-15));
  CHECK(c.achieved_rate == 0.5);
  c = pbias::calibrate_threshold(s, 0.25);
  CHECK_THAT(c.threshold, WithinAbs(0.75, 1e-15));
  CHECK(c.achieved_rate == 0.25);
  c = pbias::calibrate_threshold(s, 1.0);
  CHECK(c.threshold < 0.1);
  CHECK(c.achieved_rate == 1.0);
  c = pbias::calibrate_threshold(s, 0.0);
  CHECK(c.threshold > 0.9);
  CHECK(c.achieved_rate == 0.0);
  CHECK_THROWS_AS(pbias::calibrate_threshold(std::vector<double>{}, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(pbias::calibrate_threshold(s, 1.5), std::invalid_argument);
}

TEST_CASE("calibrate_threshold ties", "[calibration]") {
  // Achievable rates are 0, 0.5 (cut between the distinct values) and 1.
  const std::vector<double> s{0.2, 0.2, 0.7, 0.7};
  auto c = pbias::calibrate_threshold(s, 0.3);
  CHECK(c.achieved_rate == 0.5);
  // Exactly between 0.5 and 1.0: the higher rate wins.
  c = pbias::calibrate_threshold(s, 0.75);
  CHECK(c.achieved_rate == 1.0);
  c = pbias::calibrate_threshold(s, 0.25);
  CHECK(c.achieved_rate == 0.5);
  const auto preds = pbias::predict_at(s, c.threshold);
  CHECK(preds == std::vector<int>{0, 0, 1, 1});
}

TEST_CASE("calibrate_threshold lands within 1/n of the target", "[calibration][property]") {
  std::mt19937_64 eng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + eng() % 300;
    std::vector<double> s(n);
    for (auto& x : s) x = u(eng);
    const double target = u(eng);
    const auto c = pbias::calibrate_threshold(s, target);
    const auto preds = pbias::predict_at(s, c.threshold);
    double rate = 0;
    for (int p : preds) rate += p;
    rate /= static_cast<double>(n);
    CHECK(rate == c.achieved_rate);
    CHECK(std::abs(rate - target) <= 1.0 / static_cast<double>(n) + 1e-15);
  }
}

TEST_CASE("confusion counts", "[calibration]") {
  CHECK(pbias::confusion(std::vector<int>{1, 1}, std::vector<int>{1, 1}) == ConfusionMatrix{2, 0, 0, 0});
  const auto cm = pbias::confusion(std::vector<int>{0, 1}, std::vector<int>{1, 0});
  CHECK(cm.fn == 1);
  CHECK(cm.fp == 1);
  CHECK(cm.tp == 0);
  CHECK(cm.tn == 0);
  CHECK(pbias::confusion(std::vector<int>{1, 0, 1, 0}, std::vector<int>{1, 1, 0, 0}) == ConfusionMatrix{1, 1, 1, 1});
  CHECK_THROWS_AS(pbias::confusion(std::vector<int>{1}, std::vector<int>{1, 0}), std::invalid_argument);
  CHECK_THROWS_AS(pbias::confusion(std::vector<int>{}, std::vector<int>{}), std::invalid_argument);
  CHECK_THROWS_AS(pbias::confusion(std::vector<int>{2}, std::vector<int>{1}), std::invalid_argument);
}

TEST_CASE("mcc named cases", "[calibration]") {
  ConfusionMatrix cm{};
  cm.tp = 5;
  cm.tn = 5;
  CHECK(pbias::mcc(cm) == 1.0);
  cm = {};
  cm.fp = 5;
  cm.fn = 5;
  CHECK(pbias::mcc(cm) == -1.0);
  cm = {};
  cm.tp = 6;
  cm.fn = 2;
  cm.fp = 1;
  cm.tn = 3;
  CHECK_THAT(pbias::mcc(cm), WithinAbs(16.0 / std::sqrt(1120.0), 1e-15));
  CHECK_THAT(pbias::mcc(cm), WithinAbs(0.4781, 5e-5));
  // A constant predictor carries no information.
  cm = {};
  cm.tp = 3;
  cm.fp = 4;
  CHECK(pbias::mcc(cm) == 0.0);
}

TEST_CASE("mcc equals Pearson correlation and is label-flip symmetric", "[calibration][property]") {
  std::mt19937_64 eng(11);
  int compared = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t n = 2 + eng() % 30;
    std::vector<int> pred(n), lab(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = static_cast<int>(eng() & 1);
      lab[i] = static_cast<int>(eng() & 1);
    }
    const auto cm = pbias::confusion(pred, lab);
    const double r = oracle::pearson(pred, lab);
    if (!std::isnan(r)) {
      CHECK_THAT(pbias::mcc(cm), WithinAbs(r, 1e-12));
      ++compared;
    }
    ConfusionMatrix flipped{cm.tn, cm.fn, cm.tp, cm.fp};
    CHECK(pbias::mcc(flipped) == pbias::mcc(cm));
  }
  CHECK(compared > 900);
}

TEST_CASE("ece named cases", "[calibration]") {
  std::vector<double> s(10, 0.8);
  std::vector<int> l{1, 1, 1, 1, 1, 1, 0, 0, 0, 0};
  CHECK_THAT(pbias::ece(s, l, 1), WithinAbs(0.2, 1e-12));
  CHECK(pbias::ece(std::vector<double>{0, 1, 1, 0}, std::vector<int>{0, 1, 1, 0}, 7) == 0.0);
  CHECK_THAT(pbias::ece(std::vector<double>{0.2, 0.2, 0.9, 0.9}, std::vector<int>{0, 0, 1, 0}, 2), WithinAbs(0.3, 1e-12));
  CHECK_THROWS_AS(pbias::ece(s, l, 0), std::invalid_argument);
  CHECK_THROWS_AS(pbias::ece(std::vector<double>{1.2}, std::vector<int>{1}, 3), std::invalid_argument);
}

TEST_CASE("reliability bins partition [0, 1]", "[calibration]") {
  const std::vector<double> s{0.0, 0.2, 0.5, 0.99, 1.0};
  const std::vector<int> l{0, 0, 1, 1, 1};
  const auto rb = pbias::reliability(s, l, 4);
  REQUIRE(rb.bins.size() == 4);
  std::size_t total = 0;
  for (const auto& b : rb.bins) total += b.count;
  CHECK(total == s.size());
  CHECK(rb.bins[0].lo == 0.0);
  CHECK(rb.bins[3].hi == 1.0);
  // 1.0 belongs to the last bin, which is closed on the right.
  CHECK(rb.bins[3].count == 2);
  CHECK(rb.bins[2].count == 1);
}

TEST_CASE("ece with one bin collapses to |accuracy - mean confidence|", "[calibration][property]") {
  const auto f = fixture::logistic_sample(500, 2.0, 3);
  double conf = 0, acc = 0;
  for (std::size_t i = 0; i < f.probs.size(); ++i) conf += f.probs[i], acc += f.labels[i];
  conf /= static_cast<double>(f.probs.size());
  acc /= static_cast<double>(f.probs.size());
  CHECK_THAT(pbias::ece(f.probs, f.labels, 1), WithinAbs(std::abs(acc - conf), 1e-12));
}

TEST_CASE("platt_apply", "[calibration]") {
  CHECK(pbias::platt_apply({1.0, 0.0}, 0.0) == 0.5);
  CHECK(pbias::platt_apply({0.0, 0.0}, 123.0) == 0.5);
  CHECK_THAT(pbias::platt_apply({1.0, 0.0}, std::log(3.0)), WithinAbs(0.75, 1e-15));
  CHECK(pbias::platt_apply({1.0, 0.0}, 800.0) == 1.0);
  CHECK(pbias::platt_apply({1.0, 0.0}, -800.0) >= 0.0);
}

TEST_CASE("platt_fit recovers identity and inverts temperature", "[calibration]") {
  const auto cal = fixture::logistic_sample(10000, 1.0, 101);
  const auto fit = pbias::platt_fit(cal.logits, cal.labels);
  CHECK(fit.status == pbias::PlattStatus::converged);
  CHECK_THAT(fit.params.slope, WithinAbs(1.0, 0.1));
  CHECK_THAT(fit.params.intercept, WithinAbs(0.0, 0.1));
  CHECK(fit.gradient_norm < 1e-8);

  const auto hot = fixture::logistic_sample(10000, 3.0, 101);
  const auto fit3 = pbias::platt_fit(hot.logits, hot.labels);
  CHECK(fit3.status == pbias::PlattStatus::converged);
  CHECK_THAT(fit3.params.slope, WithinAbs(fit.params.slope / 3.0, 1e-6));
  CHECK_THAT(fit3.params.slope, WithinAbs(1.0 / 3.0, 0.04));
}

TEST_CASE("platt_fit on separable data reports its status", "[calibration]") {
  const auto fit = pbias::platt_fit(std::vector<double>{-1.0, 1.0}, std::vector<int>{0, 1});
  CHECK(fit.status == pbias::PlattStatus::separable);
  CHECK(std::isfinite(fit.params.slope));
  CHECK(fit.params.slope > 1.0);
  CHECK(fit.params.slope <= 1.0 + 100.0);
  CHECK(fit.loss < pbias::logistic_loss(std::vector<double>{-1.0, 1.0}, std::vector<int>{0, 1}, {}));
}

TEST_CASE("platt_fit rejects bad input", "[calibration]") {
  CHECK_THROWS_AS(pbias::platt_fit(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(pbias::platt_fit(std::vector<double>{0.1}, std::vector<int>{1}), std::invalid_argument);
  CHECK_THROWS_AS(pbias::platt_fit(std::vector<double>{0.1, 0.2}, std::vector<int>{1}), std::invalid_argument);
}

TEST_CASE("platt_fit never increases loss relative to the identity map", "[calibration][property]") {
  std::mt19937_64 eng(5);
  std::normal_distribution<double> z(0.0, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 2 + eng() % 60;
    std::vector<double> x(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = 3.0 * z(eng);
      y[i] = static_cast<int>(eng() & 1);
    }
    y[0] = 0;
    y[1] = 1;
    const auto fit = pbias::platt_fit(x, y);
    CHECK(pbias::logistic_loss(x, y, fit.params) <= pbias::logistic_loss(x, y, {}));
  }
}

TEST_CASE("dropout_uncertainty", "[calibration]") {
  std::vector<std::vector<double>> passes(4, std::vector<double>(3, 0.7));
  for (const auto& ms : pbias::dropout_uncertainty(passes)) {
    CHECK_THAT(ms.mean, WithinAbs(0.7, 1e-15));
    CHECK_THAT(ms.std, WithinAbs(0.0, 1e-15));
  }
  passes = {std::vector<double>(5, 0.0), std::vector<double>(5, 1.0)};
  for (const auto& ms : pbias::dropout_uncertainty(passes)) {
    CHECK(ms.mean == 0.5);
    CHECK(ms.std == 0.5);
  }
  std::mt19937_64 eng(9);
  passes.assign(10, std::vector<double>(10000));
  for (auto& p : passes)
    for (auto& v : p) v = static_cast<double>(eng() & 1);
  double mean = 0, sd = 0;
  for (const auto& ms : pbias::dropout_uncertainty(passes)) mean += ms.mean, sd += ms.std;
  CHECK_THAT(mean / 10000, WithinAbs(0.5, 0.01));
  // E[population sd] over 10 fair coins is ~0.474, not 0.5.
  CHECK_THAT(sd / 10000, WithinAbs(0.5, 0.05));
  CHECK_THROWS_AS(pbias::dropout_uncertainty(std::vector<std::vector<double>>{{0.1}}), std::invalid_argument);
  CHECK_THROWS_AS(pbias::dropout_uncertainty(std::vector<std::vector<double>>{{0.1}, {0.1, 0.2}}), std::invalid_argument);
}
