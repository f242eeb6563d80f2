#pragma once

// Prediction-noise model for a calibrated binary classifier.
//
// With probability m the classifier reports the true label; otherwise it
// draws from Bernoulli(p_train), the positive rate it was trained on.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "pbias/detail/numeric.hpp"

namespace pbias {

class NoiseModel {
 public:
  NoiseModel(double m, double p_train) : m_(m), p_train_(p_train) {
    detail::require(detail::is_probability(m), "noise model: m must lie in [0, 1]");
    detail::require(detail::is_probability(p_train), "noise model: p_train must lie in [0, 1]");
  }

  double m() const { return m_; }
  double p_train() const { return p_train_; }

  bool uninformative() const { return m_ == 0.0; }

 private:
  double m_;
  double p_train_;
};

/// Counts of positive (h) and negative (t) predictions on an evaluation set.
class BinaryCounts {
 public:
  BinaryCounts(std::int64_t h, std::int64_t t) : h_(h), t_(t) {
    detail::require(h >= 0 && t >= 0, "counts must be non-negative");
    detail::require(h + t >= 1, "counts must contain at least one prediction");
  }

  std::int64_t h() const { return h_; }
  std::int64_t t() const { return t_; }
  std::int64_t n() const { return h_ + t_; }
  double mu_hat() const { return static_cast<double>(h_) / static_cast<double>(n()); }

 private:
  std::int64_t h_;
  std::int64_t t_;
};

/// P(prediction = 1 | label = y).
inline double predictive_prob(const NoiseModel& model, int y) {
  detail::require(y == 0 || y == 1, "label must be 0 or 1");
  return model.m() * y + (1.0 - model.m()) * model.p_train();
}

/// E[mu_hat | mu]; affine in mu with slope m.
inline double expected_prediction_mean(const NoiseModel& model, double mu) {
  detail::require(detail::is_probability(mu), "mu must lie in [0, 1]");
  return model.m() * mu + (1.0 - model.m()) * model.p_train();
}

/// Per-example prediction variance for an evaluation set whose label mean is mu,
/// i.e. mu * Var[Y_hat | Y=1] + (1 - mu) * Var[Y_hat | Y=0].
inline double prediction_variance(const NoiseModel& model, double mu) {
  detail::require(detail::is_probability(mu), "mu must lie in [0, 1]");
  const double e1 = predictive_prob(model, 1);
  const double e0 = predictive_prob(model, 0);
  return mu * e1 * (1.0 - e1) + (1.0 - mu) * e0 * (1.0 - e0);
}

inline double standard_error(const NoiseModel& model, double mu, std::int64_t n) {
  detail::require(n >= 1, "standard error needs n >= 1");
  return std::sqrt(prediction_variance(model, mu) / static_cast<double>(n));
}

/// Log of P(h, t | mu). The binomial coefficient term is optional because it is
/// constant in mu. Returns -inf when a zero-probability outcome is observed.
inline double log_likelihood(const NoiseModel& model, const BinaryCounts& counts, double mu,
                             bool include_combinatorial = true) {
  detail::require(detail::is_probability(mu), "mu must lie in [0, 1]");
  const double m = model.m();
  const double p = model.p_train();
  const double q1 = m * mu + (1.0 - m) * p;
  const double q0 = m * (1.0 - mu) + (1.0 - m) * (1.0 - p);
  const auto h = static_cast<double>(counts.h());
  const auto t = static_cast<double>(counts.t());
  double ll = detail::xlogy(h, q1) + detail::xlogy(t, q0);
  if (include_combinatorial && std::isfinite(ll)) {
    ll += std::lgamma(h + t + 1.0) - std::lgamma(h + 1.0) - std::lgamma(t + 1.0);
  }
  return ll;
}

struct NoiseEstimate {
  double m = 0.0;
  bool caution = false;
  std::string note;
};

/// Accuracy parameter from a validation MCC: clamp(mcc, 0, 1).
inline NoiseEstimate noise_from_mcc(double validation_mcc) {
  detail::require(!std::isnan(validation_mcc), "validation MCC is NaN");
  NoiseEstimate est;
  est.m = std::clamp(validation_mcc, 0.0, 1.0);
  if (validation_mcc <= 0.0) {
    est.caution = true;
    est.note = "validation MCC <= 0: model uninformative, posterior equals prior";
  } else if (validation_mcc >= 1.0) {
    est.caution = true;
    est.note = "validation MCC = 1: model treated as noiseless";
  }
  return est;
}

}  // namespace pbias
