#pragma once

// Detecting and reversing participation bias: a CLT test of "evaluation mean
// equals training mean" and the posterior over the true evaluation mean.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pbias/calibration.hpp"
#include "pbias/detail/numeric.hpp"
#include "pbias/noise_model.hpp"

namespace pbias {

inline constexpr std::size_t kDefaultGridPoints = 4097;
inline constexpr std::size_t kMinGridPoints = 129;
inline constexpr std::int64_t kCltMinimumN = 30;

struct BetaPrior {
  double alpha = 1.0;
  double beta = 1.0;

  BetaPrior() = default;
  BetaPrior(double a, double b) : alpha(a), beta(b) {
    detail::require(std::isfinite(a) && a > 0.0, "prior alpha must be positive");
    detail::require(std::isfinite(b) && b > 0.0, "prior beta must be positive");
  }
};

struct BiasTestResult {
  double mu_hat = 0.0;
  double expected_under_null = 0.0;
  double standard_error = 0.0;
  double z = 0.0;
  double p_value = 1.0;
  bool small_sample = false;
};

/// Two-sided z-test of mu = p_train. Under the null the expected prediction
/// mean is p_train itself for every m.
inline BiasTestResult bias_test(const NoiseModel& model, const BinaryCounts& counts) {
  BiasTestResult r;
  r.mu_hat = counts.mu_hat();
  r.expected_under_null = model.p_train();
  r.standard_error = standard_error(model, model.p_train(), counts.n());
  r.small_sample = counts.n() < kCltMinimumN;
  const double diff = r.mu_hat - r.expected_under_null;
  if (r.standard_error == 0.0) {
    r.z = diff == 0.0 ? 0.0 : std::copysign(detail::kInf, diff);
    r.p_value = diff == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.z = diff / r.standard_error;
  r.p_value = std::clamp(std::erfc(std::abs(r.z) / std::numbers::sqrt2), 0.0, 1.0);
  return r;
}

/// Posterior density over mu on a uniform grid spanning [0, 1].
///
/// When the density diverges at an endpoint (a prior parameter below 1 that is
/// not cancelled by the likelihood), `density` holds +inf there and the
/// adjacent cell is integrated as a power law with the recorded exponent.
struct PosteriorGrid {
  std::vector<double> grid;
  std::vector<double> log_density;  // unnormalized
  std::vector<double> density;      // normalized
  std::vector<double> cdf;
  double log_normalizer = 0.0;  // log_density - log_normalizer = log(density)
  std::optional<double> lower_singular_exponent;
  std::optional<double> upper_singular_exponent;

  std::size_t size() const { return grid.size(); }
  double spacing() const { return grid[1] - grid[0]; }

  /// Integral of density over cell [grid[i], grid[i+1]].
  double cell_mass(std::size_t i) const {
    const double h = spacing();
    if (i == 0 && lower_singular_exponent) return density[1] * h / (*lower_singular_exponent + 1.0);
    if (i + 2 == size() && upper_singular_exponent) return density[i] * h / (*upper_singular_exponent + 1.0);
    return 0.5 * h * (density[i] + density[i + 1]);
  }

  /// Integral of mu * density over cell i.
  double cell_first_moment(std::size_t i) const {
    const double h = spacing();
    if (i == 0 && lower_singular_exponent) {
      const double e = *lower_singular_exponent;
      return density[1] * h * h / (e + 2.0);
    }
    if (i + 2 == size() && upper_singular_exponent) {
      const double e = *upper_singular_exponent;
      return density[i] * (h / (e + 1.0) - h * h / (e + 2.0));
    }
    return 0.5 * h * (grid[i] * density[i] + grid[i + 1] * density[i + 1]);
  }

  double total_mass() const {
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < size(); ++i) s += cell_mass(i);
    return s;
  }

  /// Inverse CDF by linear interpolation of the grid CDF.
  double quantile(double u) const {
    detail::require(size() >= 2 && cdf.size() == size(), "degenerate posterior grid");
    if (u <= cdf.front()) return grid.front();
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    if (it == cdf.end()) return grid.back();
    const auto i = static_cast<std::size_t>(it - cdf.begin());
    const double c0 = cdf[i - 1], c1 = cdf[i];
    if (c1 <= c0) return grid[i];
    return grid[i - 1] + (u - c0) / (c1 - c0) * (grid[i] - grid[i - 1]);
  }

  /// CDF at an arbitrary mu by linear interpolation.
  double cdf_at(double mu) const {
    if (mu <= grid.front()) return 0.0;
    if (mu >= grid.back()) return 1.0;
    const double pos = mu / spacing();
    const auto i = std::min(static_cast<std::size_t>(pos), size() - 2);
    const double frac = pos - static_cast<double>(i);
    return cdf[i] + frac * (cdf[i + 1] - cdf[i]);
  }
};

namespace detail {

// Log-density at an endpoint of [0, 1]. Vanishing factors are folded into a
// power of the distance to the endpoint: exponent > 0 gives -inf, < 0 gives
// +inf (singular), 0 gives the finite remainder.
struct EndpointValue {
  double log_value;
  double exponent;
};

inline EndpointValue endpoint_log_density(const NoiseModel& model, const BinaryCounts& counts, const BetaPrior& prior,
                                          bool lower) {
  const double m = model.m();
  const double p = model.p_train();
  // At mu = 0 the prior factor mu^(alpha-1) vanishes/diverges and q1 = (1-m)p;
  // at mu = 1 the roles of (alpha, h, q1) and (beta, t, q0) swap. The other
  // prior factor equals 1 at the endpoint.
  const double own_prior = lower ? prior.alpha : prior.beta;
  const auto own_count = static_cast<double>(lower ? counts.h() : counts.t());
  const auto other_count = static_cast<double>(lower ? counts.t() : counts.h());
  const double own_base = lower ? (1.0 - m) * p : (1.0 - m) * (1.0 - p);
  const double other_base = lower ? m + (1.0 - m) * (1.0 - p) : m + (1.0 - m) * p;

  double exponent = own_prior - 1.0;
  double rest = 0.0;
  if (m > 0.0) {
    if (own_base == 0.0 && own_count > 0.0) {
      exponent += own_count;
      rest += own_count * std::log(m);
    } else {
      rest += xlogy(own_count, own_base);
    }
    rest += xlogy(other_count, other_base);
  }
  if (exponent > 0.0) return {-kInf, exponent};
  if (exponent < 0.0) return {kInf, exponent};
  return {rest, exponent};
}

inline double interior_log_density(const NoiseModel& model, const BinaryCounts& counts, const BetaPrior& prior,
                                   double mu) {
  double ld = 0.0;
  if (prior.alpha != 1.0) ld += (prior.alpha - 1.0) * std::log(mu);
  if (prior.beta != 1.0) ld += (prior.beta - 1.0) * std::log1p(-mu);
  if (model.m() > 0.0) ld += log_likelihood(model, counts, mu, false);
  return ld;
}

}  // namespace detail

/// Posterior over the true evaluation mean under a Beta prior, normalized by
/// composite trapezoid quadrature after max-subtraction in log space. For
/// m = 0 the likelihood is constant and the result is the prior.
inline PosteriorGrid posterior(const NoiseModel& model, const BinaryCounts& counts, const BetaPrior& prior,
                               std::size_t grid_points = kDefaultGridPoints) {
  detail::require(grid_points >= kMinGridPoints, "posterior grid too coarse (need >= 129 points)");
  const std::size_t n = grid_points;
  PosteriorGrid post;
  post.grid.resize(n);
  post.log_density.resize(n);
  const double h = 1.0 / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) post.grid[i] = i == n - 1 ? 1.0 : static_cast<double>(i) * h;

  const auto lo = detail::endpoint_log_density(model, counts, prior, true);
  const auto hi = detail::endpoint_log_density(model, counts, prior, false);
  post.log_density.front() = lo.log_value;
  post.log_density.back() = hi.log_value;
  if (lo.log_value == detail::kInf) post.lower_singular_exponent = lo.exponent;
  if (hi.log_value == detail::kInf) post.upper_singular_exponent = hi.exponent;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    post.log_density[i] = detail::interior_log_density(model, counts, prior, post.grid[i]);
  }

  double max_ld = -detail::kInf;
  for (double v : post.log_density) {
    if (v != detail::kInf) max_ld = std::max(max_ld, v);
  }
  detail::require(std::isfinite(max_ld), "posterior log-density has no finite value");

  post.density.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = post.log_density[i];
    post.density[i] = v == detail::kInf ? detail::kInf : std::exp(v - max_ld);
  }
  const double z = post.total_mass();
  detail::require(std::isfinite(z) && z > 0.0, "posterior normalization failed");
  for (double& d : post.density) d /= z;
  post.log_normalizer = max_ld + std::log(z);

  post.cdf.assign(n, 0.0);
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    acc += post.cell_mass(i);
    post.cdf[i + 1] = acc;
  }
  for (double& c : post.cdf) c = std::min(c / acc, 1.0);
  post.cdf.back() = 1.0;
  return post;
}

struct CredibleInterval {
  double lo = 0.0;
  double hi = 1.0;
  double mass = 0.0;

  double width() const { return hi - lo; }
  bool contains(double mu) const { return lo <= mu && mu <= hi; }
};

/// Equal-tailed interval holding `mass` of the posterior.
inline CredibleInterval credible_interval(const PosteriorGrid& post, double mass) {
  detail::require(mass > 0.0 && mass < 1.0, "credible mass must lie in (0, 1)");
  detail::require(post.size() >= 2, "degenerate posterior grid");
  const double tail = 0.5 * (1.0 - mass);
  CredibleInterval ci;
  ci.lo = post.quantile(tail);
  ci.hi = post.quantile(1.0 - tail);
  ci.mass = mass;
  return ci;
}

struct PosteriorSummaries {
  double map_estimate = 0.0;
  double posterior_mean = 0.0;
};

/// Grid argmax (ties resolve to the lowest mu) and posterior mean.
inline PosteriorSummaries posterior_summaries(const PosteriorGrid& post) {
  PosteriorSummaries s;
  std::size_t best = 0;
  for (std::size_t i = 1; i < post.size(); ++i) {
    if (post.density[i] > post.density[best]) best = i;
  }
  s.map_estimate = post.grid[best];
  double moment = 0.0;
  for (std::size_t i = 0; i + 1 < post.size(); ++i) moment += post.cell_first_moment(i);
  s.posterior_mean = moment;
  return s;
}

struct PipelineOptions {
  BetaPrior prior;
  double mass = 0.95;
  std::size_t grid_points = kDefaultGridPoints;
  double significance = 0.05;
};

/// Everything the estimator computed, intermediate values included.
struct BiasReport {
  double threshold = 0.0;
  double p_train = 0.0;
  double achieved_train_rate = 0.0;
  double validation_mcc = 0.0;
  double m = 0.0;
  std::int64_t h = 0;
  std::int64_t t = 0;
  double mu_hat = 0.0;
  double expected_under_null = 0.0;
  double standard_error = 0.0;
  double z = 0.0;
  double p_value = 1.0;
  double significance = 0.05;
  bool bias_detected = false;
  double map = 0.0;
  double posterior_mean = 0.0;
  double interval_lo = 0.0;
  double interval_hi = 1.0;
  double mass = 0.95;
  double prior_alpha = 1.0;
  double prior_beta = 1.0;
  std::size_t grid_points = kDefaultGridPoints;
  bool uninformative_model = false;
  std::optional<double> evaluation_label_mean;
  std::vector<std::string> warnings;
};

namespace detail {

inline void require_both_classes(const ScoredDataset& ds) {
  std::int64_t pos = 0;
  for (const auto& r : ds.records) pos += *r.label;
  require(pos > 0 && pos < static_cast<std::int64_t>(ds.size()),
          std::string(to_string(ds.split)) + " split labels contain a single class");
}

}  // namespace detail

/// Calibrate on train, estimate noise on validation, then test and invert the
/// bias on the evaluation predictions.
inline BiasReport estimate_pipeline(const ScoredDataset& train, const ScoredDataset& validation,
                                    const ScoredDataset& evaluation, const PipelineOptions& opts = {}) {
  train.validate();
  validation.validate();
  evaluation.validate();
  detail::require(train.fully_labeled(), "train split is not fully labeled");
  detail::require(validation.fully_labeled(), "validation split is not fully labeled");
  detail::require_both_classes(train);
  detail::require_both_classes(validation);

  BiasReport rep;
  rep.mass = opts.mass;
  rep.prior_alpha = opts.prior.alpha;
  rep.prior_beta = opts.prior.beta;
  rep.grid_points = opts.grid_points;
  rep.significance = opts.significance;

  const auto train_scores = train.scores();
  rep.p_train = train.label_mean();
  const auto cal = calibrate_threshold(train_scores, rep.p_train);
  rep.threshold = cal.threshold;
  rep.achieved_train_rate = cal.achieved_rate;
  if (std::abs(cal.achieved_rate - rep.p_train) > 1e-12) {
    rep.warnings.push_back("tied training scores: calibrated rate differs from training label mean");
  }

  const auto val_scores = validation.scores();
  const auto val_pred = predict_at(val_scores, rep.threshold);
  const auto val_labels = validation.labels();
  rep.validation_mcc = mcc(confusion(val_pred, val_labels));
  const auto est = noise_from_mcc(rep.validation_mcc);
  rep.m = est.m;
  rep.uninformative_model = est.m == 0.0;
  if (est.caution) rep.warnings.push_back(est.note);

  const auto eval_scores = evaluation.scores();
  for (double s : eval_scores) (s >= rep.threshold ? rep.h : rep.t) += 1;
  if (evaluation.fully_labeled()) rep.evaluation_label_mean = evaluation.label_mean();

  const NoiseModel model(rep.m, rep.p_train);
  const BinaryCounts counts(rep.h, rep.t);
  const auto test = bias_test(model, counts);
  rep.mu_hat = test.mu_hat;
  rep.expected_under_null = test.expected_under_null;
  rep.standard_error = test.standard_error;
  rep.z = test.z;
  rep.p_value = test.p_value;
  rep.bias_detected = test.p_value < opts.significance;
  if (test.small_sample) rep.warnings.push_back("evaluation set has fewer than 30 examples: normal approximation is unreliable");

  const auto post = posterior(model, counts, opts.prior, opts.grid_points);
  const auto ci = credible_interval(post, opts.mass);
  const auto sums = posterior_summaries(post);
  rep.map = sums.map_estimate;
  rep.posterior_mean = sums.posterior_mean;
  rep.interval_lo = ci.lo;
  rep.interval_hi = ci.hi;
  return rep;
}

}  // namespace pbias
