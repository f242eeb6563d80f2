#pragma once

// Monte Carlo experiments for the noise model: MCC versus m, drift of the
// predicted mean towards the training mean, posterior coverage, and an
// end-to-end run with a logistic-regression classifier on 2-D Gaussians.

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "pbias/calibration.hpp"
#include "pbias/detail/numeric.hpp"
#include "pbias/inference.hpp"
#include "pbias/noise_model.hpp"
#include "pbias/rng.hpp"

namespace pbias {

enum class Scenario : std::uint32_t { mcc_noise = 1, bias_drift = 2, posterior_recovery = 3, classifier_end_to_end = 4 };

inline constexpr std::array<Scenario, 4> kAllScenarios = {Scenario::mcc_noise, Scenario::bias_drift,
                                                          Scenario::posterior_recovery,
                                                          Scenario::classifier_end_to_end};

inline const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::mcc_noise: return "mcc_noise";
    case Scenario::bias_drift: return "bias_drift";
    case Scenario::posterior_recovery: return "posterior_recovery";
    case Scenario::classifier_end_to_end: return "classifier_end_to_end";
  }
  return "?";
}

inline std::optional<Scenario> parse_scenario(std::string_view name) {
  for (auto s : kAllScenarios) {
    if (name == to_string(s)) return s;
  }
  return std::nullopt;
}

/// How evaluation labels are produced for a cell with mean mu: either exactly
/// round(mu * n) positives, or n independent Bernoulli(mu) draws.
enum class LabelSampling { fixed_count, bernoulli };

inline const char* to_string(LabelSampling s) { return s == LabelSampling::fixed_count ? "fixed" : "bernoulli"; }

inline std::optional<LabelSampling> parse_label_sampling(std::string_view name) {
  if (name == "fixed") return LabelSampling::fixed_count;
  if (name == "bernoulli") return LabelSampling::bernoulli;
  return std::nullopt;
}

/// 0, 1/steps, ..., 1.
inline std::vector<double> unit_grid(int steps) {
  std::vector<double> g;
  for (int i = 0; i <= steps; ++i) g.push_back(static_cast<double>(i) / steps);
  return g;
}

struct SimConfig {
  Scenario scenario = Scenario::mcc_noise;
  std::int64_t n = 10000;
  std::int64_t trials = 1000;
  double p_train = 0.5;
  std::vector<double> p_eval{0.5};
  std::vector<double> m_grid = unit_grid(20);
  std::uint64_t seed = 42;
  LabelSampling labels = LabelSampling::bernoulli;

  // posterior settings
  BetaPrior prior;
  double mass = 0.95;
  std::size_t grid_points = kDefaultGridPoints;
  double significance = 0.05;

  // classifier_end_to_end settings
  std::int64_t n_train = 100000;
  std::int64_t n_val = 10000;
  double target_mcc = 0.79;
  std::optional<double> separation;
  double learning_rate = 0.5;
  int epochs = 20;

  // Worker threads; never affects results.
  unsigned threads = 1;

  static SimConfig defaults(Scenario s) {
    SimConfig c;
    c.scenario = s;
    switch (s) {
      case Scenario::mcc_noise:
        break;
      case Scenario::bias_drift:
        c.n = 1000;
        c.p_train = 0.8;
        c.p_eval = {0.6};
        c.labels = LabelSampling::fixed_count;
        break;
      case Scenario::posterior_recovery:
        c.n = 1000;
        c.trials = 500;
        c.p_eval = {0.3, 0.6, 0.9};
        c.m_grid = {0.5, 0.79, 1.0};
        break;
      case Scenario::classifier_end_to_end:
        c.n = 5000;
        c.trials = 20;
        c.p_train = 0.25;
        c.p_eval.clear();
        for (int i = 1; i <= 15; ++i) c.p_eval.push_back(i / 20.0);
        c.m_grid.clear();
        c.labels = LabelSampling::fixed_count;
        break;
    }
    return c;
  }

  void validate() const {
    detail::require(n >= 1, "simulation: n must be >= 1");
    detail::require(trials >= 1, "simulation: trials must be >= 1");
    detail::require(detail::is_probability(p_train), "simulation: p_train must lie in [0, 1]");
    detail::require(!p_eval.empty(), "simulation: p_eval list is empty");
    for (double p : p_eval) detail::require(detail::is_probability(p), "simulation: p_eval values must lie in [0, 1]");
    for (double m : m_grid) detail::require(detail::is_probability(m), "simulation: m values must lie in [0, 1]");
    detail::require(mass > 0.0 && mass < 1.0, "simulation: mass must lie in (0, 1)");
    detail::require(grid_points >= kMinGridPoints, "simulation: grid too coarse");
    if (scenario == Scenario::classifier_end_to_end) {
      detail::require(n_train >= 2 && n_val >= 2, "simulation: train and validation sizes must be >= 2");
      detail::require(target_mcc > 0.0 && target_mcc < 1.0, "simulation: target MCC must lie in (0, 1)");
      detail::require(epochs >= 0, "simulation: epochs must be >= 0");
      if (separation) detail::require(*separation >= 0.0, "simulation: separation must be >= 0");
    } else {
      detail::require(!m_grid.empty(), "simulation: m grid is empty");
    }
  }
};

/// One statistic of one cell (trial = -1), or one per-trial value.
struct SimResultRow {
  Scenario scenario = Scenario::mcc_noise;
  double m = 0.0;
  double noise = 0.0;
  double p_train = 0.0;
  double p_eval = 0.0;
  std::int64_t n = 0;
  std::int64_t trials = 0;
  std::string stat_name;
  double value = 0.0;
  std::uint64_t seed = 0;
  std::int64_t trial = -1;
};

struct SimTables {
  std::vector<SimResultRow> aggregate;
  std::vector<SimResultRow> raw;
};

/// Finds a statistic in a table; throws if absent.
inline double find_stat(std::span<const SimResultRow> rows, std::string_view stat, double m, double p_eval,
                        double tol = 1e-12) {
  for (const auto& r : rows) {
    if (r.trial < 0 && r.stat_name == stat && std::abs(r.m - m) <= tol && std::abs(r.p_eval - p_eval) <= tol) {
      return r.value;
    }
  }
  throw std::out_of_range("statistic not found: " + std::string(stat));
}

// ---------------------------------------------------------------------------
// noise draws

inline int noisy_prediction(RandomStream& rng, const NoiseModel& model, int label) {
  if (rng.uniform() < model.m()) return label;
  return rng.bernoulli(model.p_train()) ? 1 : 0;
}

/// Each prediction keeps its label with probability m, otherwise it is an
/// independent Bernoulli(p_train) draw.
inline std::vector<int> simulate_noisy_predictions(RandomStream& rng, const NoiseModel& model,
                                                   std::span<const int> labels) {
  detail::require(!labels.empty(), "simulate_noisy_predictions: no labels");
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = noisy_prediction(rng, model, labels[i]);
  return out;
}

namespace detail {

inline std::int64_t positives_for(double mu, std::int64_t n) {
  return std::llround(mu * static_cast<double>(n));
}

// Label mean a cell's coverage and theory refer to.
inline double cell_truth(LabelSampling s, double mu, std::int64_t n) {
  return s == LabelSampling::fixed_count ? static_cast<double>(positives_for(mu, n)) / static_cast<double>(n) : mu;
}

// Label of example i out of n in a cell with mean mu.
inline int draw_label(RandomStream& rng, LabelSampling s, double mu, std::int64_t i, std::int64_t k) {
  return s == LabelSampling::fixed_count ? (i < k ? 1 : 0) : (rng.bernoulli(mu) ? 1 : 0);
}

// Runs fn(trial) for every trial, in parallel when threads > 1. Output order is
// trial order regardless of scheduling.
template <typename Fn>
auto parallel_trials(std::int64_t trials, unsigned threads, Fn fn) {
  using Result = decltype(fn(std::int64_t{0}));
  std::vector<Result> results(static_cast<std::size_t>(trials));
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(trials)));
  if (workers == 1) {
    for (std::int64_t i = 0; i < trials; ++i) results[static_cast<std::size_t>(i)] = fn(i);
    return results;
  }
  std::atomic<std::int64_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::int64_t i = next++; i < trials; i = next++) {
        try {
          results[static_cast<std::size_t>(i)] = fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return results;
}

inline double sample_std(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double mu = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - mu) * (x - mu);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

inline std::vector<double> sorted_copy(std::span<const double> xs) {
  std::vector<double> v(xs.begin(), xs.end());
  std::sort(v.begin(), v.end());
  return v;
}

class RowSink {
 public:
  RowSink(const SimConfig& cfg, SimTables& out) : cfg_(cfg), out_(out) {}

  void cell(double m, double p_eval) {
    m_ = m;
    p_eval_ = p_eval;
  }

  void stat(std::string_view name, double value) { out_.aggregate.push_back(row(name, value, -1)); }
  void raw(std::string_view name, double value, std::int64_t trial) { out_.raw.push_back(row(name, value, trial)); }

 private:
  SimResultRow row(std::string_view name, double value, std::int64_t trial) const {
    SimResultRow r;
    r.scenario = cfg_.scenario;
    r.m = m_;
    r.noise = 1.0 - m_;
    r.p_train = cfg_.p_train;
    r.p_eval = p_eval_;
    r.n = cfg_.n;
    r.trials = cfg_.trials;
    r.stat_name = std::string(name);
    r.value = value;
    r.seed = cfg_.seed;
    r.trial = trial;
    return r;
  }

  const SimConfig& cfg_;
  SimTables& out_;
  double m_ = 0.0;
  double p_eval_ = 0.0;
};

inline void require_scenario(const SimConfig& cfg, Scenario s) {
  require(cfg.scenario == s, std::string("simulation config is not for scenario ") + to_string(s));
  cfg.validate();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// mcc_noise

inline SimTables run_mcc_noise_experiment(const SimConfig& cfg) {
  detail::require_scenario(cfg, Scenario::mcc_noise);
  SimTables out;
  detail::RowSink sink(cfg, out);
  std::uint64_t cell = 0;
  for (double m : cfg.m_grid) {
    for (double mu : cfg.p_eval) {
      const NoiseModel model(m, cfg.p_train);
      const std::int64_t k = detail::positives_for(mu, cfg.n);
      const auto mccs = detail::parallel_trials(cfg.trials, cfg.threads, [&](std::int64_t trial) {
        auto rng = derive_stream(cfg.seed, static_cast<std::uint32_t>(cfg.scenario), cell,
                                 static_cast<std::uint64_t>(trial));
        ConfusionMatrix cm;
        for (std::int64_t i = 0; i < cfg.n; ++i) {
          const int y = detail::draw_label(rng, cfg.labels, mu, i, k);
          cm.add(noisy_prediction(rng, model, y), y);
        }
        return mcc(cm);
      });
      sink.cell(m, mu);
      sink.stat("mean_mcc", detail::mean(mccs));
      sink.stat("std_mcc", detail::sample_std(mccs));
      for (std::size_t t = 0; t < mccs.size(); ++t) sink.raw("mcc", mccs[t], static_cast<std::int64_t>(t));
      ++cell;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// bias_drift

inline constexpr double kBandZ = 1.96;

inline SimTables run_bias_experiment(const SimConfig& cfg) {
  detail::require_scenario(cfg, Scenario::bias_drift);
  SimTables out;
  detail::RowSink sink(cfg, out);
  std::uint64_t cell = 0;
  for (double m : cfg.m_grid) {
    for (double mu : cfg.p_eval) {
      const NoiseModel model(m, cfg.p_train);
      const std::int64_t k = detail::positives_for(mu, cfg.n);
      const double truth = detail::cell_truth(cfg.labels, mu, cfg.n);
      const double expected = expected_prediction_mean(model, truth);
      const double se = standard_error(model, truth, cfg.n);
      const double band_lo = expected - kBandZ * se;
      const double band_hi = expected + kBandZ * se;

      const auto mu_hats = detail::parallel_trials(cfg.trials, cfg.threads, [&](std::int64_t trial) {
        auto rng = derive_stream(cfg.seed, static_cast<std::uint32_t>(cfg.scenario), cell,
                                 static_cast<std::uint64_t>(trial));
        std::int64_t h = 0;
        for (std::int64_t i = 0; i < cfg.n; ++i) {
          h += noisy_prediction(rng, model, detail::draw_label(rng, cfg.labels, mu, i, k));
        }
        return static_cast<double>(h) / static_cast<double>(cfg.n);
      });

      // Boundary-inclusive with slack for the rounding in band_lo/band_hi.
      constexpr double kSlack = 1e-12;
      std::int64_t covered = 0;
      for (double x : mu_hats) covered += (x >= band_lo - kSlack && x <= band_hi + kSlack) ? 1 : 0;
      const auto sorted = detail::sorted_copy(mu_hats);

      sink.cell(m, mu);
      sink.stat("true_mu", truth);
      sink.stat("mean_mu_hat", detail::mean(mu_hats));
      sink.stat("std_mu_hat", detail::sample_std(mu_hats));
      sink.stat("q025_mu_hat", detail::quantile_sorted(sorted, 0.025));
      sink.stat("q975_mu_hat", detail::quantile_sorted(sorted, 0.975));
      sink.stat("expected_mu_hat", expected);
      sink.stat("standard_error", se);
      sink.stat("band_lo", band_lo);
      sink.stat("band_hi", band_hi);
      sink.stat("coverage", static_cast<double>(covered) / static_cast<double>(cfg.trials));
      for (std::size_t t = 0; t < mu_hats.size(); ++t) sink.raw("mu_hat", mu_hats[t], static_cast<std::int64_t>(t));
      ++cell;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// posterior_recovery

inline SimTables run_posterior_recovery(const SimConfig& cfg) {
  detail::require_scenario(cfg, Scenario::posterior_recovery);
  struct Trial {
    double mu_hat, lo, hi, map, post_mean;
    bool covered;
  };
  SimTables out;
  detail::RowSink sink(cfg, out);
  std::uint64_t cell = 0;
  for (double m : cfg.m_grid) {
    for (double mu : cfg.p_eval) {
      const NoiseModel model(m, cfg.p_train);
      const std::int64_t k = detail::positives_for(mu, cfg.n);
      const double truth = detail::cell_truth(cfg.labels, mu, cfg.n);
      const auto results = detail::parallel_trials(cfg.trials, cfg.threads, [&](std::int64_t trial) {
        auto rng = derive_stream(cfg.seed, static_cast<std::uint32_t>(cfg.scenario), cell,
                                 static_cast<std::uint64_t>(trial));
        std::int64_t h = 0;
        for (std::int64_t i = 0; i < cfg.n; ++i) {
          h += noisy_prediction(rng, model, detail::draw_label(rng, cfg.labels, mu, i, k));
        }
        const BinaryCounts counts(h, cfg.n - h);
        const auto post = posterior(model, counts, cfg.prior, cfg.grid_points);
        const auto ci = credible_interval(post, cfg.mass);
        const auto s = posterior_summaries(post);
        return Trial{counts.mu_hat(), ci.lo, ci.hi, s.map_estimate, s.posterior_mean, ci.contains(truth)};
      });

      double covered = 0.0, width = 0.0, map = 0.0, mu_hat = 0.0;
      for (const auto& r : results) {
        covered += r.covered ? 1.0 : 0.0;
        width += r.hi - r.lo;
        map += r.map;
        mu_hat += r.mu_hat;
      }
      const auto trials = static_cast<double>(cfg.trials);
      sink.cell(m, mu);
      sink.stat("true_mu", truth);
      sink.stat("coverage", covered / trials);
      sink.stat("mean_width", width / trials);
      sink.stat("mean_map", map / trials);
      sink.stat("mean_mu_hat", mu_hat / trials);
      for (std::size_t t = 0; t < results.size(); ++t) {
        const auto ti = static_cast<std::int64_t>(t);
        sink.raw("mu_hat", results[t].mu_hat, ti);
        sink.raw("interval_lo", results[t].lo, ti);
        sink.raw("interval_hi", results[t].hi, ti);
        sink.raw("map", results[t].map, ti);
        sink.raw("posterior_mean", results[t].post_mean, ti);
        sink.raw("covered", results[t].covered ? 1.0 : 0.0, ti);
      }
      ++cell;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// logistic classifier on 2-D Gaussians

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct LogisticFitConfig {
  double learning_rate = 0.5;
  int epochs = 20;
};

struct LogisticModel {
  double w0 = 0.0;
  double w1 = 0.0;
  double bias = 0.0;

  double logit(const Point2& p) const { return w0 * p.x + w1 * p.y + bias; }
  double score(const Point2& p) const { return detail::sigmoid(logit(p)); }
};

/// Full-batch gradient descent on mean logistic loss, starting from zero weights.
inline LogisticModel fit_logistic(std::span<const Point2> features, std::span<const int> labels,
                                  const LogisticFitConfig& cfg = {}) {
  detail::require(features.size() == labels.size(), "fit_logistic: length mismatch");
  std::int64_t pos = 0;
  for (int l : labels) {
    detail::require(l == 0 || l == 1, "fit_logistic: labels must be 0 or 1");
    pos += l;
  }
  detail::require(pos > 0 && pos < static_cast<std::int64_t>(labels.size()), "fit_logistic: labels contain a single class");
  detail::require(cfg.epochs >= 0, "fit_logistic: epochs must be >= 0");

  LogisticModel model;
  const auto n = static_cast<double>(features.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double g0 = 0.0, g1 = 0.0, gb = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i) {
      const double r = model.score(features[i]) - labels[i];
      g0 += r * features[i].x;
      g1 += r * features[i].y;
      gb += r;
    }
    model.w0 -= cfg.learning_rate * g0 / n;
    model.w1 -= cfg.learning_rate * g1 / n;
    model.bias -= cfg.learning_rate * gb / n;
  }
  return model;
}

namespace detail {

// Threshold on the (1,1)-projected score: classes N(0,1) and N(delta,1) with
// delta = d * sqrt(2). Returns c with P(score >= c) = p.
inline double calibrated_cut(double delta, double p) {
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double c = 0.5 * (lo + hi);
    const double rate = (1.0 - p) * normal_sf(c) + p * normal_sf(c - delta);
    (rate > p ? lo : hi) = c;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Population MCC of the calibrated Bayes-direction classifier at class
/// separation d. Calibrated predictions have MCC = TPR - FPR.
inline double population_mcc(double separation, double p_train) {
  const double delta = separation * std::numbers::sqrt2;
  const double c = detail::calibrated_cut(delta, p_train);
  return detail::normal_sf(c - delta) - detail::normal_sf(c);
}

/// Separation d at which population_mcc hits the target, by bisection.
inline double tune_separation(double target_mcc, double p_train) {
  detail::require(target_mcc > 0.0 && target_mcc < 1.0, "tune_separation: target must lie in (0, 1)");
  detail::require(p_train > 0.0 && p_train < 1.0, "tune_separation: p_train must lie in (0, 1)");
  double lo = 0.0, hi = 20.0;
  for (int i = 0; i < 100; ++i) {
    const double mid = 0.5 * (lo + hi);
    (population_mcc(mid, p_train) < target_mcc ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

struct LabeledPoints {
  std::vector<Point2> features;
  std::vector<int> labels;
};

/// n points, exactly round(mu * n) of them positive; positives centred at (d, d).
inline LabeledPoints gaussian_split(RandomStream& rng, std::int64_t n, double mu, double separation) {
  LabeledPoints s;
  const std::int64_t k = detail::positives_for(mu, n);
  s.features.reserve(static_cast<std::size_t>(n));
  s.labels.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const int y = i < k ? 1 : 0;
    const double shift = y ? separation : 0.0;
    const double a = rng.normal() + shift;
    const double b = rng.normal() + shift;
    s.features.push_back({a, b});
    s.labels.push_back(y);
  }
  return s;
}

struct ClassifierSplits {
  ScoredDataset train;
  ScoredDataset validation;
  ScoredDataset evaluation;
  LogisticModel model;
  double true_mu = 0.0;
};

/// Train/validation at prevalence p_train and evaluation at p_eval, scored by a
/// logistic model fitted on the training split.
inline ClassifierSplits generate_classifier_splits(RandomStream& rng, const SimConfig& cfg, double p_eval,
                                                   double separation) {
  const std::int64_t k_train = detail::positives_for(cfg.p_train, cfg.n_train);
  const std::int64_t k_val = detail::positives_for(cfg.p_train, cfg.n_val);
  const std::int64_t k_eval = detail::positives_for(p_eval, cfg.n);
  detail::require(k_train > 0 && k_train < cfg.n_train, "classifier_end_to_end: training split has a single class");
  detail::require(k_val > 0 && k_val < cfg.n_val, "classifier_end_to_end: validation split has a single class");

  const auto train = gaussian_split(rng, cfg.n_train, cfg.p_train, separation);
  const auto val = gaussian_split(rng, cfg.n_val, cfg.p_train, separation);
  const auto eval = gaussian_split(rng, cfg.n, p_eval, separation);

  ClassifierSplits out;
  out.model = fit_logistic(train.features, train.labels, {cfg.learning_rate, cfg.epochs});
  const auto score = [&](const LabeledPoints& pts, Split split) {
    std::vector<ScoredRecord> recs;
    recs.reserve(pts.labels.size());
    for (std::size_t i = 0; i < pts.labels.size(); ++i) {
      recs.push_back({out.model.score(pts.features[i]), pts.labels[i]});
    }
    return ScoredDataset(std::move(recs), split);
  };
  out.train = score(train, Split::train);
  out.validation = score(val, Split::validation);
  out.evaluation = score(eval, Split::evaluation);
  out.true_mu = static_cast<double>(k_eval) / static_cast<double>(cfg.n);
  return out;
}

inline double end_to_end_separation(const SimConfig& cfg) {
  return cfg.separation ? *cfg.separation : tune_separation(cfg.target_mcc, cfg.p_train);
}

inline SimTables run_classifier_end_to_end(const SimConfig& cfg) {
  detail::require_scenario(cfg, Scenario::classifier_end_to_end);
  const double separation = end_to_end_separation(cfg);
  const double operating_m = population_mcc(separation, cfg.p_train);

  struct Trial {
    BiasReport report;
    double true_mu;
  };
  PipelineOptions opts;
  opts.prior = cfg.prior;
  opts.mass = cfg.mass;
  opts.grid_points = cfg.grid_points;
  opts.significance = cfg.significance;

  SimTables out;
  detail::RowSink sink(cfg, out);
  std::uint64_t cell = 0;
  for (double mu : cfg.p_eval) {
    const auto results = detail::parallel_trials(cfg.trials, cfg.threads, [&](std::int64_t trial) {
      auto rng = derive_stream(cfg.seed, static_cast<std::uint32_t>(cfg.scenario), cell,
                               static_cast<std::uint64_t>(trial));
      const auto splits = generate_classifier_splits(rng, cfg, mu, separation);
      return Trial{estimate_pipeline(splits.train, splits.validation, splits.evaluation, opts), splits.true_mu};
    });

    double raw_err = 0.0, cor_err = 0.0, closer = 0.0, rejected = 0.0, covered = 0.0;
    double mu_hat = 0.0, map = 0.0, val_mcc = 0.0;
    for (const auto& r : results) {
      const double e_raw = std::abs(r.report.mu_hat - r.true_mu);
      const double e_cor = std::abs(r.report.map - r.true_mu);
      raw_err += e_raw;
      cor_err += e_cor;
      closer += e_cor < e_raw ? 1.0 : 0.0;
      rejected += r.report.bias_detected ? 1.0 : 0.0;
      covered += (r.report.interval_lo <= r.true_mu && r.true_mu <= r.report.interval_hi) ? 1.0 : 0.0;
      mu_hat += r.report.mu_hat;
      map += r.report.map;
      val_mcc += r.report.validation_mcc;
    }
    const auto trials = static_cast<double>(cfg.trials);
    sink.cell(operating_m, mu);
    sink.stat("separation", separation);
    sink.stat("true_mu", results.front().true_mu);
    sink.stat("mean_mu_hat", mu_hat / trials);
    sink.stat("mean_map", map / trials);
    sink.stat("mean_validation_mcc", val_mcc / trials);
    sink.stat("mean_abs_err_raw", raw_err / trials);
    sink.stat("mean_abs_err_corrected", cor_err / trials);
    sink.stat("frac_corrected_closer", closer / trials);
    sink.stat("rejection_rate", rejected / trials);
    sink.stat("coverage", covered / trials);
    for (std::size_t t = 0; t < results.size(); ++t) {
      const auto& rep = results[t].report;
      const auto ti = static_cast<std::int64_t>(t);
      sink.raw("true_mu", results[t].true_mu, ti);
      sink.raw("mu_hat", rep.mu_hat, ti);
      sink.raw("map", rep.map, ti);
      sink.raw("posterior_mean", rep.posterior_mean, ti);
      sink.raw("interval_lo", rep.interval_lo, ti);
      sink.raw("interval_hi", rep.interval_hi, ti);
      sink.raw("validation_mcc", rep.validation_mcc, ti);
      sink.raw("m", rep.m, ti);
      sink.raw("p_value", rep.p_value, ti);
    }
    ++cell;
  }
  return out;
}

inline SimTables run_scenario(const SimConfig& cfg) {
  switch (cfg.scenario) {
    case Scenario::mcc_noise: return run_mcc_noise_experiment(cfg);
    case Scenario::bias_drift: return run_bias_experiment(cfg);
    case Scenario::posterior_recovery: return run_posterior_recovery(cfg);
    case Scenario::classifier_end_to_end: return run_classifier_end_to_end(cfg);
  }
  throw std::invalid_argument("unknown scenario");
}

// ---------------------------------------------------------------------------
// CSV emission

inline constexpr std::string_view kSimCsvHeader = "scenario,m,noise,p_train,p_eval,n,trials,stat_name,value,seed,trial";

/// Shortest representation that round-trips.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline void write_sim_csv(std::ostream& os, std::span<const SimResultRow> rows) {
  os << kSimCsvHeader << '\n';
  for (const auto& r : rows) {
    os << to_string(r.scenario) << ',' << format_double(r.m) << ',' << format_double(r.noise) << ','
       << format_double(r.p_train) << ',' << format_double(r.p_eval) << ',' << r.n << ',' << r.trials << ','
       << r.stat_name << ',' << format_double(r.value) << ',' << r.seed << ',' << r.trial << '\n';
  }
}

}  // namespace pbias
