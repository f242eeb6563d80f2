#pragma once

// Classifier-output bookkeeping: decision-threshold calibration, confusion
// matrices and MCC, expected calibration error, Platt scaling and
// dropout-ensemble spread.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pbias/detail/numeric.hpp"

namespace pbias {

enum class Split { train, validation, evaluation };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::evaluation: return "evaluation";
  }
  return "?";
}

struct ScoredRecord {
  double score = 0.0;
  std::optional<int> label;
};

/// Classifier scores for one split. Train and validation splits must be fully
/// labeled; evaluation labels are optional.
struct ScoredDataset {
  std::vector<ScoredRecord> records;
  Split split = Split::evaluation;

  ScoredDataset() = default;
  ScoredDataset(std::vector<ScoredRecord> recs, Split s) : records(std::move(recs)), split(s) { validate(); }

  void validate() const {
    const std::string name = to_string(split);
    detail::require(!records.empty(), name + " split is empty");
    for (const auto& r : records) {
      detail::require(std::isfinite(r.score), name + " split has a non-finite score");
      if (r.label) detail::require(*r.label == 0 || *r.label == 1, name + " split has a label outside {0,1}");
      else detail::require(split == Split::evaluation, name + " split has an unlabeled record");
    }
  }

  std::size_t size() const { return records.size(); }

  bool fully_labeled() const {
    return std::all_of(records.begin(), records.end(), [](const ScoredRecord& r) { return r.label.has_value(); });
  }

  std::vector<double> scores() const {
    std::vector<double> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.score);
    return out;
  }

  /// Labels of a fully labeled split.
  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(records.size());
    for (const auto& r : records) {
      detail::require(r.label.has_value(), std::string(to_string(split)) + " split is not fully labeled");
      out.push_back(*r.label);
    }
    return out;
  }

  double label_mean() const {
    const auto ls = labels();
    double s = 0.0;
    for (int l : ls) s += l;
    return s / static_cast<double>(ls.size());
  }
};

struct ConfusionMatrix {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
  std::int64_t fn = 0;

  std::int64_t total() const { return tp + fp + tn + fn; }
  double accuracy() const { return static_cast<double>(tp + tn) / static_cast<double>(total()); }

  void add(int prediction, int label) {
    if (prediction) (label ? tp : fp) += 1;
    else (label ? fn : tn) += 1;
  }

  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels) {
  detail::require(predictions.size() == labels.size(), "confusion: length mismatch");
  detail::require(!predictions.empty(), "confusion: empty input");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    detail::require((predictions[i] == 0 || predictions[i] == 1) && (labels[i] == 0 || labels[i] == 1),
                    "confusion: values must be 0 or 1");
    cm.add(predictions[i], labels[i]);
  }
  return cm;
}

/// Matthews correlation coefficient; 0 when any marginal is empty.
inline double mcc(const ConfusionMatrix& cm) {
  const auto tp = static_cast<double>(cm.tp);
  const auto fp = static_cast<double>(cm.fp);
  const auto tn = static_cast<double>(cm.tn);
  const auto fn = static_cast<double>(cm.fn);
  const double a = tp + fp, b = tp + fn, c = tn + fp, d = tn + fn;
  if (a == 0.0 || b == 0.0 || c == 0.0 || d == 0.0) return 0.0;
  // Pairing (a, d) and (b, c) keeps the result bit-identical under tp<->tn, fp<->fn.
  const double r = (tp * tn - fp * fn) / std::sqrt((a * d) * (b * c));
  return std::clamp(r, -1.0, 1.0);
}

struct ThresholdCalibration {
  double threshold = 0.0;
  double achieved_rate = 0.0;
  std::size_t positives = 0;
};

/// Picks a threshold so that the fraction of scores >= threshold is the
/// achievable rate closest to `target_mean` (ties go to the higher rate). The
/// threshold is the midpoint of the two order statistics it separates, or
/// max + 1 / min - 1 at the extremes.
inline ThresholdCalibration calibrate_threshold(std::span<const double> scores, double target_mean) {
  detail::require(!scores.empty(), "calibrate_threshold: no scores");
  detail::require(detail::is_probability(target_mean), "calibrate_threshold: target must lie in [0, 1]");
  std::vector<double> desc(scores.begin(), scores.end());
  for (double s : desc) detail::require(std::isfinite(s), "calibrate_threshold: non-finite score");
  std::sort(desc.begin(), desc.end(), std::greater<>());
  const std::size_t n = desc.size();
  const auto nd = static_cast<double>(n);

  // k positives is achievable iff k is 0, n, or desc[k-1] > desc[k].
  std::size_t best_k = 0;
  double best_gap = std::abs(target_mean);
  for (std::size_t k = 1; k <= n; ++k) {
    if (k < n && !(desc[k - 1] > desc[k])) continue;
    const double gap = std::abs(static_cast<double>(k) / nd - target_mean);
    if (gap <= best_gap) {
      best_gap = gap;
      best_k = k;
    }
  }

  ThresholdCalibration out;
  out.positives = best_k;
  out.achieved_rate = static_cast<double>(best_k) / nd;
  if (best_k == 0) out.threshold = desc.front() + 1.0;
  else if (best_k == n) out.threshold = desc.back() - 1.0;
  else out.threshold = 0.5 * (desc[best_k - 1] + desc[best_k]);
  return out;
}

inline std::vector<int> predict_at(std::span<const double> scores, double threshold) {
  std::vector<int> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] >= threshold ? 1 : 0;
  return out;
}

struct ReliabilityBin {
  double lo = 0.0;
  double hi = 0.0;
  std::int64_t count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;  // fraction of positive labels in the bin
};

struct ReliabilityBins {
  std::vector<ReliabilityBin> bins;
  std::size_t n_bins() const { return bins.size(); }
};

/// Equal-width bins over [0, 1]; every bin is half-open except the last, which
/// is closed on the right.
inline ReliabilityBins reliability(std::span<const double> scores, std::span<const int> labels, std::size_t n_bins) {
  detail::require(n_bins > 0, "reliability: n_bins must be positive");
  detail::require(scores.size() == labels.size(), "reliability: length mismatch");
  ReliabilityBins out;
  out.bins.resize(n_bins);
  std::vector<double> conf_sum(n_bins, 0.0), pos_sum(n_bins, 0.0);
  const auto nb = static_cast<double>(n_bins);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = scores[i];
    detail::require(detail::is_probability(s), "reliability: scores must lie in [0, 1]");
    detail::require(labels[i] == 0 || labels[i] == 1, "reliability: labels must be 0 or 1");
    const auto b = std::min(static_cast<std::size_t>(s * nb), n_bins - 1);
    out.bins[b].count += 1;
    conf_sum[b] += s;
    pos_sum[b] += labels[i];
  }
  for (std::size_t b = 0; b < n_bins; ++b) {
    auto& bin = out.bins[b];
    bin.lo = static_cast<double>(b) / nb;
    bin.hi = static_cast<double>(b + 1) / nb;
    if (bin.count > 0) {
      bin.mean_confidence = conf_sum[b] / static_cast<double>(bin.count);
      bin.accuracy = pos_sum[b] / static_cast<double>(bin.count);
    }
  }
  return out;
}

inline double ece(const ReliabilityBins& rb) {
  std::int64_t total = 0;
  for (const auto& b : rb.bins) total += b.count;
  if (total == 0) return 0.0;
  double e = 0.0;
  for (const auto& b : rb.bins) {
    if (b.count == 0) continue;
    e += static_cast<double>(b.count) / static_cast<double>(total) * std::abs(b.accuracy - b.mean_confidence);
  }
  return e;
}

inline double ece(std::span<const double> scores, std::span<const int> labels, std::size_t n_bins) {
  return ece(reliability(scores, labels, n_bins));
}

struct PlattParams {
  double slope = 1.0;
  double intercept = 0.0;
};

enum class PlattStatus { converged, max_iterations, separable };

inline const char* to_string(PlattStatus s) {
  switch (s) {
    case PlattStatus::converged: return "converged";
    case PlattStatus::max_iterations: return "max_iterations";
    case PlattStatus::separable: return "separable";
  }
  return "?";
}

struct PlattFit {
  PlattParams params;
  PlattStatus status = PlattStatus::max_iterations;
  int iterations = 0;
  double gradient_norm = 0.0;
  double loss = 0.0;

  bool converged() const { return status == PlattStatus::converged; }
};

inline double platt_apply(const PlattParams& params, double logit) {
  return detail::sigmoid(params.slope * logit + params.intercept);
}

/// Mean logistic loss of sigmoid(slope * logit + intercept) against labels.
inline double logistic_loss(std::span<const double> logits, std::span<const int> labels, const PlattParams& params) {
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = params.slope * logits[i] + params.intercept;
    s += detail::softplus(z) - labels[i] * z;
  }
  return s / static_cast<double>(logits.size());
}

namespace detail {

// True when the two classes can be split by a threshold on the logit, in
// which case the loss has no finite minimizer.
inline bool logits_separable(std::span<const double> logits, std::span<const int> labels) {
  double min_pos = kInf, max_pos = -kInf, min_neg = kInf, max_neg = -kInf;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (labels[i]) {
      min_pos = std::min(min_pos, logits[i]);
      max_pos = std::max(max_pos, logits[i]);
    } else {
      min_neg = std::min(min_neg, logits[i]);
      max_neg = std::max(max_neg, logits[i]);
    }
  }
  const bool constant = min_pos == max_pos && min_neg == max_neg && min_pos == min_neg;
  return !constant && (max_neg <= min_pos || max_pos <= min_neg);
}

}  // namespace detail

/// Fits Platt scaling by damped Newton iteration from the identity map.
/// Converges when the gradient norm drops below 1e-8; capped at 100 iterations.
/// Separable data never converges: steps are length-capped and the fit is
/// reported with PlattStatus::separable.
inline PlattFit platt_fit(std::span<const double> logits, std::span<const int> labels) {
  constexpr int kMaxIter = 100;
  constexpr double kGradTol = 1e-8;
  constexpr double kMaxStep = 1.0;
  constexpr double kRidge = 1e-9;

  detail::require(logits.size() == labels.size(), "platt_fit: length mismatch");
  detail::require(logits.size() >= 2, "platt_fit: need at least two examples");
  std::int64_t positives = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    detail::require(labels[i] == 0 || labels[i] == 1, "platt_fit: labels must be 0 or 1");
    detail::require(std::isfinite(logits[i]), "platt_fit: non-finite logit");
    positives += labels[i];
  }
  detail::require(positives > 0 && positives < static_cast<std::int64_t>(labels.size()),
                  "platt_fit: labels contain a single class");

  const bool separable = detail::logits_separable(logits, labels);
  const auto n = static_cast<double>(logits.size());

  PlattFit fit;
  fit.params = PlattParams{1.0, 0.0};
  fit.loss = logistic_loss(logits, labels, fit.params);

  for (int iter = 0; iter < kMaxIter; ++iter) {
    double ga = 0.0, gb = 0.0, haa = 0.0, hab = 0.0, hbb = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double x = logits[i];
      const double p = detail::sigmoid(fit.params.slope * x + fit.params.intercept);
      const double r = p - labels[i];
      const double w = p * (1.0 - p);
      ga += r * x;
      gb += r;
      haa += w * x * x;
      hab += w * x;
      hbb += w;
    }
    ga /= n, gb /= n, haa /= n, hab /= n, hbb /= n;
    fit.gradient_norm = std::hypot(ga, gb);
    fit.iterations = iter;
    if (!separable && fit.gradient_norm < kGradTol) {
      fit.status = PlattStatus::converged;
      return fit;
    }

    // Levenberg-style damping keeps the 2x2 system solvable as the Hessian degenerates.
    const double lambda = kRidge + 1e-6 * (haa + hbb);
    const double a = haa + lambda, b = hab, d = hbb + lambda;
    const double det = a * d - b * b;
    double da = -(d * ga - b * gb) / det;
    double db = -(a * gb - b * ga) / det;
    const double len = std::hypot(da, db);
    if (len > kMaxStep) {
      da *= kMaxStep / len;
      db *= kMaxStep / len;
    }

    bool improved = false;
    for (int halving = 0; halving < 40 && !improved; ++halving) {
      const PlattParams trial{fit.params.slope + da, fit.params.intercept + db};
      const double loss = logistic_loss(logits, labels, trial);
      if (loss < fit.loss) {
        fit.params = trial;
        fit.loss = loss;
        improved = true;
      }
      da *= 0.5;
      db *= 0.5;
    }
    if (!improved) {
      // No representable descent step remains.
      fit.status = separable                               ? PlattStatus::separable
                   : fit.gradient_norm < std::sqrt(kGradTol) ? PlattStatus::converged
                                                             : PlattStatus::max_iterations;
      return fit;
    }
  }
  fit.iterations = kMaxIter;
  fit.status = separable ? PlattStatus::separable : PlattStatus::max_iterations;
  return fit;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Per-example mean and population standard deviation over S stochastic
/// forward passes. `passes[s][i]` is the output of pass s on example i.
inline std::vector<MeanStd> dropout_uncertainty(std::span<const std::vector<double>> passes) {
  detail::require(passes.size() >= 2, "dropout_uncertainty: need at least two passes");
  const std::size_t n = passes.front().size();
  detail::require(n >= 1, "dropout_uncertainty: need at least one example");
  for (const auto& p : passes) detail::require(p.size() == n, "dropout_uncertainty: ragged sample matrix");
  const auto s = static_cast<double>(passes.size());
  std::vector<MeanStd> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (const auto& p : passes) sum += p[i];
    const double mu = sum / s;
    double ss = 0.0;
    for (const auto& p : passes) ss += (p[i] - mu) * (p[i] - mu);
    out[i] = MeanStd{mu, std::sqrt(ss / s)};
  }
  return out;
}

}  // namespace pbias
