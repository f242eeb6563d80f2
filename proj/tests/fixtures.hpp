#pragma once

// Synthetic score/label fixtures. Uses its own engine so fixtures do not
// depend on the library's stream derivation.

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace fixture {

struct ScoredSample {
  std::vector<double> logits;
  std::vector<double> probs;
  std::vector<int> labels;
};

/// Logits ~ N(0, 2^2); labels ~ Bernoulli(sigmoid(logit)). The reported
/// logits are multiplied by `temperature` (1 gives a calibrated fixture).
inline ScoredSample logistic_sample(std::size_t n, double temperature, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> z(0.0, 2.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ScoredSample s;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = z(eng);
    const double p = 1.0 / (1.0 + std::exp(-x));
    s.labels.push_back(u(eng) < p ? 1 : 0);
    const double reported = temperature * x;
    s.logits.push_back(reported);
    s.probs.push_back(1.0 / (1.0 + std::exp(-reported)));
  }
  return s;
}

inline std::string to_csv(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::ostringstream os;
  os.precision(17);
  os << "score,label\n";
  for (std::size_t i = 0; i < scores.size(); ++i) os << scores[i] << ',' << labels[i] << '\n';
  return os.str();
}

}  // namespace fixture
