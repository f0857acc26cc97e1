#include "paudit/voting.hpp"

#include <algorithm>
#include <map>
#include <numeric>

namespace paudit {

namespace {

std::vector<double> normalise(std::vector<double> w) {
  const double sum = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(sum > 0.0)) throw MissingWeights("weights sum to zero");
  for (auto& x : w) x /= sum;
  return w;
}

}  // namespace

std::string_view to_string(WeightScheme s) {
  switch (s) {
    case WeightScheme::majority: return "majority";
    case WeightScheme::experience_weighted: return "experience_weighted";
    case WeightScheme::performance_weighted: return "performance_weighted";
    case WeightScheme::hybrid: return "hybrid";
  }
  return "?";
}

WeightScheme weight_scheme_from_string(std::string_view s) {
  for (auto k : {WeightScheme::majority, WeightScheme::experience_weighted,
                 WeightScheme::performance_weighted, WeightScheme::hybrid}) {
    if (to_string(k) == s) return k;
  }
  throw InvalidInput("unknown weight policy '" + std::string(s) + "'");
}

void WeightPolicy::validate() const {
  if (alpha < 0.0 || alpha > 1.0) throw InvalidInput("hybrid alpha must lie in [0, 1]");
  if (!(epsilon > 0.0)) throw InvalidInput("performance floor epsilon must be > 0");
}

std::vector<double> equal_weights(std::size_t n) {
  if (n == 0) throw InvalidInput("no coders");
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

std::vector<double> experience_weights(std::span<const double> experience_years) {
  if (experience_years.empty()) throw InvalidInput("no coder profiles");
  std::vector<double> w;
  w.reserve(experience_years.size());
  for (double years : experience_years) {
    if (years < 0.0) throw InvalidInput("experience_years must be non-negative");
    w.push_back(1.0 + years);
  }
  return normalise(std::move(w));
}

std::vector<double> performance_weights_from_scores(std::span<const double> macro_f1s,
                                                    double epsilon) {
  if (macro_f1s.empty()) throw MissingWeights("no performance history");
  if (!(epsilon > 0.0)) throw InvalidInput("performance floor epsilon must be > 0");
  std::vector<double> w;
  w.reserve(macro_f1s.size());
  for (double f : macro_f1s) w.push_back(std::max(f, epsilon));
  return normalise(std::move(w));
}

std::vector<double> performance_weights(std::span<const CoderHistory> histories, double epsilon) {
  if (histories.empty()) throw MissingWeights("no performance history");
  std::vector<double> scores;
  for (const auto& h : histories) {
    if (h.calibration.size() == 0 || h.calibration.total_counted() == 0) {
      throw MissingWeights("coder '" + h.coder_id + "' has an empty calibration set");
    }
    scores.push_back(macro_f1(h.calibration));
  }
  return performance_weights_from_scores(scores, epsilon);
}

std::vector<double> hybrid_weights(std::span<const double> experience,
                                   std::span<const double> performance, double alpha) {
  if (experience.size() != performance.size()) {
    throw InvalidInput("experience and performance weight vectors differ in length");
  }
  if (alpha < 0.0 || alpha > 1.0) throw InvalidInput("hybrid alpha must lie in [0, 1]");
  std::vector<double> w(experience.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = alpha * experience[i] + (1.0 - alpha) * performance[i];
  }
  return normalise(std::move(w));
}

VoteResult weighted_vote(std::span<const int> labels, std::span<const double> weights) {
  if (labels.size() != weights.size()) throw InvalidInput("labels and weights differ in length");
  if (labels.empty()) throw InvalidInput("no votes");

  std::map<int, double> totals;  // ordered: ties resolve to the smallest code
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (weights[i] < 0.0) throw InvalidInput("negative vote weight");
    totals[labels[i]] += weights[i];
    total += weights[i];
  }
  if (!(total > 0.0)) throw InvalidInput("all vote weights are zero");

  // Sums that differ only by rounding noise are ties; the relative tolerance
  // keeps the outcome invariant under rescaling of the weight vector.
  const double tol = 1e-9 * total;
  VoteResult result;
  result.total_weight = total;
  bool first = true;
  for (const auto& [label, w] : totals) {
    if (first || w > result.winning_weight + tol) {
      result.label = label;
      result.winning_weight = w;
      result.tie = false;
      first = false;
    } else if (w >= result.winning_weight - tol) {
      result.tie = true;
    }
  }
  return result;
}

VoteResult weighted_vote(std::span<const std::optional<int>> labels,
                         std::span<const double> weights) {
  if (labels.size() != weights.size()) throw InvalidInput("labels and weights differ in length");
  std::vector<int> kept_labels;
  std::vector<double> kept_weights;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) continue;
    kept_labels.push_back(*labels[i]);
    kept_weights.push_back(weights[i]);
  }
  if (kept_labels.empty()) throw InvalidInput("every coder abstained");
  return weighted_vote(kept_labels, kept_weights);
}

}  // namespace paudit
