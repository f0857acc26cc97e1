#pragma once

// Weighted voting over mixed human/model coder pools.
//
// Weight formulas (all normalised to sum to 1):
//   experience:  w_i ∝ 1 + experience_years_i
//   performance: w_i ∝ max(macroF1_i, epsilon)
//   hybrid:      w_i ∝ alpha * experience_i + (1 - alpha) * performance_i
// Ties go to the smallest label code; callers map their label domain onto
// codes in tie-break order.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "paudit/metrics.hpp"

namespace paudit {

enum class WeightScheme { majority, experience_weighted, performance_weighted, hybrid };

std::string_view to_string(WeightScheme s);
WeightScheme weight_scheme_from_string(std::string_view s);

struct WeightPolicy {
  WeightScheme kind = WeightScheme::majority;
  double alpha = 0.5;     // hybrid mixing coefficient in [0, 1]
  double epsilon = 0.01;  // performance floor, > 0

  void validate() const;
};

struct CoderHistory {
  std::string coder_id;
  ConfusionMatrix calibration;  // counts on the shared calibration set
};

std::vector<double> equal_weights(std::size_t n);
std::vector<double> experience_weights(std::span<const double> experience_years);
std::vector<double> performance_weights_from_scores(std::span<const double> macro_f1s,
                                                    double epsilon);
// Throws MissingWeights when a history has no calibration counts.
std::vector<double> performance_weights(std::span<const CoderHistory> histories, double epsilon);
std::vector<double> hybrid_weights(std::span<const double> experience,
                                   std::span<const double> performance, double alpha);

struct VoteResult {
  int label = 0;
  bool tie = false;
  double winning_weight = 0.0;
  double total_weight = 0.0;

  double agreement() const { return total_weight > 0.0 ? winning_weight / total_weight : 0.0; }
  bool operator==(const VoteResult&) const = default;
};

// Argmax of summed weight per label. Throws InvalidInput on length mismatch,
// negative weights or all-zero weights.
VoteResult weighted_vote(std::span<const int> labels, std::span<const double> weights);

// Same, with abstentions (nullopt, e.g. a model refusal) dropped before
// voting. Throws InvalidInput when every coder abstains.
VoteResult weighted_vote(std::span<const std::optional<int>> labels,
                         std::span<const double> weights);

}  // namespace paudit
