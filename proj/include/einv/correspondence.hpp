#pragma once

#include <cstdint>
#include <vector>

#include "einv/ensemble.hpp"
#include "einv/matrix.hpp"
#include "einv/model.hpp"

namespace einv {

enum class ScoreKind { covariance, correlation };
enum class MatchAlgorithm { optimal, greedy };

struct MatchedPair {
  std::int64_t a = 0;
  std::int64_t b = 0;
  double score = 0.0;
};

struct CorrespondenceResult {
  std::vector<MatchedPair> pairs;  // sorted by class index in A
  std::vector<std::int64_t> unmatched_a;
  std::vector<std::int64_t> unmatched_b;
  Matrix score_matrix;
  double threshold = 0.0;

  json to_json() const;
};

// Entry (p,q): sample covariance (divisor N-1) between A's class-p probability and
// B's class-q probability over the probe batch; Pearson correlation when asked.
// The probe must hold at least 10 * max(C_A, C_B) inputs.
Matrix covariance_matrix(const FrozenModel& a, const FrozenModel& b, const torch::Tensor& probe,
                         ScoreKind kind = ScoreKind::covariance);

// One-to-one assignment maximizing the total score, then pairs scoring below
// `threshold` are demoted to unmatched.
CorrespondenceResult match_classes(const Matrix& score, double threshold,
                                   MatchAlgorithm algorithm = MatchAlgorithm::optimal);

// Sharedness threshold from a null pair of models whose classes are disjoint by
// construction: 3 x the 95th percentile of |scores|.
double null_threshold(const Matrix& null_scores, double multiplier = 3.0, double quantile = 0.95);

struct AlignOptions {
  double threshold = 0.0;
  ScoreKind score = ScoreKind::covariance;
  MatchAlgorithm algorithm = MatchAlgorithm::optimal;
};

struct AlignResult {
  Ensemble ensemble;
  std::vector<CorrespondenceResult> per_member;  // reference vs each member
};

// Canonical classes: reference classes matched above threshold by every member,
// ascending by reference index.
AlignResult align_ensemble(const std::vector<ModelPtr>& models, const FrozenModel& reference,
                           const torch::Tensor& probe, const AlignOptions& options);

}  // namespace einv
