#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "einv/dataset.hpp"
#include "einv/ensemble.hpp"
#include "einv/model.hpp"
#include "einv/synthesis.hpp"

namespace einv {

struct AccuracyResult {
  double overall = 0.0;
  std::vector<double> per_class;  // indexed by canonical class
};

// Fraction of samples the evaluator assigns to their intended class. The
// evaluator labels canonical class c as canonical_labels[c] (identity when empty).
// Refuses evaluators that belong to `ensemble`.
AccuracyResult attack_accuracy(const FrozenModel& eval_model, const SampleBatch& batch,
                               std::int64_t shared_class_count, const std::vector<std::int64_t>& canonical_labels = {},
                               const Ensemble* ensemble = nullptr);

// Penultimate-layer features, one row per image.
torch::Tensor extract_features(const FrozenModel& model, const torch::Tensor& images);

// Training features grouped by label.
using FeaturesByClass = std::map<std::int64_t, torch::Tensor>;
FeaturesByClass group_by_class(const torch::Tensor& features, const torch::Tensor& labels);

// Mean L2 distance from each row to the centroid of training features of `label`.
double feature_distance(const torch::Tensor& recon_features, std::int64_t label, const FeaturesByClass& training);
// Mean over rows of the L2 distance to the nearest training feature of `label`.
double knn_distance(const torch::Tensor& recon_features, std::int64_t label, const FeaturesByClass& training);

struct EvaluationReport {
  AccuracyResult accuracy;
  double feature_distance_eva = 0.0;
  double knn_distance_eva = 0.0;
  double feature_distance_generic = 0.0;
  double knn_distance_generic = 0.0;
  std::int64_t sample_count = 0;
  std::string eva_hash;
  std::string generic_hash;
  std::string generic_training_set;

  // {"attack_accuracy": {...}, "feature_distance": {...}, "knn_distance": {...}} plus provenance.
  json to_json() const;
  static EvaluationReport from_json(const json& j);
};

// Precomputed evaluator-side state so repeated reports do not re-extract training features.
struct EvaluationContext {
  ModelPtr eva;
  ModelPtr generic;
  std::string training_set;
  FeaturesByClass eva_training;
  FeaturesByClass generic_training;

  static EvaluationContext build(ModelPtr eva, ModelPtr generic, const ImageSet& training_set);
};

// Distances average over samples within a class, then over classes with equal weight.
EvaluationReport build_report(const SampleBatch& batch, const EvaluationContext& ctx,
                              std::int64_t shared_class_count, const std::vector<std::int64_t>& canonical_labels = {},
                              const Ensemble* ensemble = nullptr);

}  // namespace einv
