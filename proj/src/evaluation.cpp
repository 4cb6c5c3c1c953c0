#include "einv/evaluation.hpp"

#include "einv/error.hpp"
#include "einv/manifest.hpp"

namespace einv {

namespace {

std::int64_t evaluator_label(const std::vector<std::int64_t>& canonical_labels, std::int64_t c) {
  return canonical_labels.empty() ? c : canonical_labels.at(static_cast<std::size_t>(c));
}

const torch::Tensor& class_features(const FeaturesByClass& training, std::int64_t label) {
  const auto it = training.find(label);
  if (it == training.end() || it->second.size(0) == 0) {
    throw ValidationError("no training features for class " + std::to_string(label));
  }
  return it->second;
}

void guard_independence(const FrozenModel& eval_model, const Ensemble* ensemble) {
  if (ensemble == nullptr) return;
  for (const auto& m : ensemble->members) {
    if (m->id() == eval_model.id() || m->weights_hash() == eval_model.weights_hash()) {
      throw ValidationError("evaluation model " + eval_model.id() + " is part of the attacked ensemble");
    }
    if (m->arch_id() == eval_model.arch_id()) {
      throw ValidationError("evaluation model shares architecture '" + m->arch_id() + "' with an attacked model");
    }
  }
}

}  // namespace

AccuracyResult attack_accuracy(const FrozenModel& eval_model, const SampleBatch& batch,
                               std::int64_t shared_class_count, const std::vector<std::int64_t>& canonical_labels,
                               const Ensemble* ensemble) {
  guard_independence(eval_model, ensemble);
  if (batch.size() == 0) throw ValidationError("attack_accuracy: empty batch");
  if (shared_class_count <= 0) throw ValidationError("attack_accuracy: shared_class_count must be positive");
  std::vector<std::int64_t> expected_map;
  for (std::int64_t c = 0; c < shared_class_count; ++c) expected_map.push_back(evaluator_label(canonical_labels, c));
  const auto expected = torch::tensor(expected_map, torch::kInt64).index_select(0, batch.labels);
  const auto hit = eval_model.predict_logits(batch.images).argmax(1).eq(expected).to(torch::kFloat64);

  AccuracyResult r;
  r.overall = hit.mean().item<double>();
  for (std::int64_t c = 0; c < shared_class_count; ++c) {
    const auto mask = batch.labels.eq(c);
    const auto n = mask.sum().item<std::int64_t>();
    r.per_class.push_back(n == 0 ? 0.0 : hit.masked_select(mask).mean().item<double>());
  }
  return r;
}

torch::Tensor extract_features(const FrozenModel& model, const torch::Tensor& images) {
  if (!model.has_feature_tap()) {
    throw ValidationError("arch '" + model.arch_id() + "' declares no penultimate tap");
  }
  return model.extract_features(images);
}

FeaturesByClass group_by_class(const torch::Tensor& features, const torch::Tensor& labels) {
  FeaturesByClass out;
  const auto uniq = std::get<0>(at::_unique(labels));
  for (std::int64_t i = 0; i < uniq.size(0); ++i) {
    const auto c = uniq[i].item<std::int64_t>();
    out[c] = features.index_select(0, labels.eq(c).nonzero().squeeze(1)).to(torch::kFloat64);
  }
  return out;
}

double feature_distance(const torch::Tensor& recon_features, std::int64_t label, const FeaturesByClass& training) {
  const auto& train = class_features(training, label);
  if (recon_features.size(0) == 0) throw ValidationError("feature_distance: no reconstructed samples");
  const auto centroid = train.mean(0, true);
  return (recon_features.to(torch::kFloat64) - centroid).pow(2).sum(1).sqrt().mean().item<double>();
}

double knn_distance(const torch::Tensor& recon_features, std::int64_t label, const FeaturesByClass& training) {
  const auto& train = class_features(training, label);
  if (recon_features.size(0) == 0) throw ValidationError("knn_distance: no reconstructed samples");
  const auto d = torch::cdist(recon_features.to(torch::kFloat64), train);
  return std::get<0>(d.min(1)).mean().item<double>();
}

json EvaluationReport::to_json() const {
  return {{"attack_accuracy", {{"overall", accuracy.overall}, {"per_class", accuracy.per_class}}},
          {"feature_distance", {{"eva", feature_distance_eva}, {"generic", feature_distance_generic}}},
          {"knn_distance", {{"eva", knn_distance_eva}, {"generic", knn_distance_generic}}},
          {"sample_count", sample_count},
          {"evaluators", {{"eva", eva_hash}, {"generic", generic_hash}, {"generic_training_set", generic_training_set}}}};
}

EvaluationReport EvaluationReport::from_json(const json& j) {
  EvaluationReport r;
  r.accuracy.overall = j.at("attack_accuracy").at("overall").get<double>();
  r.accuracy.per_class = j.at("attack_accuracy").at("per_class").get<std::vector<double>>();
  r.feature_distance_eva = j.at("feature_distance").at("eva").get<double>();
  r.feature_distance_generic = j.at("feature_distance").at("generic").get<double>();
  r.knn_distance_eva = j.at("knn_distance").at("eva").get<double>();
  r.knn_distance_generic = j.at("knn_distance").at("generic").get<double>();
  r.sample_count = j.value("sample_count", std::int64_t{0});
  if (j.contains("evaluators")) {
    r.eva_hash = j["evaluators"].value("eva", "");
    r.generic_hash = j["evaluators"].value("generic", "");
    r.generic_training_set = j["evaluators"].value("generic_training_set", "");
  }
  return r;
}

EvaluationContext EvaluationContext::build(ModelPtr eva, ModelPtr generic, const ImageSet& training_set) {
  if (!eva || !generic) throw ValidationError("evaluation needs both the EVA and the generic model");
  EvaluationContext ctx;
  ctx.training_set = training_set.name;
  ctx.eva_training = group_by_class(extract_features(*eva, training_set.images), training_set.labels);
  ctx.generic_training = group_by_class(extract_features(*generic, training_set.images), training_set.labels);
  ctx.eva = std::move(eva);
  ctx.generic = std::move(generic);
  return ctx;
}

EvaluationReport build_report(const SampleBatch& batch, const EvaluationContext& ctx,
                              std::int64_t shared_class_count, const std::vector<std::int64_t>& canonical_labels,
                              const Ensemble* ensemble) {
  guard_independence(*ctx.generic, ensemble);
  EvaluationReport r;
  r.accuracy = attack_accuracy(*ctx.eva, batch, shared_class_count, canonical_labels, ensemble);
  r.sample_count = batch.size();
  r.eva_hash = ctx.eva->weights_hash();
  r.generic_hash = ctx.generic->weights_hash();
  r.generic_training_set = ctx.generic->metadata().value("train_set", std::string("unknown"));

  const auto fe = extract_features(*ctx.eva, batch.images);
  const auto fg = extract_features(*ctx.generic, batch.images);
  std::int64_t classes = 0;
  for (std::int64_t c = 0; c < shared_class_count; ++c) {
    const auto idx = batch.labels.eq(c).nonzero().squeeze(1);
    if (idx.size(0) == 0) continue;
    const auto label = evaluator_label(canonical_labels, c);
    const auto e = fe.index_select(0, idx);
    const auto g = fg.index_select(0, idx);
    r.feature_distance_eva += feature_distance(e, label, ctx.eva_training);
    r.knn_distance_eva += knn_distance(e, label, ctx.eva_training);
    r.feature_distance_generic += feature_distance(g, label, ctx.generic_training);
    r.knn_distance_generic += knn_distance(g, label, ctx.generic_training);
    ++classes;
  }
  if (classes == 0) throw ValidationError("build_report: batch holds no shared class");
  for (double* v : {&r.feature_distance_eva, &r.knn_distance_eva, &r.feature_distance_generic,
                    &r.knn_distance_generic}) {
    *v /= static_cast<double>(classes);
  }
  return r;
}

}  // namespace einv
