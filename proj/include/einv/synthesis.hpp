#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "einv/attack.hpp"
#include "einv/ensemble.hpp"

namespace einv {

enum class ScoreCombiner { mean, min };
std::string to_string(ScoreCombiner c);
ScoreCombiner score_combiner_from_string(const std::string& name);

struct SampleBatch {
  torch::Tensor images;                // [N,1,28,28] in [-1,1]
  torch::Tensor labels;                // [N] canonical classes
  std::optional<torch::Tensor> scores; // [N,m] per-member max activation, after scoring
  std::optional<torch::Tensor> aggregate;  // [N] combined score
  ScoreCombiner combiner = ScoreCombiner::mean;
  std::string generator_hash;

  std::int64_t size() const { return images.defined() ? images.size(0) : 0; }
  bool scored() const { return scores.has_value(); }
  std::string hash() const;  // images + labels
};

// per_class samples for every listed class, grouped by class in list order.
SampleBatch generate(ConditionalGenerator& generator, const std::vector<std::int64_t>& classes,
                     std::int64_t per_class, std::uint64_t seed);

// Each member's largest pre-softmax activation per sample, combined across members.
SampleBatch score_samples(const SampleBatch& batch, const Ensemble& ensemble,
                          ScoreCombiner combiner = ScoreCombiner::mean);

// Per class, keeps the ceil(keep_fraction * n_class) highest-scoring samples;
// output is grouped by class (ascending) and ordered by score descending, with
// ties in original order.
SampleBatch filter_top(const SampleBatch& batch, double keep_fraction);

ArtifactEntry save_sample_batch(const SampleBatch& batch, const std::filesystem::path& path);
SampleBatch load_sample_batch(const std::filesystem::path& path,
                              const std::optional<std::string>& expected_sha256 = std::nullopt);

}  // namespace einv
