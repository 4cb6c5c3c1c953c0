#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "einv/dataset.hpp"
#include "einv/matrix.hpp"
#include "einv/model.hpp"

namespace einv {

// Fixed stimuli shared by every model being compared.
struct ProbeSet {
  std::string name;
  torch::Tensor inputs;  // [N,1,H,W]
  std::uint64_t seed = 0;
  std::string hash;

  std::int64_t size() const { return inputs.size(0); }

  // Uniform noise in [-1,1]; the default probe is 10,000 such images.
  static ProbeSet uniform_noise(std::int64_t count, std::uint64_t seed);
  static ProbeSet from_images(const ImageSet& images);
};

enum class EmbeddingKind { probabilities, logits };

struct ModelEmbedding {
  std::string model_id;
  torch::Tensor vector;  // float32, |probe| * num_classes
  std::string probe_hash;
};

ModelEmbedding embed_model(const FrozenModel& model, const ProbeSet& probe,
                           EmbeddingKind kind = EmbeddingKind::probabilities);

// L2 distance, accumulated in double.
double model_distance(const ModelEmbedding& a, const ModelEmbedding& b);
Matrix pairwise_distances(std::span<const ModelEmbedding> embeddings);

enum class StartRule { farthest_from_centroid, first_index };

struct FmsOptions {
  StartRule start_rule = StartRule::farthest_from_centroid;
  std::optional<std::string> start;  // explicit first pick, overrides the rule
};

// Greedy farthest point sampling over a precomputed distance matrix. Ties go to
// the lexicographically lowest id. Returns candidate indices in pick order.
std::vector<std::size_t> farthest_point_order(const Matrix& distances, const std::vector<std::string>& ids,
                                              std::size_t k, std::size_t start);

std::vector<std::string> fms_select(std::span<const ModelEmbedding> candidates, std::size_t k,
                                    const FmsOptions& options = {});

// Uniform sample without replacement (partial Fisher-Yates on a seeded engine).
std::vector<std::string> random_select(std::span<const std::string> candidate_ids, std::size_t k,
                                       std::uint64_t seed);

double min_pairwise_distance(std::span<const ModelEmbedding> embeddings, std::span<const std::string> ids);

}  // namespace einv
