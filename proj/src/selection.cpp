#include "einv/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>

#include "einv/error.hpp"
#include "einv/hash.hpp"
#include "einv/rng.hpp"

namespace einv {

namespace {

std::string tensor_hash(const torch::Tensor& t) {
  const auto c = t.contiguous();
  return sha256_hex(std::span(static_cast<const std::byte*>(c.data_ptr()), c.numel() * c.element_size()));
}

const ModelEmbedding& lookup(std::span<const ModelEmbedding> embeddings, const std::string& id) {
  for (const auto& e : embeddings) {
    if (e.model_id == id) return e;
  }
  throw ValidationError("no embedding for model '" + id + "'");
}

}  // namespace

ProbeSet ProbeSet::uniform_noise(std::int64_t count, std::uint64_t seed) {
  if (count <= 0) throw ValidationError("probe size must be positive");
  auto noise = uniform_noise_images(count, derive_seed(seed, "probe"));
  ProbeSet p{"uniform-noise", noise.images, seed, ""};
  p.hash = tensor_hash(p.inputs);
  return p;
}

ProbeSet ProbeSet::from_images(const ImageSet& images) {
  if (images.size() == 0) throw ValidationError("probe set is empty");
  ProbeSet p{images.name, images.images, 0, ""};
  p.hash = tensor_hash(p.inputs);
  return p;
}

ModelEmbedding embed_model(const FrozenModel& model, const ProbeSet& probe, EmbeddingKind kind) {
  if (probe.inputs.dim() != 4 || probe.inputs.size(1) != 1 || probe.inputs.size(2) != 28 ||
      probe.inputs.size(3) != 28) {
    throw ValidationError("probe inputs must be [N,1,28,28] to match the model input");
  }
  const auto out = kind == EmbeddingKind::probabilities ? model.predict_probabilities(probe.inputs)
                                                        : model.predict_logits(probe.inputs);
  return ModelEmbedding{model.id(), out.reshape({-1}).contiguous(),
                        probe.hash + (kind == EmbeddingKind::logits ? ":logits" : "")};
}

double model_distance(const ModelEmbedding& a, const ModelEmbedding& b) {
  if (a.probe_hash != b.probe_hash) {
    throw ValidationError("embeddings come from different probe sets (" + a.model_id + ", " + b.model_id + ")");
  }
  if (a.vector.numel() != b.vector.numel()) throw ValidationError("embedding lengths differ");
  return (a.vector.to(torch::kFloat64) - b.vector.to(torch::kFloat64)).pow(2).sum().sqrt().item<double>();
}

Matrix pairwise_distances(std::span<const ModelEmbedding> embeddings) {
  Matrix d(embeddings.size(), embeddings.size());
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    for (std::size_t j = i + 1; j < embeddings.size(); ++j) {
      d(i, j) = d(j, i) = model_distance(embeddings[i], embeddings[j]);
    }
  }
  return d;
}

std::vector<std::size_t> farthest_point_order(const Matrix& distances, const std::vector<std::string>& ids,
                                              std::size_t k, std::size_t start) {
  const std::size_t n = ids.size();
  if (n == 0) throw ValidationError("no candidates to select from");
  if (k < 1 || k > n) {
    throw ValidationError("k=" + std::to_string(k) + " must lie in [1, " + std::to_string(n) + "]");
  }
  if (start >= n) throw ValidationError("start index out of range");
  std::vector<std::size_t> order{start};
  std::vector<bool> picked(n, false);
  picked[start] = true;
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (order.size() < k) {
    const auto last = order.back();
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (picked[i]) continue;
      nearest[i] = std::min(nearest[i], distances(i, last));
      if (best == n || nearest[i] > nearest[best] || (nearest[i] == nearest[best] && ids[i] < ids[best])) best = i;
    }
    picked[best] = true;
    order.push_back(best);
  }
  return order;
}

std::vector<std::string> fms_select(std::span<const ModelEmbedding> candidates, std::size_t k,
                                    const FmsOptions& options) {
  if (candidates.empty()) throw ValidationError("no candidates to select from");
  if (k < 1 || k > candidates.size()) {
    throw ValidationError("k=" + std::to_string(k) + " must lie in [1, " + std::to_string(candidates.size()) + "]");
  }
  std::vector<std::string> ids;
  std::set<std::string> unique;
  for (const auto& c : candidates) {
    if (c.probe_hash != candidates.front().probe_hash) throw ValidationError("candidates use different probes");
    if (!unique.insert(c.model_id).second) throw ValidationError("duplicate candidate id " + c.model_id);
    ids.push_back(c.model_id);
  }

  std::size_t start = 0;
  if (options.start) {
    const auto it = std::find(ids.begin(), ids.end(), *options.start);
    if (it == ids.end()) throw ValidationError("start model '" + *options.start + "' is not a candidate");
    start = static_cast<std::size_t>(it - ids.begin());
  } else if (options.start_rule == StartRule::farthest_from_centroid) {
    auto centroid = torch::zeros_like(candidates.front().vector, torch::kFloat64);
    for (const auto& c : candidates) centroid += c.vector.to(torch::kFloat64);
    centroid /= static_cast<double>(candidates.size());
    double best = -1.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const double d = (candidates[i].vector.to(torch::kFloat64) - centroid).pow(2).sum().sqrt().item<double>();
      if (d > best || (d == best && ids[i] < ids[start])) {
        best = d;
        start = i;
      }
    }
  }
  const auto order = farthest_point_order(pairwise_distances(candidates), ids, k, start);
  std::vector<std::string> out;
  for (const auto i : order) out.push_back(ids[i]);
  return out;
}

std::vector<std::string> random_select(std::span<const std::string> candidate_ids, std::size_t k,
                                       std::uint64_t seed) {
  if (candidate_ids.empty()) throw ValidationError("no candidates to select from");
  if (k < 1 || k > candidate_ids.size()) {
    throw ValidationError("k=" + std::to_string(k) + " must lie in [1, " + std::to_string(candidate_ids.size()) + "]");
  }
  std::vector<std::string> pool(candidate_ids.begin(), candidate_ids.end());
  std::mt19937_64 engine(derive_seed(seed, "random-select"));
  for (std::size_t i = 0; i < k; ++i) {
    // Unbiased draw from [0, pool.size() - i) by rejection.
    const std::uint64_t range = pool.size() - i;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % range;
    std::uint64_t r;
    do {
      r = engine();
    } while (r >= limit);
    std::swap(pool[i], pool[i + r % range]);
  }
  pool.resize(k);
  return pool;
}

double min_pairwise_distance(std::span<const ModelEmbedding> embeddings, std::span<const std::string> ids) {
  if (ids.size() < 2) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = i + 1; j < ids.size(); ++j) {
      best = std::min(best, model_distance(lookup(embeddings, ids[i]), lookup(embeddings, ids[j])));
    }
  }
  return best;
}

}  // namespace einv
