#include "einv/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "einv/hash.hpp"
#include "einv/rng.hpp"
#include "einv/serialize.hpp"

namespace einv {

std::string to_string(ScoreCombiner c) { return c == ScoreCombiner::mean ? "mean" : "min"; }

ScoreCombiner score_combiner_from_string(const std::string& name) {
  if (name == "mean") return ScoreCombiner::mean;
  if (name == "min") return ScoreCombiner::min;
  throw ValidationError("synthesis.combiner: unknown combiner '" + name + "' (mean | min)");
}

std::string SampleBatch::hash() const {
  Sha256 h;
  for (const auto& t : {images.contiguous(), labels.contiguous()}) {
    h.update(std::span(static_cast<const std::byte*>(t.data_ptr()), t.numel() * t.element_size()));
  }
  return h.hex_digest();
}

SampleBatch generate(ConditionalGenerator& generator, const std::vector<std::int64_t>& classes,
                     std::int64_t per_class, std::uint64_t seed) {
  if (per_class < 0) throw ValidationError("per_class must be >= 0");
  for (const auto c : classes) {
    if (c < 0 || c >= generator.num_classes()) {
      throw ValidationError("class " + std::to_string(c) + " is not a shared class of this generator");
    }
  }
  SampleBatch out;
  out.generator_hash = generator_hash(generator);
  std::vector<std::int64_t> labels;
  for (const auto c : classes) labels.insert(labels.end(), static_cast<std::size_t>(per_class), c);
  out.labels = torch::tensor(labels, torch::kInt64).reshape({-1});
  const auto n = out.labels.size(0);
  if (n == 0) {
    out.images = torch::empty({0, 1, 28, 28});
    return out;
  }
  auto gen = make_generator(derive_seed(seed, "generate"));
  const auto z = at::randn({n, generator.latent_dim()}, gen);
  generator.eval();
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> parts;
  for (std::int64_t i = 0; i < n; i += 2000) {
    const auto j = std::min(i + 2000, n);
    parts.push_back(generator.forward(out.labels.slice(0, i, j), z.slice(0, i, j)));
  }
  out.images = torch::cat(parts);
  return out;
}

SampleBatch score_samples(const SampleBatch& batch, const Ensemble& ensemble, ScoreCombiner combiner) {
  if (batch.size() == 0) throw ValidationError("score_samples: empty batch");
  if (batch.images.dim() != 4 || batch.images.size(1) != 1 || batch.images.size(2) != 28 ||
      batch.images.size(3) != 28) {
    throw ValidationError("score_samples: images must be [N,1,28,28]");
  }
  if (ensemble.members.empty()) throw ValidationError("score_samples: ensemble is empty");
  std::vector<torch::Tensor> cols;
  for (const auto& m : ensemble.members) cols.push_back(std::get<0>(m->predict_logits(batch.images).max(1)));
  SampleBatch out = batch;
  out.scores = torch::stack(cols, 1);
  out.aggregate = combiner == ScoreCombiner::mean ? out.scores->mean(1) : std::get<0>(out.scores->min(1));
  out.combiner = combiner;
  return out;
}

SampleBatch filter_top(const SampleBatch& batch, double keep_fraction) {
  if (!batch.scored()) throw ValidationError("filter_top: batch has not been scored");
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ValidationError("keep_fraction must lie in (0,1]");
  const auto labels = batch.labels.contiguous();
  const auto agg = batch.aggregate->contiguous().to(torch::kFloat32);
  const auto* lab = labels.data_ptr<std::int64_t>();
  const auto* score = agg.data_ptr<float>();
  std::vector<std::int64_t> classes(lab, lab + batch.size());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

  std::vector<std::int64_t> keep;
  for (const auto c : classes) {
    std::vector<std::int64_t> idx;
    for (std::int64_t i = 0; i < batch.size(); ++i) {
      if (lab[i] == c) idx.push_back(i);
    }
    std::stable_sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) { return score[a] > score[b]; });
    // Guard against 0.1 * 1000 landing a hair above 100 in floating point.
    const auto n = static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(idx.size()) - 1e-9));
    keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<long>(n));
  }
  const auto sel = torch::tensor(keep, torch::kInt64).reshape({-1});
  SampleBatch out;
  out.images = batch.images.index_select(0, sel);
  out.labels = batch.labels.index_select(0, sel);
  out.scores = batch.scores->index_select(0, sel);
  out.aggregate = batch.aggregate->index_select(0, sel);
  out.combiner = batch.combiner;
  out.generator_hash = batch.generator_hash;
  return out;
}

ArtifactEntry save_sample_batch(const SampleBatch& batch, const std::filesystem::path& path) {
  ArtifactFile file;
  file.kind = ArtifactKind::sample_batch;
  file.header = {{"count", batch.size()},
                 {"scored", batch.scored()},
                 {"combiner", to_string(batch.combiner)},
                 {"generator_sha256", batch.generator_hash}};
  ByteWriter w;
  write_tensor(w, batch.images.contiguous());
  write_tensor(w, batch.labels.contiguous());
  if (batch.scored()) {
    write_tensor(w, batch.scores->contiguous());
    write_tensor(w, batch.aggregate->contiguous());
  }
  file.payload = std::move(w).take();
  return write_artifact(path, file);
}

SampleBatch load_sample_batch(const std::filesystem::path& path, const std::optional<std::string>& expected_sha256) {
  const auto file = read_artifact(path, expected_sha256);
  if (file.kind != ArtifactKind::sample_batch) throw CorruptionError(path.string() + " is not a sample batch");
  ByteReader r(file.payload, path.string());
  SampleBatch b;
  b.images = read_tensor(r);
  b.labels = read_tensor(r);
  if (file.header.at("scored").get<bool>()) {
    b.scores = read_tensor(r);
    b.aggregate = read_tensor(r);
  }
  if (!r.done()) throw CorruptionError("trailing bytes in " + path.string());
  b.combiner = score_combiner_from_string(file.header.at("combiner").get<std::string>());
  b.generator_hash = file.header.at("generator_sha256").get<std::string>();
  if (b.images.size(0) != file.header.at("count").get<std::int64_t>() || b.labels.size(0) != b.images.size(0)) {
    throw CorruptionError("sample count mismatch in " + path.string());
  }
  return b;
}

}  // namespace einv
