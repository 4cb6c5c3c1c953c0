#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "einv/artifact.hpp"

namespace einv {

// Supported classifier architectures. Every one ends in a linear output layer
// named "head"; all but "logreg" expose the input of that layer as the
// penultimate feature tap.
//   lenet5         2 conv + 3 fc, the MUA architecture
//   resnet18-eval  residual CNN without normalization layers, the evaluation classifier
//   generic-cnn    plain 2-conv CNN, the generic (non-digit) feature extractor
//   logreg         single linear layer, for fast tests
class ClassifierNet : public torch::nn::Module {
 public:
  ClassifierNet(std::string arch_id, std::int64_t num_classes)
      : arch_id_(std::move(arch_id)), num_classes_(num_classes) {}

  torch::Tensor forward(const torch::Tensor& x) { return head_->forward(dropout(features(x))); }
  // Penultimate activations for archs with a tap; raw flattened input otherwise.
  virtual torch::Tensor features(const torch::Tensor& x) = 0;
  virtual bool has_feature_tap() const { return true; }
  std::int64_t feature_dim() const { return head_->options.in_features(); }

  const std::string& arch_id() const { return arch_id_; }
  std::int64_t num_classes() const { return num_classes_; }
  torch::nn::Linear& head() { return head_; }

  // Dropout draws its masks from this generator (training mode only), keeping
  // training reproducible without touching global RNG state.
  void set_dropout_generator(at::Generator gen) { dropout_gen_ = std::move(gen); }

 protected:
  torch::Tensor dropout(const torch::Tensor& x);

  torch::nn::Linear head_{nullptr};
  double dropout_p_ = 0.0;
  std::optional<at::Generator> dropout_gen_;

 private:
  std::string arch_id_;
  std::int64_t num_classes_;
};

const std::vector<std::string>& supported_archs();
// Builds an architecture with parameters drawn from `gen`: weights and biases of
// conv/linear layers U(-1/sqrt(fan_in), 1/sqrt(fan_in)), embeddings N(0,1),
// normalization layers at (1, 0).
std::shared_ptr<ClassifierNet> make_classifier(const std::string& arch_id, std::int64_t num_classes,
                                               at::Generator& gen);
void init_parameters(torch::nn::Module& module, at::Generator& gen);
// Independent deep copy (same arch, same weights, parameters trainable).
std::shared_ptr<ClassifierNet> clone_classifier(const ClassifierNet& net);

struct Provenance {
  std::string partition_id;
  std::int64_t epoch = 0;
  std::uint64_t seed = 0;
};

// An immutable trained classifier. Parameters never require grad, the module
// stays in eval mode, and nothing mutates it after construction, so a
// FrozenModel may be shared across threads.
class FrozenModel {
 public:
  FrozenModel(std::string model_id, std::shared_ptr<ClassifierNet> net, Provenance provenance,
              json metadata = json::object());

  const std::string& id() const { return id_; }
  const std::string& arch_id() const { return net_->arch_id(); }
  std::int64_t num_classes() const { return net_->num_classes(); }
  const Provenance& provenance() const { return provenance_; }
  const json& metadata() const { return metadata_; }
  // sha256 of the weight blob; fixed at construction.
  const std::string& weights_hash() const { return weights_hash_; }
  bool has_feature_tap() const { return net_->has_feature_tap(); }
  std::int64_t feature_dim() const;

  // Differentiable with respect to `x` (gradients reach a generator upstream).
  torch::Tensor logits(const torch::Tensor& x) const;
  // No-grad, chunked inference for large batches.
  torch::Tensor predict_logits(const torch::Tensor& x, std::int64_t chunk = 2000) const;
  torch::Tensor predict_probabilities(const torch::Tensor& x, std::int64_t chunk = 2000) const;
  torch::Tensor extract_features(const torch::Tensor& x, std::int64_t chunk = 2000) const;
  double accuracy(const torch::Tensor& images, const torch::Tensor& labels) const;

  std::vector<std::byte> weights_blob() const;
  // Recomputes the hash of the live weights (used to prove nothing mutated them).
  std::string current_weights_hash() const;

  // Copy whose output j is this model's output perm[j].
  FrozenModel with_permuted_outputs(const std::vector<std::int64_t>& perm, std::string new_id) const;
  FrozenModel with_metadata(json metadata) const;

 private:
  std::string id_;
  std::shared_ptr<ClassifierNet> net_;
  Provenance provenance_;
  json metadata_;
  std::string weights_hash_;
};

using ModelPtr = std::shared_ptr<const FrozenModel>;

ArtifactEntry save_model(const FrozenModel& model, const std::filesystem::path& path);
FrozenModel load_model(const std::filesystem::path& path,
                       const std::optional<std::string>& expected_sha256 = std::nullopt);

}  // namespace einv
