#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "einv/artifact.hpp"
#include "einv/dataset.hpp"
#include "einv/ensemble.hpp"
#include "einv/error.hpp"

namespace einv {

enum class AttackMode { data_free, auxiliary };
std::string to_string(AttackMode mode);
AttackMode attack_mode_from_string(const std::string& name);

// How the class embedding meets the latent code.
enum class Conditioning { multiply, concat };

struct OptimizerConfig {
  std::string name = "adam";
  double learning_rate = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
};

struct AttackConfig {
  double alpha1 = 0.0;
  double alpha2 = 0.0;
  double beta1 = 1.0;
  double beta2 = 0.0;
  AttackMode mode = AttackMode::data_free;
  std::int64_t latent_dim = 100;
  std::int64_t batch_size = 64;
  std::int64_t steps = 400;
  OptimizerConfig optimizer;
  std::vector<std::int64_t> target_classes;  // canonical indices; empty = every shared class
  std::uint64_t seed = 0;
  Conditioning conditioning = Conditioning::multiply;
  std::int64_t generator_width = 32;

  void validate() const;
  json to_json() const;
  // Missing keys keep their defaults; unknown keys are a validation error.
  static AttackConfig from_json(const json& j);
};

// DCGAN-style generator for 1x28x28 images in [-1,1]:
// cond(z, emb(c)) -> fc -> 2w x 7 x 7 -> convT -> w x 14 x 14 -> convT -> 1 x 28 x 28 -> tanh.
class ConditionalGenerator : public torch::nn::Module {
 public:
  ConditionalGenerator(std::int64_t latent_dim, std::int64_t num_classes, Conditioning conditioning,
                       std::int64_t width = 32);
  torch::Tensor forward(const torch::Tensor& classes, const torch::Tensor& z);

  std::int64_t latent_dim() const { return latent_dim_; }
  std::int64_t num_classes() const { return num_classes_; }
  Conditioning conditioning() const { return conditioning_; }
  std::int64_t width() const { return width_; }

 private:
  std::int64_t latent_dim_, num_classes_, width_;
  Conditioning conditioning_;
  torch::nn::Embedding embed_{nullptr};
  torch::nn::Linear fc_{nullptr};
  torch::nn::BatchNorm1d bn0_{nullptr};
  torch::nn::ConvTranspose2d up1_{nullptr}, up2_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr};
};

// Source-only discriminator; forward returns one logit per image.
class Discriminator : public torch::nn::Module {
 public:
  explicit Discriminator(std::int64_t width = 32);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d c1_{nullptr}, c2_{nullptr};
  torch::nn::Linear fc_{nullptr};
};

// Loss terms, each summed over ensemble members and averaged over the batch.
// One-hot: cross-entropy against the member's own (detached) argmax.
torch::Tensor one_hot_loss(const std::vector<torch::Tensor>& logits_per_model);
// Maximum response: minus the per-sample maximum pre-softmax activation.
torch::Tensor max_response_loss(const std::vector<torch::Tensor>& activations_per_model);
// Cross-entropy against each member's own index of the canonical target class.
torch::Tensor class_loss(const std::vector<torch::Tensor>& logits_per_model, const torch::Tensor& targets,
                         const std::vector<std::vector<std::int64_t>>& class_maps);
torch::Tensor class_loss(const std::vector<torch::Tensor>& logits_per_model, std::int64_t target_class,
                         const std::vector<std::vector<std::int64_t>>& class_maps);

struct AdversarialLosses {
  torch::Tensor l_adv;  // generator side: -log D(fake)
  torch::Tensor l_d;    // -log D(real) - log(1 - D(fake)); fake detached
};
AdversarialLosses adversarial_losses(Discriminator& d, const torch::Tensor& real, const torch::Tensor& fake,
                                     AttackMode mode);
// Same losses from precomputed logits.
AdversarialLosses adversarial_losses_from_logits(const torch::Tensor& real_logits, const torch::Tensor& fake_logits,
                                                 const torch::Tensor& fake_logits_for_d);

struct LossBreakdown {
  std::int64_t step = 0;
  float l_oh = 0, l_mr = 0, l_class = 0, l_adv = 0, l_g_total = 0, l_d = 0;
};

// (alpha1 l_oh + alpha2 l_mr + beta1 l_class) / m + beta2 l_adv
torch::Tensor combine_generator_loss(const AttackConfig& config, std::size_t m, const torch::Tensor& l_oh,
                                     const torch::Tensor& l_mr, const torch::Tensor& l_class,
                                     const torch::Tensor& l_adv);

class AttackDiverged : public Error {
 public:
  AttackDiverged(std::int64_t step, const LossBreakdown& losses);
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

struct AttackResult {
  std::shared_ptr<ConditionalGenerator> generator;
  std::shared_ptr<Discriminator> discriminator;  // auxiliary mode only
  std::vector<LossBreakdown> trace;
  AttackConfig config;
  std::vector<std::string> member_hashes;  // verified unchanged after training
};

// aux_data must be present exactly when config.mode is auxiliary. Every MUA
// weight hash is checked before and after; a change is an Error.
AttackResult run_attack(const Ensemble& ensemble, const AttackConfig& config, const ImageSet* aux_data = nullptr);

void write_loss_trace(const std::filesystem::path& path, const std::vector<LossBreakdown>& trace);

std::string generator_hash(const ConditionalGenerator& g);
ArtifactEntry save_generator(const ConditionalGenerator& g, const AttackConfig& config,
                             const std::filesystem::path& path, const json& extra = json::object());
struct LoadedGenerator {
  std::shared_ptr<ConditionalGenerator> generator;
  AttackConfig config;
  json header;
};
LoadedGenerator load_generator(const std::filesystem::path& path,
                               const std::optional<std::string>& expected_sha256 = std::nullopt);

}  // namespace einv
