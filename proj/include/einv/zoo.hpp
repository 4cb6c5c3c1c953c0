#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "einv/dataset.hpp"
#include "einv/model.hpp"

namespace einv {

enum class PartitionStrategy { disjoint_split, bootstrap, snapshots };

std::string to_string(PartitionStrategy s);
PartitionStrategy partition_strategy_from_string(const std::string& name);

struct PartitionPlan {
  PartitionStrategy strategy = PartitionStrategy::disjoint_split;
  std::int64_t num_models = 1;
  std::int64_t samples_per_model = 0;  // bootstrap only
  std::uint64_t shuffle_seed = 0;

  void validate(std::int64_t dataset_size) const;
};

// disjoint_split: shuffle, then num_models consecutive blocks of floor(N/num_models).
// bootstrap: each view an independent draw without replacement.
// snapshots: num_models views of the whole shuffled set (one training run serves all).
std::vector<DatasetView> build_partitions(std::shared_ptr<const ImageSet> dataset, const PartitionPlan& plan);

enum class Augment { none, affine };

struct TrainOptions {
  std::int64_t batch_size = 64;
  double learning_rate = 1e-3;
  Augment augment = Augment::none;
  // Held-out split for the accuracy check; when absent the check is skipped.
  std::shared_ptr<const ImageSet> held_out;
  double accuracy_floor = 0.97;
  std::string model_id;  // derived from arch, partition and seed when empty
};

// Random rotation (+-12 deg), scale (+-12%) and translation (+-12%) of images in
// [-1,1] with a -1 background.
torch::Tensor affine_augment(const torch::Tensor& images, at::Generator& gen, double max_rotation_deg = 12.0,
                             double max_scale = 0.12, double max_shift = 0.12);

// Adam on cross-entropy. A held-out accuracy below the floor logs a warning and
// sets metadata "below_accuracy_floor"; it is not an error.
FrozenModel train_classifier(const DatasetView& view, const std::string& arch_id, std::int64_t epochs,
                             std::uint64_t seed, const TrainOptions& options = {});

// One training run, one FrozenModel per listed epoch. train_classifier(e) is
// snapshot_train({e}) exactly.
std::vector<FrozenModel> snapshot_train(const DatasetView& view, const std::string& arch_id,
                                        const std::vector<std::int64_t>& snapshot_epochs, std::uint64_t seed,
                                        const TrainOptions& options = {});

// Runs independent jobs on up to `jobs` threads; results keep job order.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& body);

}  // namespace einv
