#include "einv/zoo.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "einv/error.hpp"
#include "einv/log.hpp"
#include "einv/rng.hpp"

namespace einv {

namespace F = torch::nn::functional;

std::string to_string(PartitionStrategy s) {
  switch (s) {
    case PartitionStrategy::disjoint_split: return "disjoint_split";
    case PartitionStrategy::bootstrap: return "bootstrap";
    case PartitionStrategy::snapshots: return "snapshots";
  }
  return "?";
}

PartitionStrategy partition_strategy_from_string(const std::string& name) {
  if (name == "disjoint_split" || name == "disjoint") return PartitionStrategy::disjoint_split;
  if (name == "bootstrap") return PartitionStrategy::bootstrap;
  if (name == "snapshots") return PartitionStrategy::snapshots;
  throw ValidationError("zoo.strategy: unknown partition strategy '" + name + "'");
}

void PartitionPlan::validate(std::int64_t dataset_size) const {
  if (dataset_size <= 0) throw ValidationError("zoo: dataset is empty");
  if (num_models <= 0) throw ValidationError("zoo.num_models must be positive");
  if (strategy == PartitionStrategy::disjoint_split && num_models > dataset_size) {
    throw ValidationError("zoo.num_models exceeds the dataset size");
  }
  if (strategy == PartitionStrategy::bootstrap) {
    if (samples_per_model <= 0) throw ValidationError("zoo.samples_per_model must be positive for bootstrap");
    if (samples_per_model > dataset_size) {
      throw ValidationError("zoo.samples_per_model (" + std::to_string(samples_per_model) +
                            ") exceeds the dataset size (" + std::to_string(dataset_size) + ")");
    }
  }
}

std::vector<DatasetView> build_partitions(std::shared_ptr<const ImageSet> dataset, const PartitionPlan& plan) {
  const auto n = dataset->size();
  plan.validate(n);
  std::vector<DatasetView> views;
  const auto shuffled = [&](std::uint64_t seed) {
    auto gen = make_generator(seed);
    const auto perm = torch::randperm(n, gen, torch::kInt64);
    return std::vector<std::int64_t>(perm.data_ptr<std::int64_t>(), perm.data_ptr<std::int64_t>() + n);
  };
  switch (plan.strategy) {
    case PartitionStrategy::disjoint_split: {
      const auto order = shuffled(derive_seed(plan.shuffle_seed, "partition"));
      const auto block = n / plan.num_models;
      for (std::int64_t i = 0; i < plan.num_models; ++i) {
        DatasetView v;
        v.id = "part" + std::to_string(i) + "of" + std::to_string(plan.num_models);
        v.base = dataset;
        v.indices.assign(order.begin() + i * block, order.begin() + (i + 1) * block);
        views.push_back(std::move(v));
      }
      break;
    }
    case PartitionStrategy::bootstrap:
      for (std::int64_t i = 0; i < plan.num_models; ++i) {
        auto order = shuffled(derive_seed(derive_seed(plan.shuffle_seed, "bootstrap"), static_cast<std::uint64_t>(i)));
        order.resize(static_cast<std::size_t>(plan.samples_per_model));
        DatasetView v;
        v.id = "boot" + std::to_string(i);
        v.base = dataset;
        v.indices = std::move(order);
        views.push_back(std::move(v));
      }
      break;
    case PartitionStrategy::snapshots: {
      const auto order = shuffled(derive_seed(plan.shuffle_seed, "partition"));
      for (std::int64_t i = 0; i < plan.num_models; ++i) {
        DatasetView v;
        v.id = "full";
        v.base = dataset;
        v.indices = order;
        views.push_back(std::move(v));
      }
      break;
    }
  }
  return views;
}

torch::Tensor affine_augment(const torch::Tensor& images, at::Generator& gen, double max_rotation_deg,
                             double max_scale, double max_shift) {
  const auto n = images.size(0);
  const auto sym = [&](double bound) { return at::rand({n}, gen, torch::kFloat32).mul(2.0).sub(1.0).mul(bound); };
  const auto angle = sym(max_rotation_deg * M_PI / 180.0);
  const auto scale = sym(max_scale).add(1.0);
  const auto tx = sym(max_shift);
  const auto ty = sym(max_shift);
  const auto cos = angle.cos() / scale;
  const auto sin = angle.sin() / scale;
  const auto theta = torch::stack({torch::stack({cos, -sin, tx}, 1), torch::stack({sin, cos, ty}, 1)}, 1);
  const auto grid = F::affine_grid(theta, images.sizes().vec(), false);
  // Sample on a zero background, then shift back so the fill is -1.
  return F::grid_sample(images + 1.0, grid, F::GridSampleFuncOptions().align_corners(false)) - 1.0;
}

std::vector<FrozenModel> snapshot_train(const DatasetView& view, const std::string& arch_id,
                                        const std::vector<std::int64_t>& snapshot_epochs, std::uint64_t seed,
                                        const TrainOptions& options) {
  if (snapshot_epochs.empty()) throw ValidationError("snapshot_epochs is empty");
  for (std::size_t i = 0; i < snapshot_epochs.size(); ++i) {
    if (snapshot_epochs[i] <= 0) throw ValidationError("epochs must be positive (no training performed)");
    if (i > 0 && snapshot_epochs[i] <= snapshot_epochs[i - 1]) {
      throw ValidationError("snapshot_epochs must be strictly increasing");
    }
  }
  if (view.size() == 0) throw ValidationError("training view is empty");
  if (options.batch_size <= 0 || !(options.learning_rate > 0)) throw ValidationError("bad training options");

  const auto data = view.materialize();
  auto init_gen = make_generator(derive_seed(seed, "classifier-init"));
  auto shuffle_gen = make_generator(derive_seed(seed, "classifier-shuffle"));
  auto aug_gen = make_generator(derive_seed(seed, "classifier-augment"));
  auto net = make_classifier(arch_id, data.num_classes, init_gen);
  net->set_dropout_generator(make_generator(derive_seed(seed, "classifier-dropout")));
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(options.learning_rate));

  const auto base_id = options.model_id.empty()
                           ? arch_id + "-" + view.id + "-s" + std::to_string(seed)
                           : options.model_id;
  std::vector<FrozenModel> out;
  const auto n = data.size();
  std::size_t next = 0;
  for (std::int64_t epoch = 1; epoch <= snapshot_epochs.back(); ++epoch) {
    net->train();
    const auto perm = torch::randperm(n, shuffle_gen, torch::kInt64);
    double loss_sum = 0.0;
    std::int64_t correct = 0;
    for (std::int64_t i = 0; i < n; i += options.batch_size) {
      const auto idx = perm.slice(0, i, std::min(i + options.batch_size, n));
      auto xb = data.images.index_select(0, idx);
      const auto yb = data.labels.index_select(0, idx);
      if (options.augment == Augment::affine) xb = affine_augment(xb, aug_gen);
      opt.zero_grad();
      const auto logits = net->forward(xb);
      const auto loss = F::cross_entropy(logits, yb);
      loss.backward();
      opt.step();
      loss_sum += loss.item<double>() * static_cast<double>(idx.size(0));
      correct += logits.argmax(1).eq(yb).sum().item<std::int64_t>();
    }
    if (epoch != snapshot_epochs[next]) continue;

    json meta{{"train_loss", loss_sum / static_cast<double>(n)},
              {"train_accuracy", static_cast<double>(correct) / static_cast<double>(n)},
              {"epochs", epoch},
              {"learning_rate", options.learning_rate},
              {"batch_size", options.batch_size},
              {"augment", options.augment == Augment::affine ? "affine" : "none"},
              {"train_set", data.name},
              {"train_size", n},
              {"partition_hash", view.hash()}};
    const auto id = snapshot_epochs.size() == 1 ? base_id : base_id + "-e" + std::to_string(epoch);
    FrozenModel model(id, clone_classifier(*net), Provenance{view.id, epoch, seed});
    if (options.held_out) {
      const double acc = model.accuracy(options.held_out->images, options.held_out->labels);
      meta["heldout_accuracy"] = acc;
      meta["heldout_set"] = options.held_out->name;
      meta["accuracy_floor"] = options.accuracy_floor;
      meta["below_accuracy_floor"] = acc < options.accuracy_floor;
      if (acc < options.accuracy_floor) {
        log_warn(id, ": held-out accuracy ", acc, " below floor ", options.accuracy_floor);
      }
    }
    out.push_back(model.with_metadata(std::move(meta)));
    log_info("trained ", id, " (epoch ", epoch, ")");
    ++next;
  }
  return out;
}

FrozenModel train_classifier(const DatasetView& view, const std::string& arch_id, std::int64_t epochs,
                             std::uint64_t seed, const TrainOptions& options) {
  if (epochs <= 0) throw ValidationError("epochs must be positive (no training performed)");
  return snapshot_train(view, arch_id, {epochs}, seed, options).front();
}

void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& body) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  {
    std::vector<std::jthread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            body(i);
          } catch (...) {
            const std::lock_guard lock(error_mu);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace einv
