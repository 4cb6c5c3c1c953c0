#pragma once

#include <torch/torch.h>

#include <atomic>
#include <filesystem>
#include <memory>
#include <string>

#include "einv/dataset.hpp"
#include "einv/model.hpp"
#include "einv/rng.hpp"

namespace einv::test {

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("einv-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

inline ModelPtr random_model(const std::string& arch, std::int64_t classes, std::uint64_t seed,
                             const std::string& id = "") {
  auto gen = make_generator(seed);
  auto net = make_classifier(arch, classes, gen);
  return std::make_shared<const FrozenModel>(id.empty() ? arch + "-" + std::to_string(seed) : id, net, Provenance{});
}

// Two easy classes: dark images are 0, bright images are 1, plus noise.
inline std::shared_ptr<const ImageSet> toy_set(std::int64_t n, std::uint64_t seed, std::int64_t classes = 2) {
  auto gen = make_generator(seed);
  auto s = std::make_shared<ImageSet>();
  s->name = "toy";
  s->num_classes = classes;
  s->labels = torch::randint(classes, {n}, gen, torch::kInt64);
  const auto level = s->labels.to(torch::kFloat32).div(std::max<std::int64_t>(classes - 1, 1)).mul(1.6).sub(0.8);
  s->images = (level.view({n, 1, 1, 1}) + 0.2 * torch::randn({n, 1, 28, 28}, gen)).clamp(-1, 1);
  return s;
}

inline std::filesystem::path data_dir() { return resolve_data_dir(); }

}  // namespace einv::test
