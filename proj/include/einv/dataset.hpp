#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace einv {

// Labeled grayscale images, stored as float32 [N,1,H,W] in [-1,1] and int64 labels.
struct ImageSet {
  std::string name;
  torch::Tensor images;
  torch::Tensor labels;
  std::int64_t num_classes = 0;

  std::int64_t size() const { return images.defined() ? images.size(0) : 0; }
  // Content hash over pixels and labels; identifies the set in stage cache keys.
  std::string hash() const;
};

enum class Split { train, test };

// Pixel mapping shared by classifiers and the generator: uint8 [0,255] -> [-1,1].
torch::Tensor normalize_pixels(const torch::Tensor& u8);
torch::Tensor denormalize_pixels(const torch::Tensor& x);  // -> uint8

// IDX (MNIST-format) files, optionally gzip-compressed.
torch::Tensor read_idx_images(const std::filesystem::path& path);  // uint8 [N,H,W]
torch::Tensor read_idx_labels(const std::filesystem::path& path);  // int64 [N]
void write_idx_images(const std::filesystem::path& path, const torch::Tensor& u8_images);
void write_idx_labels(const std::filesystem::path& path, const torch::Tensor& labels);

// Data directory: explicit value, else $EIL_DATA_DIR, else ./data.
std::filesystem::path resolve_data_dir(const std::optional<std::string>& explicit_dir = std::nullopt);

// Known datasets: "mnist", "emnist-letters", "letters-synth", "natural-patches".
// Letter labels are shifted from 1..26 to 0..25. MNIST files missing from the
// data directory are downloaded when the build has libcurl.
ImageSet load_dataset(const std::string& name, Split split, const std::filesystem::path& data_dir);

// Random images uniform in [-1,1], labels all zero.
ImageSet uniform_noise_images(std::int64_t count, std::uint64_t seed, std::int64_t height = 28,
                              std::int64_t width = 28);

ImageSet concat(const ImageSet& a, const ImageSet& b, const std::string& name);
ImageSet select(const ImageSet& set, std::span<const std::int64_t> indices, const std::string& name);
// Relabels through `mapping` (old label -> new label, -1 drops the sample).
ImageSet remap_labels(const ImageSet& set, std::span<const std::int64_t> mapping, std::int64_t num_classes,
                      const std::string& name);

// A subset of a shared dataset, addressed by index.
struct DatasetView {
  std::string id;
  std::shared_ptr<const ImageSet> base;
  std::vector<std::int64_t> indices;

  std::int64_t size() const { return static_cast<std::int64_t>(indices.size()); }
  ImageSet materialize() const;
  std::string hash() const;  // base hash + indices
};

DatasetView full_view(std::shared_ptr<const ImageSet> base, std::string id = "full");

}  // namespace einv
