#include "einv/dataset.hpp"

#include <zlib.h>

#include <cstdlib>
#include <fstream>

#include "einv/artifact.hpp"
#include "einv/error.hpp"
#include "einv/hash.hpp"
#include "einv/rng.hpp"

#ifdef EINV_HAVE_CURL
#include <curl/curl.h>
#endif

namespace einv {

namespace {

std::uint32_t read_be32(const std::vector<std::byte>& data, std::size_t offset, const std::string& where) {
  if (offset + 4 > data.size()) throw CorruptionError("truncated IDX header in " + where);
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<std::uint8_t>(data[offset + i]);
  return v;
}

void put_be32(std::vector<std::byte>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::byte>((v >> shift) & 0xff));
}

std::vector<std::byte> gunzip(const std::vector<std::byte>& data, const std::string& where) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw IoError("zlib init failed for " + where);
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<std::byte*>(data.data()));
  zs.avail_in = static_cast<uInt>(data.size());
  std::vector<std::byte> out;
  std::vector<std::byte> chunk(1 << 18);
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = reinterpret_cast<Bytef*>(chunk.data());
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw CorruptionError("gzip stream corrupt in " + where);
    }
    out.insert(out.end(), chunk.begin(), chunk.end() - zs.avail_out);
  }
  inflateEnd(&zs);
  return out;
}

std::vector<std::byte> read_maybe_gz(const std::filesystem::path& path) {
  auto data = read_file_bytes(path);
  if (data.size() >= 2 && data[0] == std::byte{0x1f} && data[1] == std::byte{0x8b}) {
    return gunzip(data, path.string());
  }
  return data;
}

// Accepts `name`, `name.gz`, and the EMNIST "emnist-letters-*" style names.
std::optional<std::filesystem::path> find_file(const std::filesystem::path& dir, const std::vector<std::string>& names) {
  for (const auto& n : names) {
    for (const auto& candidate : {dir / n, dir / (n + ".gz")}) {
      if (std::filesystem::exists(candidate)) return candidate;
    }
  }
  return std::nullopt;
}

#ifdef EINV_HAVE_CURL
std::size_t curl_sink(char* ptr, std::size_t size, std::size_t nmemb, void* userdata) {
  auto* out = static_cast<std::ofstream*>(userdata);
  out->write(ptr, static_cast<std::streamsize>(size * nmemb));
  return size * nmemb;
}

bool download(const std::string& url, const std::filesystem::path& dest) {
  std::filesystem::create_directories(dest.parent_path());
  auto tmp = dest;
  tmp += ".part";
  bool ok = false;
  {
    std::ofstream out(tmp, std::ios::binary);
    CURL* curl = curl_easy_init();
    if (curl == nullptr) return false;
    curl_easy_setopt(curl, CURLOPT_URL, url.c_str());
    curl_easy_setopt(curl, CURLOPT_WRITEFUNCTION, curl_sink);
    curl_easy_setopt(curl, CURLOPT_WRITEDATA, &out);
    curl_easy_setopt(curl, CURLOPT_FOLLOWLOCATION, 1L);
    curl_easy_setopt(curl, CURLOPT_FAILONERROR, 1L);
    curl_easy_setopt(curl, CURLOPT_CONNECTTIMEOUT, 15L);
    ok = curl_easy_perform(curl) == CURLE_OK;
    curl_easy_cleanup(curl);
  }
  if (ok) {
    std::filesystem::rename(tmp, dest);
  } else {
    std::filesystem::remove(tmp);
  }
  return ok;
}
#endif

void try_download_mnist(const std::filesystem::path& dir, const std::string& file) {
#ifdef EINV_HAVE_CURL
  static const char* kMirrors[] = {"https://ossci-datasets.s3.amazonaws.com/mnist/",
                                   "https://storage.googleapis.com/cvdf-datasets/mnist/"};
  for (const char* base : kMirrors) {
    if (download(std::string(base) + file + ".gz", dir / (file + ".gz"))) return;
  }
#else
  (void)dir;
  (void)file;
#endif
}

ImageSet load_pair(const std::filesystem::path& dir, const std::string& name, const std::vector<std::string>& image_names,
                   const std::vector<std::string>& label_names, std::int64_t label_offset, std::int64_t num_classes,
                   bool transpose) {
  const auto img = find_file(dir, image_names);
  const auto lbl = find_file(dir, label_names);
  if (!img || !lbl) {
    throw IoError("dataset '" + name + "' not found under " + dir.string() +
                  " (run tools/prepare_data.py or set EIL_DATA_DIR)");
  }
  auto u8 = read_idx_images(*img);
  if (transpose) u8 = u8.transpose(1, 2).contiguous();
  ImageSet set;
  set.name = name;
  set.images = normalize_pixels(u8.unsqueeze(1));
  set.labels = read_idx_labels(*lbl) - label_offset;
  set.num_classes = num_classes;
  if (set.labels.size(0) != set.images.size(0)) throw CorruptionError("image/label count mismatch for " + name);
  return set;
}

}  // namespace

std::string ImageSet::hash() const {
  Sha256 h;
  h.update(name);
  const auto img = images.contiguous();
  const auto lab = labels.contiguous();
  h.update(std::span(static_cast<const std::byte*>(img.data_ptr()), img.numel() * img.element_size()));
  h.update(std::span(static_cast<const std::byte*>(lab.data_ptr()), lab.numel() * lab.element_size()));
  return h.hex_digest();
}

torch::Tensor normalize_pixels(const torch::Tensor& u8) { return u8.to(torch::kFloat32).div(127.5).sub(1.0); }

torch::Tensor denormalize_pixels(const torch::Tensor& x) {
  return x.detach().add(1.0).mul(127.5).round().clamp(0, 255).to(torch::kUInt8);
}

torch::Tensor read_idx_images(const std::filesystem::path& path) {
  const auto data = read_maybe_gz(path);
  const auto where = path.string();
  if (read_be32(data, 0, where) != 0x00000803) throw CorruptionError("bad IDX image magic in " + where);
  const auto n = read_be32(data, 4, where);
  const auto h = read_be32(data, 8, where);
  const auto w = read_be32(data, 12, where);
  const std::size_t expected = 16 + static_cast<std::size_t>(n) * h * w;
  if (data.size() < expected) throw CorruptionError("truncated IDX image file " + where);
  auto t = torch::empty({n, h, w}, torch::kUInt8);
  std::memcpy(t.data_ptr(), data.data() + 16, expected - 16);
  return t;
}

torch::Tensor read_idx_labels(const std::filesystem::path& path) {
  const auto data = read_maybe_gz(path);
  const auto where = path.string();
  if (read_be32(data, 0, where) != 0x00000801) throw CorruptionError("bad IDX label magic in " + where);
  const auto n = read_be32(data, 4, where);
  if (data.size() < 8 + static_cast<std::size_t>(n)) throw CorruptionError("truncated IDX label file " + where);
  auto t = torch::empty({n}, torch::kUInt8);
  std::memcpy(t.data_ptr(), data.data() + 8, n);
  return t.to(torch::kInt64);
}

void write_idx_images(const std::filesystem::path& path, const torch::Tensor& u8_images) {
  const auto t = u8_images.to(torch::kUInt8).contiguous();
  if (t.dim() != 3) throw ValidationError("write_idx_images expects [N,H,W]");
  std::vector<std::byte> out;
  put_be32(out, 0x00000803);
  for (int d = 0; d < 3; ++d) put_be32(out, static_cast<std::uint32_t>(t.size(d)));
  const auto* p = static_cast<const std::byte*>(t.data_ptr());
  out.insert(out.end(), p, p + t.numel());
  write_file_bytes(path, out);
}

void write_idx_labels(const std::filesystem::path& path, const torch::Tensor& labels) {
  const auto t = labels.to(torch::kUInt8).contiguous();
  std::vector<std::byte> out;
  put_be32(out, 0x00000801);
  put_be32(out, static_cast<std::uint32_t>(t.size(0)));
  const auto* p = static_cast<const std::byte*>(t.data_ptr());
  out.insert(out.end(), p, p + t.numel());
  write_file_bytes(path, out);
}

std::filesystem::path resolve_data_dir(const std::optional<std::string>& explicit_dir) {
  if (explicit_dir && !explicit_dir->empty()) return *explicit_dir;
  if (const char* env = std::getenv("EIL_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return "data";
}

ImageSet load_dataset(const std::string& name, Split split, const std::filesystem::path& data_dir) {
  const bool train = split == Split::train;
  const std::string suffix = train ? "-train" : "-test";
  if (name == "mnist") {
    const auto dir = data_dir / "mnist";
    const std::string img = train ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte";
    const std::string lbl = train ? "train-labels-idx1-ubyte" : "t10k-labels-idx1-ubyte";
    if (!find_file(dir, {img})) try_download_mnist(dir, img);
    if (!find_file(dir, {lbl})) try_download_mnist(dir, lbl);
    return load_pair(dir, name + suffix, {img, train ? "train-images.idx3-ubyte" : "t10k-images.idx3-ubyte"},
                     {lbl, train ? "train-labels.idx1-ubyte" : "t10k-labels.idx1-ubyte"}, 0, 10, false);
  }
  if (name == "emnist-letters") {
    // The official EMNIST release stores images transposed.
    const std::string s = train ? "train" : "test";
    return load_pair(data_dir / "emnist", name + suffix, {"emnist-letters-" + s + "-images-idx3-ubyte"},
                     {"emnist-letters-" + s + "-labels-idx1-ubyte"}, 1, 26, true);
  }
  if (name == "letters-synth" || name == "natural-patches") {
    const std::string s = train ? "train" : "t10k";
    const bool letters = name == "letters-synth";
    return load_pair(data_dir / name, name + suffix, {s + "-images-idx3-ubyte"}, {s + "-labels-idx1-ubyte"},
                     letters ? 1 : 0, letters ? 26 : 10, false);
  }
  throw ValidationError("unknown dataset '" + name + "'");
}

ImageSet uniform_noise_images(std::int64_t count, std::uint64_t seed, std::int64_t height, std::int64_t width) {
  auto gen = make_generator(seed);
  ImageSet set;
  set.name = "uniform-noise-" + std::to_string(seed);
  set.images = at::rand({count, 1, height, width}, gen, torch::kFloat32).mul(2.0).sub(1.0);
  set.labels = torch::zeros({count}, torch::kInt64);
  set.num_classes = 1;
  return set;
}

ImageSet concat(const ImageSet& a, const ImageSet& b, const std::string& name) {
  ImageSet out;
  out.name = name;
  out.images = torch::cat({a.images, b.images});
  out.labels = torch::cat({a.labels, b.labels});
  out.num_classes = std::max(a.num_classes, b.num_classes);
  return out;
}

ImageSet select(const ImageSet& set, std::span<const std::int64_t> indices, const std::string& name) {
  const auto idx = torch::tensor(std::vector<std::int64_t>(indices.begin(), indices.end()), torch::kInt64);
  ImageSet out;
  out.name = name;
  out.images = set.images.index_select(0, idx);
  out.labels = set.labels.index_select(0, idx);
  out.num_classes = set.num_classes;
  return out;
}

ImageSet remap_labels(const ImageSet& set, std::span<const std::int64_t> mapping, std::int64_t num_classes,
                      const std::string& name) {
  std::vector<std::int64_t> keep;
  std::vector<std::int64_t> labels;
  const auto acc = set.labels.accessor<std::int64_t, 1>();
  for (std::int64_t i = 0; i < set.size(); ++i) {
    const auto old = acc[i];
    if (old < 0 || old >= static_cast<std::int64_t>(mapping.size())) {
      throw ValidationError("label " + std::to_string(old) + " outside the relabel mapping");
    }
    if (mapping[old] >= 0) {
      keep.push_back(i);
      labels.push_back(mapping[old]);
    }
  }
  auto out = select(set, keep, name);
  out.labels = torch::tensor(labels, torch::kInt64);
  out.num_classes = num_classes;
  return out;
}

ImageSet DatasetView::materialize() const { return select(*base, indices, id); }

std::string DatasetView::hash() const {
  Sha256 h;
  h.update(base->hash());
  h.update(std::as_bytes(std::span(indices)));
  return h.hex_digest();
}

DatasetView full_view(std::shared_ptr<const ImageSet> base, std::string id) {
  DatasetView v;
  v.id = std::move(id);
  v.indices.resize(static_cast<std::size_t>(base->size()));
  std::iota(v.indices.begin(), v.indices.end(), 0);
  v.base = std::move(base);
  return v;
}

}  // namespace einv
