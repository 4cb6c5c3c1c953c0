#pragma once

#include <torch/torch.h>

#include <cstring>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace einv {

// Little-endian byte buffer used by every binary artifact.
class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void i64(std::int64_t v) { put(v); }
  void f64(double v) { put(v); }
  void str(std::string_view s);
  void bytes(std::span<const std::byte> data);

  const std::vector<std::byte>& buffer() const& { return buf_; }
  std::vector<std::byte> take() && { return std::move(buf_); }

 private:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::byte*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  std::vector<std::byte> buf_;
};

// Bounds-checked reader; overruns raise CorruptionError naming `where`.
class ByteReader {
 public:
  ByteReader(std::span<const std::byte> data, std::string where) : data_(data), where_(std::move(where)) {}

  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  std::int64_t i64() { return get<std::int64_t>(); }
  double f64() { return get<double>(); }
  std::string str();
  std::span<const std::byte> bytes(std::size_t n);

  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  template <typename T>
  T get() {
    T v{};
    auto src = bytes(sizeof(T));
    std::memcpy(&v, src.data(), sizeof(T));
    return v;
  }
  std::span<const std::byte> data_;
  std::size_t pos_ = 0;
  std::string where_;
};

void write_tensor(ByteWriter& out, const torch::Tensor& t);
torch::Tensor read_tensor(ByteReader& in);

// Flat weight blob: every parameter and buffer in registration order, by name.
// Encoding is byte-stable, so equal weights give equal blobs and equal hashes.
std::vector<std::byte> serialize_module(const torch::nn::Module& module);
void load_module(torch::nn::Module& module, std::span<const std::byte> blob, const std::string& where);

}  // namespace einv
