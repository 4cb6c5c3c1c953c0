#include "einv/serialize.hpp"

#include <cstring>

#include "einv/error.hpp"

namespace einv {

namespace {

enum class DType : std::uint32_t { f32 = 1, i64 = 2, f64 = 3, u8 = 4 };

DType dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return DType::f32;
    case torch::kInt64: return DType::i64;
    case torch::kFloat64: return DType::f64;
    case torch::kUInt8: return DType::u8;
    default: throw ValidationError(std::string("unsupported tensor dtype ") + c10::toString(t));
  }
}

torch::ScalarType scalar_type(DType d, const std::string& where) {
  switch (d) {
    case DType::f32: return torch::kFloat32;
    case DType::i64: return torch::kInt64;
    case DType::f64: return torch::kFloat64;
    case DType::u8: return torch::kUInt8;
  }
  throw CorruptionError("unknown tensor dtype code in " + where);
}

}  // namespace

void ByteWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(std::as_bytes(std::span(s.data(), s.size())));
}

void ByteWriter::bytes(std::span<const std::byte> data) { buf_.insert(buf_.end(), data.begin(), data.end()); }

std::string ByteReader::str() {
  const auto n = u32();
  auto b = bytes(n);
  return {reinterpret_cast<const char*>(b.data()), b.size()};
}

std::span<const std::byte> ByteReader::bytes(std::size_t n) {
  if (n > data_.size() - pos_) throw CorruptionError("truncated data in " + where_);
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

void write_tensor(ByteWriter& out, const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kCPU).contiguous();
  out.u32(static_cast<std::uint32_t>(dtype_code(c.scalar_type())));
  out.u32(static_cast<std::uint32_t>(c.dim()));
  for (const auto d : c.sizes()) out.i64(d);
  const auto nbytes = static_cast<std::size_t>(c.numel()) * c.element_size();
  out.u64(nbytes);
  out.bytes(std::span(static_cast<const std::byte*>(c.data_ptr()), nbytes));
}

torch::Tensor read_tensor(ByteReader& in) {
  const auto type = scalar_type(static_cast<DType>(in.u32()), "tensor record");
  const auto ndim = in.u32();
  std::vector<std::int64_t> shape(ndim);
  for (auto& d : shape) d = in.i64();
  const auto nbytes = in.u64();
  auto raw = in.bytes(nbytes);
  auto t = torch::empty(shape, torch::TensorOptions().dtype(type));
  if (static_cast<std::size_t>(t.numel()) * t.element_size() != nbytes) {
    throw CorruptionError("tensor byte count does not match its shape");
  }
  std::memcpy(t.data_ptr(), raw.data(), nbytes);
  return t;
}

std::vector<std::byte> serialize_module(const torch::nn::Module& module) {
  ByteWriter out;
  const auto params = module.named_parameters(/*recurse=*/true);
  const auto buffers = module.named_buffers(/*recurse=*/true);
  out.u32(static_cast<std::uint32_t>(params.size() + buffers.size()));
  for (const auto& item : params) {
    out.str(item.key());
    write_tensor(out, item.value());
  }
  for (const auto& item : buffers) {
    out.str(item.key());
    write_tensor(out, item.value());
  }
  return std::move(out).take();
}

void load_module(torch::nn::Module& module, std::span<const std::byte> blob, const std::string& where) {
  ByteReader in(blob, where);
  auto params = module.named_parameters(true);
  auto buffers = module.named_buffers(true);
  const auto count = in.u32();
  if (count != params.size() + buffers.size()) {
    throw CorruptionError("weight blob in " + where + " has " + std::to_string(count) + " tensors, module expects " +
                          std::to_string(params.size() + buffers.size()));
  }
  torch::NoGradGuard no_grad;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = in.str();
    auto value = read_tensor(in);
    torch::Tensor* target = params.find(name);
    if (target == nullptr) target = buffers.find(name);
    if (target == nullptr) throw CorruptionError("unexpected tensor '" + name + "' in " + where);
    if (target->sizes() != value.sizes()) throw CorruptionError("shape mismatch for '" + name + "' in " + where);
    target->copy_(value);
  }
  if (!in.done()) throw CorruptionError("trailing bytes in weight blob " + where);
}

}  // namespace einv
