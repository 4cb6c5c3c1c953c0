#pragma once

#include <ATen/core/Generator.h>

#include <cstdint>
#include <random>
#include <string_view>

namespace einv {

// Stable 64-bit seed for an independent random stream derived from a base seed.
std::uint64_t derive_seed(std::uint64_t base, std::string_view stream);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

at::Generator make_generator(std::uint64_t seed);

// Every stochastic operation downstream (weight init, noise, shuffling,
// augmentation) draws from a stream derived from `seed`, never from global state.
struct RngContext {
  std::uint64_t seed = 0;
  bool deterministic = true;

  std::uint64_t derive(std::string_view stream) const { return derive_seed(seed, stream); }
  at::Generator generator(std::string_view stream) const { return make_generator(derive(stream)); }
  std::mt19937_64 engine(std::string_view stream) const { return std::mt19937_64(derive(stream)); }
};

// Seeds libtorch's global generator and, when `deterministic` is set, pins
// intra-op parallelism to one thread and requests deterministic kernels so that
// equal seeds give bitwise-equal results.
RngContext seed_all(std::uint64_t seed, bool deterministic = true);

}  // namespace einv
