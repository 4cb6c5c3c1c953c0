#include "einv/rng.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <ATen/Context.h>
#include <ATen/Parallel.h>
#include <torch/utils.h>

namespace einv {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::string_view stream) {
  return splitmix64(splitmix64(base) ^ fnv1a(stream));
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(splitmix64(base) + splitmix64(index ^ 0x5851f42d4c957f2dULL));
}

at::Generator make_generator(std::uint64_t seed) { return at::detail::createCPUGenerator(seed); }

RngContext seed_all(std::uint64_t seed, bool deterministic) {
  torch::manual_seed(seed);
  if (deterministic) {
    at::set_num_threads(1);
    at::globalContext().setDeterministicAlgorithms(true, /*warn_only=*/false);
  }
  return RngContext{seed, deterministic};
}

}  // namespace einv
