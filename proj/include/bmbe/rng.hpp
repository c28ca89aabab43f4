#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace bmbe {

// Streams are std::mt19937_64; the helpers below avoid <random> distributions
// so that draws are identical across standard library implementations.
using RngStream = std::mt19937_64;

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t splitmix64(std::uint64_t x);

// seed = hash(parent, label, index)
std::uint64_t derive_seed(std::uint64_t parent, std::string_view label, std::uint64_t index = 0);

// Uniform on [0, 1) with 53 bits of resolution.
double uniform01(RngStream& rng);

// Uniform integer on [0, n).
std::uint64_t uniform_index(RngStream& rng, std::uint64_t n);

}  // namespace bmbe
