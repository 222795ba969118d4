#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include <Eigen/Dense>

namespace icfem {

using Rng = std::mt19937_64;

/// SplitMix64 finaliser.
std::uint64_t mix64(std::uint64_t x);

/// Stable 64-bit hash (FNV-1a) of an individual identifier.
std::uint64_t hash_id(std::string_view id);

/// Seed of a named sub-stream; the same arguments always give the same seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0);

Rng make_rng(std::uint64_t seed);

/// Vector of i.i.d. standard normal draws.
Eigen::VectorXd standard_normal(Rng& rng, Eigen::Index n);

}  // namespace icfem
