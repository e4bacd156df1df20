#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace instformer {

/// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x);

/// Folds a sequence of identifiers (global seed, epoch, sample id, branch...) into one seed.
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts);

/// The only random engine used in the library. All randomness flows from explicit seeds.
using Rng = std::mt19937_64;

/// n standard-normal draws.
std::vector<double> normal_vector(Rng& rng, std::size_t n);

}  // namespace instformer
