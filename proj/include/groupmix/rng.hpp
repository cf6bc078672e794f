#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>
#include <vector>

namespace groupmix {

using Rng = std::mt19937_64;

// Derives an independent stream seed from a master seed, a purpose tag and
// any number of indices (epoch, batch, candidate T, ...). Streams with
// different tags or indices never share state.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                          std::initializer_list<std::uint64_t> indices = {});

inline Rng make_rng(std::uint64_t master, std::string_view tag,
                    std::initializer_list<std::uint64_t> indices = {}) {
  return Rng(derive_seed(master, tag, indices));
}

double sample_uniform01(Rng& rng);
double sample_normal(Rng& rng, double mean, double stddev);
double sample_beta(Rng& rng, double a, double b);
std::size_t sample_index(Rng& rng, std::size_t n);

/// Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

}  // namespace groupmix
