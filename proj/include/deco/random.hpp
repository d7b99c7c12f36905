#pragma once

#include <cstddef>
#include <random>
#include <utility>
#include <vector>

// Portable draws: the std distributions differ between standard libraries.
namespace deco {

double uniform01(std::mt19937_64& rng);
double uniform(std::mt19937_64& rng, double lo, double hi);
double normal(std::mt19937_64& rng);

inline std::size_t draw_index(std::mt19937_64& rng, std::size_t n) { return std::size_t(rng() % n); }

// Fisher-Yates.
template <typename T>
void shuffle_in_place(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[draw_index(rng, i)]);
}

}  // namespace deco
