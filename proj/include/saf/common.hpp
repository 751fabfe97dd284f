/*
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    https://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace saf {

/// Base class for every error raised by the library. Messages are stable
/// and tests match on them.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// SplitMix64 finalizer. Used for all seed derivation so that derived
/// seeds are stable across platforms and independent of execution order.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// FNV-1a over a purpose tag, so derived streams for different purposes
/// never collide for equal numeric inputs.
constexpr std::uint64_t tag_hash(std::string_view tag) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// derive_seed(base, index, tag) = mix64(mix64(base ^ tag_hash(tag)) + index)
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index, std::string_view tag) {
    return mix64(mix64(base ^ tag_hash(tag)) + index);
}

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) from the top 53 bits; does not depend on the
/// standard library's distribution implementation.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [lo, hi] (inclusive), multiply-shift reduction.
inline int uniform_int(Rng& rng, int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo + 1);
    const auto r = static_cast<unsigned __int128>(rng()) * span;
    return lo + static_cast<int>(r >> 64);
}

/// Standard normal via Box-Muller.
double standard_normal(Rng& rng);

}  // namespace saf
