#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace rgtrec {

using Rng = std::mt19937_64;

// All randomness descends from one root seed. Each consumer asks for a named
// substream so that turning a component on or off never shifts the draws of
// another.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t root, std::string_view stream, std::uint64_t index = 0) {
    return Rng(derive_seed(root, stream, index));
}

}  // namespace rgtrec
