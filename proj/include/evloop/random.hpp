#pragma once

#include <cstdint>
#include <random>

namespace evloop {

/// All sampling draws from this engine through uniform01 so streams are identical
/// across standard library implementations.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace evloop
