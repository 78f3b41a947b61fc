// Copyright 2026 The QFM Authors
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at

//     http://www.apache.org/licenses/LICENSE-2.0

// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

#include "core.hpp"

namespace qfm {

/// Mix a 64-bit value (splitmix64 finalizer). Used to derive independent
/// stream seeds from a master seed.
[[nodiscard]] inline constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for stream `index` of family `stream` under `master`.
[[nodiscard]] inline constexpr std::uint64_t
derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0) {
    return mix64(mix64(master ^ mix64(stream + 0x5851f42d4c957f2dULL)) ^ index);
}

/**
 * @brief Random stream used for every stochastic operation.
 *
 * The engine is mt19937_64 (bit-exact across standard libraries). Uniform and
 * normal variates are produced here rather than through <random>
 * distributions, whose outputs are implementation-defined, so a seed
 * reproduces the same numbers on every platform.
 */
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed), seed_(seed) {}

    [[nodiscard]] std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    Real uniform() { return static_cast<Real>(engine_() >> 11) * 0x1.0p-53; }

    Real uniform(Real lo, Real hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; caches the second variate.
    Real normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        Real u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const Real u2 = uniform();
        const Real r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * kPi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * kPi * u2);
    }

    /// Index drawn with probability proportional to `weights`.
    std::size_t categorical(std::span<const Real> weights) {
        Real total = 0.0;
        for (Real w : weights) {
            total += w;
        }
        const Real u = uniform() * total;
        Real acc = 0.0;
        std::size_t last_positive = 0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] > 0.0) {
                last_positive = i;
            }
            acc += weights[i];
            if (u < acc) {
                return i;
            }
        }
        return last_positive;
    }

    /// Uniform integer in [0, n).
    std::size_t below(std::size_t n) {
        return static_cast<std::size_t>(uniform() * static_cast<Real>(n)) % n;
    }

  private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
    Real spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace qfm
