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

#include <complex>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace qfm {

using Real = double;
using Complex = std::complex<double>;
using Index = std::size_t;

inline constexpr Real kPi = 3.14159265358979323846;
inline constexpr Real kNormTol = 1e-10;
inline constexpr Real kUnitaryTol = 1e-10;
inline constexpr Real kEigenClamp = 1e-12;
inline constexpr Real kBranchTol = 1e-12;

/// Hard ceiling for dense simulation (statevector and dense operator oracles).
inline constexpr std::size_t kMaxQubits = 14;

/// Base class for all library errors. Message carries the diagnostic.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Raised when a projective measurement selects a branch whose Born
/// probability is numerically zero.
class ImpossibleBranch : public Error {
  public:
    using Error::Error;
};

/// Raised when an optimizer produces a non-finite loss.
class Divergence : public Error {
  public:
    using Error::Error;
};

#define QFM_REQUIRE(cond, msg)                                                 \
    do {                                                                       \
        if (!(cond)) {                                                         \
            throw ::qfm::Error(std::string(msg));                              \
        }                                                                      \
    } while (0)

[[nodiscard]] inline constexpr std::size_t dim_of(std::size_t n_qubits) {
    return std::size_t{1} << n_qubits;
}

} // namespace qfm
