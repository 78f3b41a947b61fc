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

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "core.hpp"

namespace qfm {

/**
 * @brief Tensor product of single-qubit Paulis with a real weight.
 *
 * Character k of `ops` acts on qubit k, so "ZXI" is Z on qubit 0 and X on
 * qubit 1 of a 3-qubit register.
 */
struct PauliString {
    std::string ops;
    Real coefficient = 1.0;

    PauliString() = default;
    PauliString(std::string word, Real coeff = 1.0) : ops(std::move(word)), coefficient(coeff) {
        for (char c : ops) {
            QFM_REQUIRE(c == 'I' || c == 'X' || c == 'Y' || c == 'Z',
                        "PauliString: invalid label '" + std::string(1, c) + "'");
        }
    }

    /// Single Pauli `p` on qubit `q` of an `n`-qubit register.
    static PauliString single(std::size_t n, std::size_t q, char p, Real coeff = 1.0) {
        QFM_REQUIRE(q < n, "PauliString::single: qubit out of range");
        std::string w(n, 'I');
        w[q] = p;
        return {w, coeff};
    }

    /// Same Pauli `p` on qubits `q1` and `q2`.
    static PauliString pair(std::size_t n, std::size_t q1, std::size_t q2, char p,
                            Real coeff = 1.0) {
        QFM_REQUIRE(q1 < n && q2 < n && q1 != q2, "PauliString::pair: bad qubits");
        std::string w(n, 'I');
        w[q1] = p;
        w[q2] = p;
        return {w, coeff};
    }

    [[nodiscard]] std::size_t size() const { return ops.size(); }

    bool operator==(const PauliString &) const = default;
};

/// Bit masks describing a Pauli word: P = i^{n_y} X^{flip} Z^{phase}.
struct PauliMasks {
    std::uint64_t flip = 0;  ///< qubits carrying X or Y
    std::uint64_t phase = 0; ///< qubits carrying Z or Y
    unsigned n_y = 0;

    static PauliMasks of(std::string_view ops) {
        PauliMasks m;
        for (std::size_t q = 0; q < ops.size(); ++q) {
            const std::uint64_t bit = std::uint64_t{1} << q;
            switch (ops[q]) {
            case 'X':
                m.flip |= bit;
                break;
            case 'Y':
                m.flip |= bit;
                m.phase |= bit;
                ++m.n_y;
                break;
            case 'Z':
                m.phase |= bit;
                break;
            default:
                break;
            }
        }
        return m;
    }

    /// i^{n_y}
    [[nodiscard]] Complex y_factor() const {
        switch (n_y % 4) {
        case 0:
            return {1.0, 0.0};
        case 1:
            return {0.0, 1.0};
        case 2:
            return {-1.0, 0.0};
        default:
            return {0.0, -1.0};
        }
    }
};

/// Weighted sum of Pauli strings over a fixed register size.
using PauliSum = std::vector<PauliString>;

} // namespace qfm
