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

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Eigenvalues>

#include "statevector.hpp"

namespace qfm {

/// Dense density matrix. Invariants (checked by `validate`): Hermitian,
/// unit trace and positive semidefinite, each within 1e-10.
class DensityMatrix {
  public:
    DensityMatrix() = default;
    explicit DensityMatrix(MatX m) : m_(std::move(m)) {
        QFM_REQUIRE(m_.rows() == m_.cols(), "DensityMatrix: matrix must be square");
    }

    [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(m_.rows()); }
    [[nodiscard]] const MatX &matrix() const { return m_; }
    [[nodiscard]] Complex operator()(std::size_t r, std::size_t c) const {
        return m_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    }

    /// Ascending eigenvalues.
    [[nodiscard]] Eigen::VectorXd eigenvalues() const {
        Eigen::SelfAdjointEigenSolver<MatX> es(m_, Eigen::EigenvaluesOnly);
        return es.eigenvalues();
    }

    [[nodiscard]] bool validate(Real tol = kNormTol) const {
        if ((m_ - m_.adjoint()).cwiseAbs().maxCoeff() > tol) {
            return false;
        }
        if (std::abs(m_.trace() - Complex(1.0)) > tol) {
            return false;
        }
        return eigenvalues().minCoeff() >= -tol;
    }

  private:
    MatX m_;
};

namespace detail {

inline void check_subset(std::span<const std::size_t> keep, std::size_t n) {
    QFM_REQUIRE(!keep.empty(), "qubit subset must be nonempty");
    std::vector<bool> seen(n, false);
    for (auto q : keep) {
        QFM_REQUIRE(q < n, "qubit subset index out of range");
        QFM_REQUIRE(!seen[q], "qubit subset has duplicates");
        seen[q] = true;
    }
}

/// Tr_{complement}(|a><a|) over an arbitrary (possibly unnormalized) vector.
/// keep[0] is the least significant bit of the reduced index.
[[nodiscard]] inline MatX partial_trace(std::span<const Complex> amps, std::size_t n,
                                        std::span<const std::size_t> keep) {
    const std::size_t k = keep.size();
    const std::size_t dk = dim_of(k);
    std::vector<std::size_t> offs(dk, 0);
    for (std::size_t l = 0; l < dk; ++l) {
        for (std::size_t j = 0; j < k; ++j) {
            if ((l >> j) & 1U) {
                offs[l] |= std::size_t{1} << keep[j];
            }
        }
    }
    std::vector<std::size_t> sorted(keep.begin(), keep.end());
    std::sort(sorted.begin(), sorted.end());
    MatX rho = MatX::Zero(static_cast<Eigen::Index>(dk), static_cast<Eigen::Index>(dk));
    const std::size_t de = dim_of(n - k);
    std::vector<Complex> col(dk);
    for (std::size_t e = 0; e < de; ++e) {
        std::size_t base = e;
        for (auto q : sorted) {
            base = StateVector::insert_zero(base, q);
        }
        for (std::size_t l = 0; l < dk; ++l) {
            col[l] = amps[base | offs[l]];
        }
        for (std::size_t r = 0; r < dk; ++r) {
            for (std::size_t c = 0; c < dk; ++c) {
                rho(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) += col[r] * std::conj(col[c]);
            }
        }
    }
    return rho;
}

} // namespace detail

/// Reduced state on `keep` (partial trace over the complement).
[[nodiscard]] inline DensityMatrix reduced_density(const StateVector &s, std::span<const std::size_t> keep) {
    detail::check_subset(keep, s.n_qubits());
    return DensityMatrix(detail::partial_trace(s.amplitudes(), s.n_qubits(), keep));
}

/// -sum lambda log2 lambda, eigenvalues below 1e-12 contribute nothing.
[[nodiscard]] inline Real entropy_bits(const Eigen::VectorXd &eigenvalues) {
    Real s = 0.0;
    for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) {
        const Real l = eigenvalues(i);
        if (l > kEigenClamp) {
            s -= l * std::log2(l);
        }
    }
    return s;
}

/// Von Neumann entropy (bits) of the reduced state on `cut`.
[[nodiscard]] inline Real entanglement_entropy(const StateVector &s, std::span<const std::size_t> cut) {
    return entropy_bits(reduced_density(s, cut).eigenvalues());
}

[[nodiscard]] inline Real entanglement_entropy(const StateVector &s, std::initializer_list<std::size_t> cut) {
    return entanglement_entropy(s, std::span<const std::size_t>(cut.begin(), cut.size()));
}

} // namespace qfm
