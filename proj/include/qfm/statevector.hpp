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
#include <bit>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "core.hpp"
#include "pauli.hpp"
#include "rng.hpp"

namespace qfm {

using Mat2 = Eigen::Matrix2cd;
using Mat4 = Eigen::Matrix4cd;
using MatX = Eigen::MatrixXcd;

template <class M> [[nodiscard]] bool is_unitary(const M &u, Real tol = kUnitaryTol) {
    const auto n = u.rows();
    return (u.adjoint() * u - M::Identity(n, n)).cwiseAbs().maxCoeff() <= tol;
}

namespace kernels {

[[nodiscard]] inline constexpr std::size_t insert_zero(std::size_t k, std::size_t bit) {
    const std::size_t low = k & ((std::size_t{1} << bit) - 1);
    return ((k >> bit) << (bit + 1)) | low;
}

inline void apply_1q(std::span<Complex> amp, std::size_t q, const Mat2 &u) {
    const std::size_t stride = std::size_t{1} << q;
    const Complex u00 = u(0, 0), u01 = u(0, 1), u10 = u(1, 0), u11 = u(1, 1);
    for (std::size_t base = 0; base < amp.size(); base += 2 * stride) {
        for (std::size_t i = base; i < base + stride; ++i) {
            const Complex a = amp[i];
            const Complex b = amp[i + stride];
            amp[i] = u00 * a + u01 * b;
            amp[i + stride] = u10 * a + u11 * b;
        }
    }
}

/// The 4x4 matrix is indexed by 2*b(q1) + b(q2).
inline void apply_2q(std::span<Complex> amp, std::size_t q1, std::size_t q2, const Mat4 &u) {
    const std::size_t b1 = std::size_t{1} << q1;
    const std::size_t b2 = std::size_t{1} << q2;
    const std::size_t lo = std::min(q1, q2);
    const std::size_t hi = std::max(q1, q2);
    const std::size_t quarter = amp.size() >> 2;
    for (std::size_t k = 0; k < quarter; ++k) {
        const std::size_t i = insert_zero(insert_zero(k, lo), hi);
        const std::size_t idx[4] = {i, i | b2, i | b1, i | b1 | b2};
        Complex v[4];
        for (int r = 0; r < 4; ++r) {
            v[r] = amp[idx[r]];
        }
        for (int r = 0; r < 4; ++r) {
            amp[idx[r]] = u(r, 0) * v[0] + u(r, 1) * v[1] + u(r, 2) * v[2] + u(r, 3) * v[3];
        }
    }
}

/// exp(-i theta P / 2) for the Pauli word with masks `p`.
inline void apply_pauli_rotation(std::span<Complex> amp, const PauliMasks &p, Real theta) {
    const Real c = std::cos(0.5 * theta);
    const Real s = std::sin(0.5 * theta);
    const Complex mis_f = Complex(0.0, -s) * p.y_factor(); // -i s i^{n_y}
    if (p.flip == 0) {
        const Complex plus = c + mis_f;
        const Complex minus = c - mis_f;
        for (std::size_t y = 0; y < amp.size(); ++y) {
            amp[y] *= (std::popcount(y & p.phase) & 1U) ? minus : plus;
        }
        return;
    }
    const auto hb = static_cast<std::size_t>(std::bit_width(p.flip) - 1);
    const std::size_t half = amp.size() >> 1;
    for (std::size_t k = 0; k < half; ++k) {
        const std::size_t y = insert_zero(k, hb);
        const std::size_t x = y ^ p.flip;
        const Complex a = amp[y];
        const Complex b = amp[x];
        const Real sy = (std::popcount(x & p.phase) & 1U) ? -1.0 : 1.0;
        const Real sx = (std::popcount(y & p.phase) & 1U) ? -1.0 : 1.0;
        amp[y] = c * a + mis_f * (sy * b);
        amp[x] = c * b + mis_f * (sx * a);
    }
}

/// <a|P|b> for the Pauli word with masks `p`.
[[nodiscard]] inline Complex pauli_matrix_element(std::span<const Complex> a, const PauliMasks &p,
                                                  std::span<const Complex> b) {
    Complex acc = 0.0;
    for (std::size_t x = 0; x < b.size(); ++x) {
        const Complex t = std::conj(a[x ^ p.flip]) * b[x];
        acc += (std::popcount(x & p.phase) & 1U) ? -t : t;
    }
    return acc * p.y_factor();
}

/// Matrix `m` (2^k x 2^k) on `qubits`; qubits[0] is the least significant
/// bit of the local index. `m` need not be unitary.
inline void apply_matrix(std::span<Complex> amp, std::span<const std::size_t> qubits, const MatX &m) {
    const std::size_t k = qubits.size();
    const std::size_t ld = std::size_t{1} << k;
    QFM_REQUIRE(static_cast<std::size_t>(m.rows()) == ld && static_cast<std::size_t>(m.cols()) == ld,
                "apply_matrix: matrix size mismatch");
    std::vector<std::size_t> sorted(qubits.begin(), qubits.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> offs(ld, 0);
    for (std::size_t l = 0; l < ld; ++l) {
        for (std::size_t j = 0; j < k; ++j) {
            if ((l >> j) & 1U) {
                offs[l] |= std::size_t{1} << qubits[j];
            }
        }
    }
    std::vector<Complex> in(ld);
    const std::size_t outer = amp.size() >> k;
    for (std::size_t o = 0; o < outer; ++o) {
        std::size_t base = o;
        for (std::size_t q : sorted) {
            base = insert_zero(base, q);
        }
        for (std::size_t l = 0; l < ld; ++l) {
            in[l] = amp[base | offs[l]];
        }
        for (std::size_t r = 0; r < ld; ++r) {
            Complex acc = 0.0;
            for (std::size_t c = 0; c < ld; ++c) {
                acc += m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * in[c];
            }
            amp[base | offs[r]] = acc;
        }
    }
}

} // namespace kernels

/**
 * @brief Dense pure state of `n_qubits` qubits.
 *
 * Ordering is little-endian: qubit q is bit q of the amplitude index, so
 * qubit 0 is the least significant bit. Every public operation keeps the
 * state normalized.
 */
class StateVector {
  public:
    /// |0...0>
    explicit StateVector(std::size_t n_qubits = 1) : n_(n_qubits), amp_(dim_of(n_qubits)) {
        QFM_REQUIRE(n_qubits <= kMaxQubits, "StateVector: too many qubits");
        amp_[0] = 1.0;
    }

    /// Wraps raw amplitudes. Length must be a power of two; with
    /// `normalize` the vector is rescaled, otherwise its norm must be 1.
    static StateVector from_amplitudes(std::vector<Complex> amps, bool normalize = false) {
        QFM_REQUIRE(!amps.empty() && std::has_single_bit(amps.size()),
                    "StateVector: length must be a power of two");
        StateVector s;
        s.n_ = static_cast<std::size_t>(std::countr_zero(amps.size()));
        QFM_REQUIRE(s.n_ <= kMaxQubits, "StateVector: too many qubits");
        s.amp_ = std::move(amps);
        if (normalize) {
            s.normalize();
        } else {
            QFM_REQUIRE(std::abs(s.norm() - 1.0) <= kNormTol, "StateVector: amplitudes not normalized");
        }
        return s;
    }

    [[nodiscard]] std::size_t n_qubits() const { return n_; }
    [[nodiscard]] std::size_t dim() const { return amp_.size(); }
    [[nodiscard]] std::span<const Complex> amplitudes() const { return amp_; }
    [[nodiscard]] std::span<Complex> amplitudes_mut() { return amp_; }
    [[nodiscard]] const std::vector<Complex> &data() const { return amp_; }
    [[nodiscard]] Complex operator[](std::size_t i) const { return amp_[i]; }

    [[nodiscard]] Real norm() const {
        Real s = 0.0;
        for (const auto &a : amp_) {
            s += std::norm(a);
        }
        return std::sqrt(s);
    }

    void normalize() {
        const Real nrm = norm();
        QFM_REQUIRE(nrm > 0.0 && std::isfinite(nrm), "StateVector: cannot normalize zero vector");
        for (auto &a : amp_) {
            a /= nrm;
        }
    }

    // In-place kernels. Each leaves the norm unchanged.

    void apply_1q(std::size_t q, const Mat2 &u) {
        check_qubit(q);
        QFM_REQUIRE(is_unitary(u), "apply_1q: matrix is not unitary");
        apply_1q_unchecked(q, u);
    }

    void apply_1q_unchecked(std::size_t q, const Mat2 &u) {
        kernels::apply_1q(amp_, q, u);
    }

    /// Two-qubit gate. The 4x4 matrix is indexed by 2*b(q1) + b(q2), i.e.
    /// u = A (x) B applies A to q1 and B to q2.
    void apply_2q(std::size_t q1, std::size_t q2, const Mat4 &u) {
        check_qubit(q1);
        check_qubit(q2);
        QFM_REQUIRE(q1 != q2, "apply_2q: qubits must differ");
        QFM_REQUIRE(is_unitary(u), "apply_2q: matrix is not unitary");
        kernels::apply_2q(amp_, q1, q2, u);
    }

    /// exp(-i theta P / 2) for a Pauli word P given by its masks.
    void apply_pauli_rotation(const PauliMasks &p, Real theta) {
        kernels::apply_pauli_rotation(amp_, p, theta);
    }

    void apply_pauli_rotation(const PauliString &p, Real theta) {
        QFM_REQUIRE(p.size() == n_, "apply_pauli_rotation: register size mismatch");
        apply_pauli_rotation(PauliMasks::of(p.ops), theta);
    }

    /// Matrix `m` (2^k x 2^k) on the listed qubits; qubits[0] is the least
    /// significant bit of the local index. Not required to be unitary, so the
    /// result may be unnormalized; used for oracle and gradient algebra.
    void apply_matrix_raw(std::span<const std::size_t> qubits, const MatX &m) {
        kernels::apply_matrix(amp_, qubits, m);
    }

    [[nodiscard]] static constexpr std::size_t insert_zero(std::size_t k, std::size_t bit) {
        return kernels::insert_zero(k, bit);
    }

    void check_qubit(std::size_t q) const { QFM_REQUIRE(q < n_, "qubit index out of range"); }

  private:
    std::size_t n_ = 0;
    std::vector<Complex> amp_;
};

/// Computational basis state |index>.
[[nodiscard]] inline StateVector basis_state(std::size_t n_qubits, std::size_t index) {
    QFM_REQUIRE(n_qubits <= kMaxQubits, "basis_state: too many qubits");
    QFM_REQUIRE(index < dim_of(n_qubits), "basis_state: index out of range");
    std::vector<Complex> a(dim_of(n_qubits));
    a[index] = 1.0;
    return StateVector::from_amplitudes(std::move(a));
}

[[nodiscard]] inline StateVector apply_1q(StateVector s, std::size_t q, const Mat2 &u) {
    s.apply_1q(q, u);
    return s;
}

[[nodiscard]] inline StateVector apply_2q(StateVector s, std::size_t q1, std::size_t q2, const Mat4 &u) {
    s.apply_2q(q1, q2, u);
    return s;
}

/// <a|b>
[[nodiscard]] inline Complex inner_product(std::span<const Complex> a, std::span<const Complex> b) {
    QFM_REQUIRE(a.size() == b.size(), "inner_product: dimension mismatch");
    Complex acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += std::conj(a[i]) * b[i];
    }
    return acc;
}

[[nodiscard]] inline Complex inner_product(const StateVector &a, const StateVector &b) {
    return inner_product(a.amplitudes(), b.amplitudes());
}

[[nodiscard]] inline Real fidelity(const StateVector &a, const StateVector &b) {
    return std::norm(inner_product(a, b));
}

/// Born probability that qubit `q` reads 1.
[[nodiscard]] inline Real prob_one(const StateVector &s, std::size_t q) {
    s.check_qubit(q);
    const std::size_t bit = std::size_t{1} << q;
    Real p = 0.0;
    for (std::size_t i = 0; i < s.dim(); ++i) {
        if (i & bit) {
            p += std::norm(s[i]);
        }
    }
    return p;
}

struct Projection {
    Real prob = 0.0;
    StateVector state;
};

/// Deterministic projection of qubit `q` onto `outcome`, renormalized.
[[nodiscard]] inline Projection project_qubit(const StateVector &s, std::size_t q, int outcome) {
    s.check_qubit(q);
    QFM_REQUIRE(outcome == 0 || outcome == 1, "project_qubit: outcome must be 0 or 1");
    const Real p1 = prob_one(s, q);
    const Real prob = outcome == 1 ? p1 : 1.0 - p1;
    if (prob <= kBranchTol) {
        throw ImpossibleBranch("project_qubit: outcome has zero probability");
    }
    const std::size_t bit = std::size_t{1} << q;
    std::vector<Complex> a(s.dim());
    const Real scale = 1.0 / std::sqrt(prob);
    for (std::size_t i = 0; i < s.dim(); ++i) {
        const bool one = (i & bit) != 0;
        if (one == (outcome == 1)) {
            a[i] = s[i] * scale;
        }
    }
    return {prob, StateVector::from_amplitudes(std::move(a), true)};
}

struct Measurement {
    int outcome = 0;
    StateVector state;
    Real prob = 0.0;
};

/// Born-rule measurement of qubit `q` in the Z basis.
[[nodiscard]] inline Measurement measure_qubit(const StateVector &s, std::size_t q, Rng &rng) {
    const Real p1 = prob_one(s, q);
    const int outcome = rng.uniform() < p1 ? 1 : 0;
    auto proj = project_qubit(s, q, outcome);
    return {outcome, std::move(proj.state), proj.prob};
}

/// Full-register Z measurement; returns the sampled basis index.
[[nodiscard]] inline std::size_t sample_basis_index(const StateVector &s, Rng &rng) {
    std::vector<Real> p(s.dim());
    for (std::size_t i = 0; i < s.dim(); ++i) {
        p[i] = std::norm(s[i]);
    }
    return rng.categorical(p);
}

/// P|psi> for a single weighted Pauli string (coefficient included).
inline void accumulate_pauli(std::span<const Complex> in, const PauliString &p, std::span<Complex> out) {
    const auto m = PauliMasks::of(p.ops);
    const Complex f = m.y_factor() * p.coefficient;
    for (std::size_t x = 0; x < in.size(); ++x) {
        const Real sign = (std::popcount(x & m.phase) & 1U) ? -1.0 : 1.0;
        out[x ^ m.flip] += f * sign * in[x];
    }
}

/// H|psi> (unnormalized) for a weighted Pauli sum.
[[nodiscard]] inline std::vector<Complex> apply_pauli_sum(std::span<const Complex> in, const PauliSum &h) {
    std::vector<Complex> out(in.size());
    for (const auto &p : h) {
        QFM_REQUIRE(dim_of(p.size()) == in.size(), "apply_pauli_sum: register size mismatch");
        accumulate_pauli(in, p, out);
    }
    return out;
}

/// <psi|O|psi> for a Hermitian Pauli sum.
[[nodiscard]] inline Real expectation(const StateVector &s, const PauliSum &obs) {
    for (const auto &p : obs) {
        QFM_REQUIRE(p.size() == s.n_qubits(), "expectation: observable size mismatch");
    }
    const auto hpsi = apply_pauli_sum(s.amplitudes(), obs);
    const Complex v = inner_product(s.amplitudes(), std::span<const Complex>(hpsi));
    Real scale = 1.0;
    for (const auto &p : obs) {
        scale += std::abs(p.coefficient);
    }
    QFM_REQUIRE(std::abs(v.imag()) <= 1e-10 * scale, "expectation: observable is not Hermitian");
    return v.real();
}

/// Haar-random pure state: normalized vector of i.i.d. standard complex Gaussians.
[[nodiscard]] inline StateVector haar_random_state(std::size_t n_qubits, Rng &rng) {
    QFM_REQUIRE(n_qubits >= 1 && n_qubits <= kMaxQubits, "haar_random_state: bad qubit count");
    std::vector<Complex> a(dim_of(n_qubits));
    for (auto &x : a) {
        const Real re = rng.normal();
        const Real im = rng.normal();
        x = {re, im};
    }
    return StateVector::from_amplitudes(std::move(a), true);
}

/// |a> (x) |b> with `low` occupying the least significant qubits.
[[nodiscard]] inline StateVector tensor(const StateVector &high, const StateVector &low) {
    std::vector<Complex> a(high.dim() * low.dim());
    for (std::size_t h = 0; h < high.dim(); ++h) {
        for (std::size_t l = 0; l < low.dim(); ++l) {
            a[h * low.dim() + l] = high[h] * low[l];
        }
    }
    return StateVector::from_amplitudes(std::move(a), true);
}

} // namespace qfm
