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

#include <array>
#include <cmath>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "circuit.hpp"
#include "statevector.hpp"

namespace qfm {

/// Real-weighted sum of Pauli strings on `n_qubits` qubits.
struct Hamiltonian {
    std::size_t n_qubits = 0;
    PauliSum terms;

    void add(PauliString p) {
        QFM_REQUIRE(p.size() == n_qubits, "Hamiltonian: term size mismatch");
        terms.push_back(std::move(p));
    }

    /// H + c * I
    [[nodiscard]] Hamiltonian shifted(Real c) const {
        Hamiltonian h = *this;
        h.add(PauliString(std::string(n_qubits, 'I'), c));
        return h;
    }

    bool operator==(const Hamiltonian &) const = default;
};

/// Bonds grouped by type label ("a", "b", "c", "2D", ...).
struct BondSet {
    std::size_t n_qubits = 0;
    std::map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> bonds;

    void validate() const {
        for (const auto &[type, list] : bonds) {
            for (const auto &[i, j] : list) {
                QFM_REQUIRE(i != j, "BondSet: bond pairs a qubit with itself");
                QFM_REQUIRE(i < n_qubits && j < n_qubits, "BondSet: bond index out of range");
            }
        }
    }

    [[nodiscard]] const std::vector<std::pair<std::size_t, std::size_t>> &of(const std::string &type) const {
        static const std::vector<std::pair<std::size_t, std::size_t>> empty;
        auto it = bonds.find(type);
        return it == bonds.end() ? empty : it->second;
    }
};

enum class TfimSign {
    main_text,  ///< H = +sum Z Z + g sum X
    supplement, ///< H = -sum Z Z - g sum X
};

/// Open-chain transverse-field Ising model.
[[nodiscard]] inline Hamiltonian tfim(std::size_t n, Real g, TfimSign sign) {
    QFM_REQUIRE(n >= 2, "tfim: need at least two qubits");
    const Real s = sign == TfimSign::main_text ? 1.0 : -1.0;
    Hamiltonian h{n, {}};
    for (std::size_t i = 0; i + 1 < n; ++i) {
        h.add(PauliString::pair(n, i, i + 1, 'Z', s));
    }
    for (std::size_t i = 0; i < n; ++i) {
        h.add(PauliString::single(n, i, 'X', s * g));
    }
    return h;
}

/// h_ij = (J/4) sum_k lambda_k sigma_k^i sigma_k^j appended to `h`.
inline void add_exchange(Hamiltonian &h, std::size_t i, std::size_t j, Real coupling, const std::array<Real, 3> &lambda) {
    const char axes[3] = {'X', 'Y', 'Z'};
    for (int k = 0; k < 3; ++k) {
        if (lambda[k] != 0.0 && coupling != 0.0) {
            h.add(PauliString::pair(h.n_qubits, i, j, axes[k], 0.25 * coupling * lambda[k]));
        }
    }
}

/// Isotropic exchange J on every 1D bond (types a, b, c) plus anisotropic
/// exchange lambda * J_perp on every "2D" bond.
[[nodiscard]] inline Hamiltonian heisenberg(const BondSet &bonds, Real coupling, Real j_perp,
                                            const std::array<Real, 3> &lambda) {
    bonds.validate();
    Hamiltonian h{bonds.n_qubits, {}};
    for (const auto &[type, list] : bonds.bonds) {
        const bool two_d = type == "2D";
        for (const auto &[i, j] : list) {
            if (two_d) {
                add_exchange(h, i, j, j_perp, lambda);
            } else {
                add_exchange(h, i, j, coupling, {1.0, 1.0, 1.0});
            }
        }
    }
    return h;
}

/// Hamiltonian of the 1D bonds of a single type.
[[nodiscard]] inline Hamiltonian bond_type_hamiltonian(const BondSet &bonds, const std::string &type, Real coupling) {
    Hamiltonian h{bonds.n_qubits, {}};
    for (const auto &[i, j] : bonds.of(type)) {
        add_exchange(h, i, j, coupling, {1.0, 1.0, 1.0});
    }
    return h;
}

[[nodiscard]] inline MatX to_dense(const Hamiltonian &h) {
    QFM_REQUIRE(h.n_qubits <= kMaxQubits, "to_dense: register too large");
    const std::size_t d = dim_of(h.n_qubits);
    MatX m = MatX::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (const auto &p : h.terms) {
        const auto mk = PauliMasks::of(p.ops);
        const Complex f = mk.y_factor() * p.coefficient;
        for (std::size_t x = 0; x < d; ++x) {
            const Real sign = (std::popcount(x & mk.phase) & 1U) ? -1.0 : 1.0;
            m(static_cast<Eigen::Index>(x ^ mk.flip), static_cast<Eigen::Index>(x)) += f * sign;
        }
    }
    return m;
}

/// Full eigendecomposition; eigenvalues ascending.
struct Spectrum {
    Eigen::VectorXd energies;
    MatX vectors;

    [[nodiscard]] std::size_t n_qubits() const {
        return static_cast<std::size_t>(std::countr_zero(static_cast<std::size_t>(energies.size())));
    }

    /// V f(E) V^dagger |psi> for a diagonal weight f.
    template <class F> [[nodiscard]] std::vector<Complex> apply_function(std::span<const Complex> psi, F &&f) const {
        const auto n = energies.size();
        QFM_REQUIRE(static_cast<std::size_t>(n) == psi.size(), "Spectrum: dimension mismatch");
        Eigen::Map<const Eigen::VectorXcd> v(psi.data(), n);
        Eigen::VectorXcd c = vectors.adjoint() * v;
        for (Eigen::Index k = 0; k < n; ++k) {
            c(k) *= f(energies(k));
        }
        Eigen::VectorXcd out = vectors * c;
        return {out.data(), out.data() + n};
    }

    /// |<k|psi>|^2 in the eigenbasis.
    [[nodiscard]] std::vector<Real> populations(std::span<const Complex> psi) const {
        Eigen::Map<const Eigen::VectorXcd> v(psi.data(), energies.size());
        Eigen::VectorXcd c = vectors.adjoint() * v;
        std::vector<Real> p(static_cast<std::size_t>(c.size()));
        for (Eigen::Index k = 0; k < c.size(); ++k) {
            p[static_cast<std::size_t>(k)] = std::norm(c(k));
        }
        return p;
    }

    [[nodiscard]] StateVector eigenstate(std::size_t k) const {
        const auto col = vectors.col(static_cast<Eigen::Index>(k));
        std::vector<Complex> a(col.data(), col.data() + col.size());
        return StateVector::from_amplitudes(std::move(a), true);
    }
};

[[nodiscard]] inline Spectrum spectrum(const Hamiltonian &h) {
    Eigen::SelfAdjointEigenSolver<MatX> es(to_dense(h));
    QFM_REQUIRE(es.info() == Eigen::Success, "spectrum: eigensolver failed");
    return {es.eigenvalues(), es.eigenvectors()};
}

/// Makes the first amplitude with modulus above 1e-12 real and positive.
inline void fix_phase(StateVector &s) {
    for (std::size_t i = 0; i < s.dim(); ++i) {
        const Real m = std::abs(s[i]);
        if (m > 1e-12) {
            const Complex ph = std::conj(s[i]) / m;
            for (auto &a : s.amplitudes_mut()) {
                a *= ph;
            }
            return;
        }
    }
}

struct GroundState {
    Real energy = 0.0;
    StateVector state;
};

/// Lowest eigenpair; ties resolve to the eigensolver's first column.
[[nodiscard]] inline GroundState ground_state(const Spectrum &sp) {
    auto s = sp.eigenstate(0);
    fix_phase(s);
    return {sp.energies(0), std::move(s)};
}

[[nodiscard]] inline GroundState ground_state(const Hamiltonian &h) { return ground_state(spectrum(h)); }

/// exp(-iHt)|psi>
[[nodiscard]] inline StateVector evolve_real(const Spectrum &sp, Real t, const StateVector &s) {
    auto out = sp.apply_function(s.amplitudes(), [t](Real e) { return std::exp(Complex(0.0, -e * t)); });
    return StateVector::from_amplitudes(std::move(out), true);
}

[[nodiscard]] inline StateVector evolve_real(const Hamiltonian &h, Real t, const StateVector &s) {
    return evolve_real(spectrum(h), t, s);
}

/// exp(-beta H / 2)|psi>, normalized. Energies are shifted by the ground
/// energy before exponentiation.
[[nodiscard]] inline StateVector evolve_imaginary(const Spectrum &sp, Real beta, const StateVector &s) {
    QFM_REQUIRE(std::abs(s.norm() - 1.0) <= kNormTol, "evolve_imaginary: input not normalized");
    const Real e0 = sp.energies(0);
    auto out = sp.apply_function(s.amplitudes(), [beta, e0](Real e) { return Complex(std::exp(-0.5 * beta * (e - e0))); });
    return StateVector::from_amplitudes(std::move(out), true);
}

[[nodiscard]] inline StateVector evolve_imaginary(const Hamiltonian &h, Real beta, const StateVector &s) {
    return evolve_imaginary(spectrum(h), beta, s);
}

/// F = -(1/beta) ln Tr exp(-beta H)
[[nodiscard]] inline Real free_energy(const Spectrum &sp, Real beta) {
    QFM_REQUIRE(beta > 0.0, "free_energy: beta must be positive");
    const Real e0 = sp.energies(0);
    Real z = 0.0;
    for (Eigen::Index k = 0; k < sp.energies.size(); ++k) {
        z += std::exp(-beta * (sp.energies(k) - e0));
    }
    return e0 - std::log(z) / beta;
}

[[nodiscard]] inline Real free_energy(const Hamiltonian &h, Real beta) { return free_energy(spectrum(h), beta); }

/// Tr(O exp(-beta H)) / Tr(exp(-beta H))
[[nodiscard]] inline Real thermal_expectation(const Spectrum &sp, Real beta, const PauliSum &obs) {
    const Real e0 = sp.energies(0);
    Real z = 0.0;
    Real acc = 0.0;
    for (Eigen::Index k = 0; k < sp.energies.size(); ++k) {
        const Real w = std::exp(-beta * (sp.energies(k) - e0));
        z += w;
        acc += w * expectation(sp.eigenstate(static_cast<std::size_t>(k)), obs);
    }
    return acc / z;
}

// Text form: one "coefficient word" line per term, e.g. "-1 ZZI".

[[nodiscard]] inline std::string hamiltonian_to_text(const Hamiltonian &h) {
    std::ostringstream os;
    os << "qfm-hamiltonian " << h.n_qubits << "\n";
    for (const auto &p : h.terms) {
        os << format_real(p.coefficient) << " " << p.ops << "\n";
    }
    return os.str();
}

[[nodiscard]] inline Hamiltonian hamiltonian_from_text(const std::string &text) {
    std::istringstream is(text);
    std::string head;
    std::size_t n = 0;
    is >> head >> n;
    QFM_REQUIRE(head == "qfm-hamiltonian", "hamiltonian_from_text: missing header");
    Hamiltonian h{n, {}};
    std::string coeff, word;
    while (is >> coeff >> word) {
        h.add(PauliString(word, parse_real(coeff)));
    }
    return h;
}

// ---------------------------------------------------------------------------
// The 10-qubit heavy-hex fragment used for the superdiffusion study.
//
// External labels: ancillas 0 and 1, data 2..11. Internal layout: data
// qubits 0..9 (external label minus 2), ancillas 10 and 11.

[[nodiscard]] inline std::size_t remap_external_label(std::size_t label) {
    QFM_REQUIRE(label <= 11, "remap_external_label: label out of range");
    return label >= 2 ? label - 2 : 10 + label;
}

/// Bond table for the fragment, given in external labels and remapped.
[[nodiscard]] inline BondSet heavy_hex_fragment_bonds() {
    const std::map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> external = {
        {"a", {{2, 3}, {5, 6}, {10, 11}}},
        {"c", {{3, 4}, {6, 7}, {8, 9}}},
        {"b", {{4, 5}, {7, 8}, {9, 10}}},
        {"2D", {{4, 9}}},
    };
    BondSet b;
    b.n_qubits = 10;
    for (const auto &[type, list] : external) {
        for (const auto &[i, j] : list) {
            b.bonds[type].emplace_back(remap_external_label(i), remap_external_label(j));
        }
    }
    b.validate();
    return b;
}

} // namespace qfm
