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

// Independent dense-matrix references for the unit tests. Nothing here calls
// the library's kernels.

#include <cmath>
#include <complex>
#include <string>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

namespace oracle {

using C = std::complex<double>;
using M = Eigen::MatrixXcd;
using V = Eigen::VectorXcd;

inline M pauli(char p) {
    M m(2, 2);
    switch (p) {
    case 'X':
        m << 0, 1, 1, 0;
        break;
    case 'Y':
        m << 0, C(0, -1), C(0, 1), 0;
        break;
    case 'Z':
        m << 1, 0, 0, -1;
        break;
    default:
        m << 1, 0, 0, 1;
    }
    return m;
}

inline M kron(const M &a, const M &b) {
    M out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
        }
    }
    return out;
}

/// Character k acts on qubit k; qubit 0 is the least significant bit, so
/// the Kronecker chain runs from the last character to the first.
inline M word(const std::string &w) {
    M m = M::Identity(1, 1);
    for (char c : w) {
        m = kron(pauli(c), m);
    }
    return m;
}

/// Single-qubit gate `u` on qubit q of an n-qubit register.
inline M embed1(const M &u, std::size_t q, std::size_t n) {
    M m = M::Identity(1, 1);
    for (std::size_t k = 0; k < n; ++k) {
        m = kron(k == q ? u : M::Identity(2, 2), m);
    }
    return m;
}

inline M expm(const M &a) { return a.exp(); }

/// exp(-i theta P / 2)
inline M rotation(const std::string &w, double theta) { return expm(C(0, -0.5 * theta) * word(w)); }

inline M hadamard() {
    M h(2, 2);
    h << 1, 1, 1, -1;
    return h / std::sqrt(2.0);
}

/// Open-chain TFIM: s (sum Z_i Z_{i+1} + g sum X_i).
inline M tfim(std::size_t n, double g, double s) {
    const auto d = static_cast<Eigen::Index>(1) << n;
    M h = M::Zero(d, d);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        std::string w(n, 'I');
        w[i] = w[i + 1] = 'Z';
        h += s * word(w);
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::string w(n, 'I');
        w[i] = 'X';
        h += s * g * word(w);
    }
    return h;
}

/// (J/4) sum_k lambda_k sigma_k^i sigma_k^j
inline M exchange(std::size_t n, std::size_t i, std::size_t j, double coupling, const double (&lambda)[3]) {
    const auto d = static_cast<Eigen::Index>(1) << n;
    M h = M::Zero(d, d);
    const char ax[3] = {'X', 'Y', 'Z'};
    for (int k = 0; k < 3; ++k) {
        std::string w(n, 'I');
        w[i] = w[j] = ax[k];
        h += 0.25 * coupling * lambda[k] * word(w);
    }
    return h;
}

inline double free_energy(const M &h, double beta) {
    const M rho = expm(-beta * h);
    return -std::log(rho.trace().real()) / beta;
}

/// Tr(O e^{-beta H}) / Tr(e^{-beta H})
inline double thermal(const M &h, const M &o, double beta) {
    const M rho = expm(-beta * h);
    return (o * rho).trace().real() / rho.trace().real();
}

/// Von Neumann entropy in bits of a density matrix.
inline double entropy_bits(const M &rho) {
    Eigen::SelfAdjointEigenSolver<M> es(rho);
    double s = 0.0;
    for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k) {
        const double l = es.eigenvalues()(k);
        if (l > 1e-14) {
            s -= l * std::log2(l);
        }
    }
    return s;
}

/// Reduced state of qubit set {0..k-1} (the low bits) of a pure state.
inline M reduce_low(const V &psi, std::size_t k) {
    const auto dl = static_cast<Eigen::Index>(1) << k;
    const auto dh = psi.size() / dl;
    M rho = M::Zero(dl, dl);
    for (Eigen::Index h = 0; h < dh; ++h) {
        const V col = psi.segment(h * dl, dl);
        rho += col * col.adjoint();
    }
    return rho;
}

} // namespace oracle
