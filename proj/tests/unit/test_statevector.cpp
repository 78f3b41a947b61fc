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


#include <catch_amalgamated.hpp>

#include "oracles.hpp"
#include "qfm/density.hpp"
#include "qfm/statevector.hpp"

using namespace qfm;
using Catch::Approx;

namespace {

oracle::V vec(const StateVector &s) {
    oracle::V v(static_cast<Eigen::Index>(s.dim()));
    for (std::size_t i = 0; i < s.dim(); ++i) {
        v(static_cast<Eigen::Index>(i)) = s[i];
    }
    return v;
}

std::string random_word(std::size_t n, Rng &rng) {
    const char p[4] = {'I', 'X', 'Y', 'Z'};
    std::string w(n, 'I');
    while (w.find_first_not_of('I') == std::string::npos) {
        for (auto &c : w) {
            c = p[rng.below(4)];
        }
    }
    return w;
}

} // namespace

TEST_CASE("basis states are little-endian") {
    const auto s = basis_state(3, 0b110);
    CHECK(prob_one(s, 0) == 0.0);
    CHECK(prob_one(s, 1) == 1.0);
    CHECK(prob_one(s, 2) == 1.0);
    CHECK_THROWS_AS(basis_state(2, 4), Error);
}

TEST_CASE("hadamard on |0> gives |+>") {
    auto s = basis_state(1, 0);
    s.apply_1q(0, Mat2(oracle::hadamard()));
    CHECK(s[0].real() == Approx(1.0 / std::sqrt(2.0)));
    CHECK(s[1].real() == Approx(1.0 / std::sqrt(2.0)));
}

TEST_CASE("tensor puts the first factor on the high qubits") {
    const auto s = tensor(basis_state(1, 1), basis_state(2, 0));
    CHECK(s.n_qubits() == 3);
    CHECK(std::abs(s[0b100]) == Approx(1.0));
}

TEST_CASE("single- and two-qubit gates match dense Kronecker products") {
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        const auto s = haar_random_state(4, rng);
        const std::size_t q = rng.below(4);
        const oracle::M u = oracle::rotation("Y", 0.3 + trial) * oracle::rotation("Z", 1.1 * trial);
        auto out = apply_1q(s, q, Mat2(u));
        CHECK((vec(out) - oracle::embed1(u, q, 4) * vec(s)).norm() < 1e-12);

        const oracle::M u2 = oracle::rotation("XY", 0.7 + trial);
        // qubits (1, 3): q1 is the high bit of the 4x4 gate index
        auto out2 = apply_2q(s, 1, 3, Mat4(u2));
        std::string w = "IYIX";
        CHECK((vec(out2) - oracle::rotation(w, 0.7 + trial) * vec(s)).norm() < 1e-12);
    }
}

TEST_CASE("Pauli rotations equal exp(-i theta P / 2)") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + rng.below(4);
        const auto w = random_word(n, rng);
        const Real theta = rng.uniform(-4.0, 4.0);
        auto s = haar_random_state(n, rng);
        const auto before = vec(s);
        s.apply_pauli_rotation(PauliString(w), theta);
        CHECK((vec(s) - oracle::rotation(w, theta) * before).norm() < 1e-12);
    }
}

TEST_CASE("property: long random gate sequences preserve the norm") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 2 + rng.below(5);
        auto s = haar_random_state(n, rng);
        for (int k = 0; k < 200; ++k) {
            s.apply_pauli_rotation(PauliString(random_word(n, rng)), rng.uniform(-kPi, kPi));
            if (k % 7 == 0) {
                s.apply_1q(rng.below(n), Mat2(oracle::hadamard()));
            }
        }
        CHECK(std::abs(s.norm() - 1.0) < 1e-10);
    }
}

TEST_CASE("property: projective measurement is complete") {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + rng.below(5);
        const auto s = haar_random_state(n, rng);
        const std::size_t q = rng.below(n);
        const auto p0 = project_qubit(s, q, 0);
        const auto p1 = project_qubit(s, q, 1);
        CHECK(p0.prob + p1.prob == Approx(1.0).margin(1e-12));
        CHECK(std::abs(p0.state.norm() - 1.0) < 1e-10);
        CHECK(std::abs(p1.state.norm() - 1.0) < 1e-10);
        // sqrt(p0) P0 + sqrt(p1) P1 reassembles the input
        oracle::V back = std::sqrt(p0.prob) * vec(p0.state) + std::sqrt(p1.prob) * vec(p1.state);
        CHECK((back - vec(s)).norm() < 1e-10);
    }
}

TEST_CASE("projection onto an impossible outcome throws") {
    CHECK_THROWS_AS((void)project_qubit(basis_state(2, 0), 1, 1), ImpossibleBranch);
}

TEST_CASE("measurement frequencies follow the Born rule") {
    Rng rng(21);
    auto s = basis_state(1, 0);
    s.apply_pauli_rotation(PauliString("Y"), 2.0 * std::acos(std::sqrt(0.3)));
    int ones = 0;
    const int shots = 20000;
    for (int k = 0; k < shots; ++k) {
        ones += measure_qubit(s, 0, rng).outcome;
    }
    const double f = static_cast<double>(ones) / shots;
    CHECK(std::abs(f - 0.7) < 4.0 * std::sqrt(0.21 / shots));
}

TEST_CASE("from_amplitudes rejects bad input") {
    CHECK_THROWS_AS(StateVector::from_amplitudes({1.0, 1.0}), Error);
    CHECK_THROWS_AS(StateVector::from_amplitudes({1.0, 0.0, 0.0}), Error);
    CHECK_NOTHROW(StateVector::from_amplitudes({1.0, 1.0}, true));
    CHECK_THROWS_AS(StateVector(kMaxQubits + 1), Error);
}

TEST_CASE("inner products and fidelity") {
    Rng rng(2);
    const auto a = haar_random_state(3, rng);
    const auto b = haar_random_state(3, rng);
    CHECK(fidelity(a, a) == Approx(1.0));
    const Complex ip = vec(a).dot(vec(b));
    CHECK(std::abs(inner_product(a, b) - ip) < 1e-12);
    CHECK(fidelity(a, b) == Approx(std::norm(ip)));
}

TEST_CASE("Pauli-sum expectation matches the dense operator") {
    Rng rng(4);
    const auto s = haar_random_state(3, rng);
    const PauliSum h{PauliString("ZZI", 0.5), PauliString("XIY", -1.25), PauliString("IYI", 2.0)};
    const oracle::M m = 0.5 * oracle::word("ZZI") - 1.25 * oracle::word("XIY") + 2.0 * oracle::word("IYI");
    CHECK(expectation(s, h) == Approx((vec(s).adjoint() * m * vec(s))(0).real()).margin(1e-12));
}

TEST_CASE("reduced density matrices and entropy") {
    SECTION("Bell pair carries one bit") {
        const auto bell = StateVector::from_amplitudes({1.0, 0.0, 0.0, 1.0}, true);
        CHECK(entanglement_entropy(bell, {0}) == Approx(1.0).margin(1e-12));
        CHECK(reduced_density(bell, std::vector<std::size_t>{1}).validate());
    }
    SECTION("product states carry none") {
        Rng rng(1);
        const auto s = tensor(haar_random_state(1, rng), haar_random_state(2, rng));
        CHECK(entanglement_entropy(s, {0, 1}) == Approx(0.0).margin(1e-10));
    }
    SECTION("matches the dense partial trace") {
        Rng rng(9);
        const auto s = haar_random_state(4, rng);
        const auto rho = reduced_density(s, std::vector<std::size_t>{0, 1});
        CHECK((rho.matrix() - oracle::reduce_low(vec(s), 2)).norm() < 1e-12);
        CHECK(entanglement_entropy(s, {0, 1}) == Approx(oracle::entropy_bits(oracle::reduce_low(vec(s), 2))));
    }
    SECTION("bad subsets throw") {
        const auto s = basis_state(2, 0);
        CHECK_THROWS_AS((void)entanglement_entropy(s, {0, 0}), Error);
        CHECK_THROWS_AS((void)entanglement_entropy(s, {2}), Error);
    }
}

TEST_CASE("property: S(A) = S(B) for pure states") {
    Rng rng(17);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t n = 2 + rng.below(5);
        const auto s = haar_random_state(n, rng);
        std::vector<std::size_t> a, b;
        for (std::size_t q = 0; q < n; ++q) {
            (rng.below(2) ? a : b).push_back(q);
        }
        if (a.empty() || b.empty()) {
            continue;
        }
        CHECK(std::abs(entanglement_entropy(s, a) - entanglement_entropy(s, b)) < 1e-8);
    }
}

TEST_CASE("Haar states are normalized and reproducible per seed") {
    Rng r1(99), r2(99);
    const auto a = haar_random_state(5, r1);
    const auto b = haar_random_state(5, r2);
    CHECK(std::abs(a.norm() - 1.0) < 1e-12);
    CHECK(a.data() == b.data());
}
