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
#include "qfm/hamiltonian.hpp"

using namespace qfm;
using Catch::Approx;

TEST_CASE("TFIM matches the dense construction in both sign conventions") {
    for (std::size_t n : {2, 3, 4}) {
        for (double g : {0.0, 0.7, 1.5}) {
            CHECK((to_dense(tfim(n, g, TfimSign::main_text)) - oracle::tfim(n, g, 1.0)).norm() < 1e-12);
            CHECK((to_dense(tfim(n, g, TfimSign::supplement)) - oracle::tfim(n, g, -1.0)).norm() < 1e-12);
        }
    }
    CHECK_THROWS_AS(tfim(1, 1.0, TfimSign::main_text), Error);
}

TEST_CASE("two-site TFIM ground energy is -sqrt(1 + 4 g^2)") {
    for (double g : {0.0, 0.5, 1.0, 1.5}) {
        CHECK(ground_state(tfim(2, g, TfimSign::main_text)).energy == Approx(-std::sqrt(1.0 + 4.0 * g * g)));
        CHECK(ground_state(tfim(2, g, TfimSign::supplement)).energy == Approx(-std::sqrt(1.0 + 4.0 * g * g)));
    }
}

TEST_CASE("spectrum reconstructs the Hamiltonian") {
    const auto h = tfim(4, 0.9, TfimSign::supplement);
    const auto sp = spectrum(h);
    const MatX back = sp.vectors * sp.energies.cast<Complex>().asDiagonal() * sp.vectors.adjoint();
    CHECK((back - to_dense(h)).norm() < 1e-10);
    CHECK(sp.n_qubits() == 4);
}

TEST_CASE("free energy oracle") {
    // frozen from the dense exp(-beta H) trace
    const Real frozen = -7.12975281528;
    const Real f = free_energy(tfim(4, 1.0, TfimSign::main_text), 0.5);
    CHECK(f == Approx(oracle::free_energy(oracle::tfim(4, 1.0, 1.0), 0.5)).epsilon(1e-12));
    CHECK(f == Approx(frozen).epsilon(1e-11));
    CHECK_THROWS_AS((void)free_energy(tfim(2, 1.0, TfimSign::main_text), 0.0), Error);
}

TEST_CASE("free energy approaches the ground energy at low temperature") {
    const auto h = tfim(3, 0.4, TfimSign::main_text);
    CHECK(free_energy(h, 200.0) == Approx(ground_state(h).energy).margin(1e-6));
}

TEST_CASE("thermal expectation matches the dense trace") {
    const auto sp = spectrum(tfim(3, 1.2, TfimSign::main_text));
    const PauliSum zz{PauliString("ZZI")};
    CHECK(thermal_expectation(sp, 0.8, zz) ==
          Approx(oracle::thermal(oracle::tfim(3, 1.2, 1.0), oracle::word("ZZI"), 0.8)).margin(1e-12));
}

TEST_CASE("real and imaginary time evolution") {
    Rng rng(1);
    const auto h = tfim(3, 0.6, TfimSign::supplement);
    const auto s = haar_random_state(3, rng);
    oracle::V v(8);
    for (int i = 0; i < 8; ++i) {
        v(i) = s[static_cast<std::size_t>(i)];
    }
    const auto out = evolve_real(h, 0.9, s);
    const oracle::V ref = oracle::expm(oracle::C(0, -0.9) * oracle::tfim(3, 0.6, -1.0)) * v;
    for (int i = 0; i < 8; ++i) {
        CHECK(std::abs(out[static_cast<std::size_t>(i)] - ref(i)) < 1e-10);
    }
    const auto im = evolve_imaginary(h, 2.0, s);
    CHECK(std::abs(im.norm() - 1.0) < 1e-12);
    oracle::V r2 = oracle::expm(-1.0 * oracle::tfim(3, 0.6, -1.0)) * v;
    r2.normalize();
    oracle::V iv(8);
    for (int i = 0; i < 8; ++i) {
        iv(i) = im[static_cast<std::size_t>(i)];
    }
    CHECK(std::abs(std::abs(r2.dot(iv)) - 1.0) < 1e-10);
}

TEST_CASE("ground states carry a fixed global phase") {
    const auto gs = ground_state(tfim(3, 1.0, TfimSign::supplement));
    std::size_t k = 0;
    while (std::abs(gs.state[k]) <= 1e-12) {
        ++k;
    }
    CHECK(gs.state[k].imag() == Approx(0.0).margin(1e-14));
    CHECK(gs.state[k].real() > 0.0);
}

TEST_CASE("heavy-hex fragment bonds") {
    CHECK(remap_external_label(2) == 0);
    CHECK(remap_external_label(11) == 9);
    CHECK(remap_external_label(0) == 10);
    CHECK(remap_external_label(1) == 11);
    CHECK_THROWS_AS(remap_external_label(12), Error);
    const auto b = heavy_hex_fragment_bonds();
    CHECK(b.n_qubits == 10);
    CHECK(b.of("a").size() == 3);
    CHECK(b.of("b").size() == 3);
    CHECK(b.of("c").size() == 3);
    REQUIRE(b.of("2D").size() == 1);
    CHECK(b.of("2D")[0] == std::make_pair<std::size_t, std::size_t>(2, 7));
    // within one 1D type no two bonds share a qubit, so each layer is exact
    for (const char *t : {"a", "b", "c"}) {
        std::set<std::size_t> seen;
        for (const auto &[i, j] : b.of(t)) {
            CHECK(seen.insert(i).second);
            CHECK(seen.insert(j).second);
        }
    }
}

TEST_CASE("Heisenberg model assembles exchange terms") {
    BondSet b;
    b.n_qubits = 3;
    b.bonds["a"] = {{0, 1}};
    b.bonds["2D"] = {{1, 2}};
    const double iso[3] = {1, 1, 1};
    const double lam[3] = {0.0, 0.0, 1.0};
    const auto h = heisenberg(b, 1.0, 2.0, {0.0, 0.0, 1.0});
    CHECK((to_dense(h) - oracle::exchange(3, 0, 1, 1.0, iso) - oracle::exchange(3, 1, 2, 2.0, lam)).norm() < 1e-12);
}

TEST_CASE("Hamiltonian text round trip") {
    const auto h = tfim(3, 0.35, TfimSign::supplement);
    CHECK(hamiltonian_from_text(hamiltonian_to_text(h)) == h);
}
