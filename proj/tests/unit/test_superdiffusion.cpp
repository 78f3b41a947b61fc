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
#include "qfm/superdiffusion.hpp"

using namespace qfm;
using Catch::Approx;

namespace {

// Four-site toy lattice with one bond of each type; cheap dense oracles.
SuperdiffusionConfig toy() {
    SuperdiffusionConfig c;
    c.bonds = BondSet{};
    c.bonds.n_qubits = 4;
    c.bonds.bonds["a"] = {{0, 1}};
    c.bonds.bonds["c"] = {{1, 2}};
    c.bonds.bonds["b"] = {{2, 3}};
    c.bonds.bonds["2D"] = {{0, 3}};
    c.probe = 0;
    c.samples = 20;
    c.steps = 4;
    return c;
}

} // namespace

TEST_CASE("branch couplings J_perp / J") {
    SuperdiffusionConfig c;
    CHECK(c.j_perp(0) == Approx(3.0));
    CHECK(c.j_perp(1) == Approx(1.0));
    CHECK(c.j_perp(2) == Approx(2.0));
    CHECK(c.j_perp(3) == Approx(0.0));
    CHECK(c.n_data() == 10);
    CHECK(c.probe == 0);
}

TEST_CASE("direct block equals the product of exact bond-layer exponentials") {
    auto c = toy();
    c.lambda = {0.3, 0.6, 1.0};
    const Real jp = 2.0;
    const double iso[3] = {1, 1, 1};
    const double lam[3] = {0.3, 0.6, 1.0};
    auto layer = [&](const oracle::M &h) { return oracle::expm(oracle::C(0, -c.dt) * h); };
    const oracle::M block = layer(oracle::exchange(4, 0, 1, 1.0, iso)) * layer(oracle::exchange(4, 0, 3, jp, lam)) *
                            layer(oracle::exchange(4, 1, 2, 1.0, iso)) * layer(oracle::exchange(4, 2, 3, 1.0, iso));
    const MatX u = circuit_unitary(build_direct_circuit(jp, c, 2), {});
    CHECK((u - block * block).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("property: every QFM branch equals its direct circuit") {
    auto c = toy();
    for (auto lam : {std::array<Real, 3>{0, 0, 1}, std::array<Real, 3>{1, 0, 0}, std::array<Real, 3>{1, 1, 1}}) {
        c.lambda = lam;
        for (std::size_t tau : {1, 3}) {
            CHECK(branch_operator_distance(c, tau, MeasureOrder::AT_END) < 1e-10);
            CHECK(branch_operator_distance(c, tau, MeasureOrder::FIRST) < 1e-10);
        }
    }
}

TEST_CASE("branch unitaries are unitary") {
    const auto u = qfm_branch_unitaries(toy(), 2, MeasureOrder::AT_END);
    for (const auto &m : u) {
        CHECK((m.adjoint() * m - MatX::Identity(16, 16)).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("ancilla outcomes are uniform") {
    auto c = toy();
    Rng rng(3);
    const std::size_t shots = 4000;
    const auto counts = branch_counts(c, 2, shots, 40, rng);
    const Real sigma = std::sqrt(0.25 * 0.75 / shots);
    for (auto k : counts) {
        CHECK(std::abs(static_cast<Real>(k) / shots - 0.25) < 4.0 * sigma);
    }
}

TEST_CASE("third and fourth ancilla weights are rejected") {
    auto c = toy();
    c.theta = {1.0, 0.5, 0.1, 0.0};
    CHECK_THROWS_AS(build_qfm_circuit(c, 1, MeasureOrder::AT_END), Error);
}

TEST_CASE("probe states and the t = 0 correlation") {
    auto c = toy();
    Rng rng(4);
    const auto s = probe_state(4, 0, rng);
    CHECK(z_expectation(s, 0) == Approx(1.0));
    Rng r2(5);
    const auto corr = correlation_c_pp(CorrelationSource::DIRECT, c, 0, r2, 1.0);
    // C_pp carries the 1/2 normalization: a fully polarized probe gives 1/2
    CHECK(corr.value == Approx(0.5));
    CHECK(corr.stderr_ == Approx(0.0).margin(1e-15));
}

TEST_CASE("scan output is deterministic and complete") {
    auto c = toy();
    c.seed = 9;
    const std::vector<std::array<Real, 3>> lambdas{{0, 0, 1}};
    const auto curves = default_scan_curves(c);
    const auto a = run_superdiffusion_scan(c, 3, lambdas, curves);
    const auto b = run_superdiffusion_scan(c, 3, lambdas, curves);
    std::ostringstream sa, sb;
    write_scan_csv(sa, a);
    write_scan_csv(sb, b);
    CHECK(sa.str() == sb.str());
    CHECK(a.size() == curves.size() * 4);
    CHECK(sa.str().rfind("mode,lambda,J_perp_or_mixed,t,C22,stderr,M\n", 0) == 0);
}

TEST_CASE("mixture of direct curves matches the qfm curve in expectation") {
    auto c = toy();
    c.samples = 200;
    c.seed = 1;
    const auto rows = run_superdiffusion_scan(c, 2, {{1, 1, 1}}, default_scan_curves(c));
    Real avg = 0.0, var = 0.0, q = 0.0, qse = 0.0;
    for (const auto &r : rows) {
        if (r.t != 2) {
            continue;
        }
        if (r.mode == "direct") {
            avg += 0.25 * r.c22;
            var += 0.0625 * r.stderr_ * r.stderr_;
        } else if (r.mode == "qfm") {
            q = r.c22;
            qse = r.stderr_;
        }
    }
    CHECK(std::abs(q - avg) <= 3.0 * std::sqrt(var + qse * qse));
}
