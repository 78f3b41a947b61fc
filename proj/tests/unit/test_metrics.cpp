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

#include "qfm/metrics.hpp"

using namespace qfm;
using Catch::Approx;

TEST_CASE("histogram binning") {
    auto h = Histogram::uniform(-1.0, 1.0, 4);
    h.add(-1.0);
    h.add(-0.5);
    h.add(0.99);
    h.add(1.0);
    h.add(7.0);   // clamped into the last bin
    h.add(-3.0);  // clamped into the first bin
    CHECK(h.counts == std::vector<std::size_t>{2, 1, 0, 3});
    CHECK(h.total == 6);
    CHECK_NOTHROW(h.validate());
    CHECK_THROWS_AS(h.add(std::nan("")), Error);
    const auto c = Histogram::centred(0.0, 1.0, 11);
    CHECK(c.edges.front() == Approx(-0.05));
    CHECK(c.edges.back() == Approx(1.05));
    CHECK(c.bin_of(1.0) == 10);
    CHECK(c.bin_of(0.0) == 0);
}

TEST_CASE("KL divergence") {
    auto p = Histogram::uniform(0.0, 1.0, 2);
    auto q = p;
    SECTION("identical histograms give exactly zero") {
        p.add_all(std::vector<Real>{0.1, 0.2, 0.9});
        q.add_all(std::vector<Real>{0.3, 0.4, 0.6});
        CHECK(kl_divergence(p, q) == 0.0);
    }
    SECTION("closed form with symmetric smoothing") {
        for (int k = 0; k < 3; ++k) {
            p.add(0.25);
        }
        p.add(0.75);
        q.add(0.25);
        q.add(0.75);
        // eps = 1/(10*2) added to both, then renormalized by 1 + 2 eps
        const double e = 0.05, z = 1.1;
        const double pa = (0.75 + e) / z, pb = (0.25 + e) / z, qa = (0.5 + e) / z, qb = (0.5 + e) / z;
        CHECK(kl_divergence(p, q) == Approx(pa * std::log(pa / qa) + pb * std::log(pb / qb)).margin(1e-14));
    }
    SECTION("mismatched bins throw") {
        p.add(0.1);
        auto r = Histogram::uniform(0.0, 2.0, 2);
        r.add(0.1);
        CHECK_THROWS_AS(kl_divergence(p, r), Error);
    }
}

TEST_CASE("property: KL is non-negative and Hellinger bounded") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        auto p = Histogram::uniform(0.0, 1.0, 5), q = p;
        for (int k = 0; k < 30; ++k) {
            p.add(rng.uniform());
            q.add(rng.uniform() * rng.uniform());
        }
        CHECK(kl_divergence(p, q) >= 0.0);
        const Real h = hellinger(p, q);
        CHECK(h >= 0.0);
        CHECK(h <= 1.0);
    }
}

TEST_CASE("magnetization observables") {
    CHECK(magnetization(basis_state(3, 0), 3) == Approx(1.0));
    CHECK(magnetization(basis_state(3, 7), 3) == Approx(-1.0));
    CHECK(magnetization(basis_state(4, 0b0011), 4) == Approx(0.0));
    const auto ghz = StateVector::from_amplitudes({1, 0, 0, 0, 0, 0, 0, 1}, true);
    CHECK(magnetization(ghz, 3) == Approx(0.0).margin(1e-14));
    CHECK(abs_magnetization(ghz, 3) == Approx(1.0));
    Rng rng(1);
    const auto shots = magnetization_shots(ghz, 1000, rng);
    for (Real m : shots) {
        CHECK(std::abs(m) == Approx(1.0));
    }
}

TEST_CASE("Y expectation and ring deviation") {
    const auto plus_i = StateVector::from_amplitudes({1.0, Complex(0.0, 1.0)}, true);
    CHECK(expectation_y(plus_i) == Approx(1.0));
    // e^{-i sigma_x G}|0> has <Y> = -sin 2G; mean square over a uniform ring is 1/2
    std::vector<StateVector> ring;
    const int m = 400;
    for (int k = 0; k < m; ++k) {
        const Real g = 2.0 * kPi * k / m;
        ring.push_back(StateVector::from_amplitudes({std::cos(g), Complex(0.0, -std::sin(g))}));
    }
    CHECK(expectation_y(ring[m / 8]) == Approx(-1.0));
    CHECK(ring_deviation(ring) == Approx(0.5).margin(1e-12));
}

TEST_CASE("coefficient of variation") {
    const std::vector<Real> s{2.0, 4.0, 6.0};
    const auto cv = coefficient_of_variation(s);
    REQUIRE(cv.size() == 3);
    CHECK(cv[0] == Approx(0.0));
    CHECK(cv[1] == Approx(1.0 / 3.0));
    CHECK(cv[2] == Approx(std::sqrt(8.0 / 3.0) / 4.0));
    const std::vector<Real> z{1.0, -1.0};
    CHECK(std::isnan(coefficient_of_variation(z)[1]));
    std::vector<Real> flat(80, 0.2);
    CHECK(cv_stabilization(flat) == std::optional<std::size_t>(0));
    std::vector<Real> drifting(80);
    for (std::size_t k = 0; k < drifting.size(); ++k) {
        drifting[k] = 1.0 + 0.1 * static_cast<Real>(k);
    }
    CHECK_FALSE(cv_stabilization(drifting).has_value());
}
