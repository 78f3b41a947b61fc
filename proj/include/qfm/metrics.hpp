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

#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "circuit.hpp"
#include "statevector.hpp"

namespace qfm {

/// Counts over strictly increasing bin edges. Values outside the range are
/// clamped into the first or last bin.
struct Histogram {
    std::vector<Real> edges;
    std::vector<std::size_t> counts;
    std::size_t total = 0;

    static Histogram uniform(Real lo, Real hi, std::size_t bins) {
        QFM_REQUIRE(bins >= 1 && hi > lo, "Histogram: bad range");
        Histogram h;
        h.edges.resize(bins + 1);
        for (std::size_t i = 0; i <= bins; ++i) {
            h.edges[i] = lo + (hi - lo) * static_cast<Real>(i) / static_cast<Real>(bins);
        }
        h.counts.assign(bins, 0);
        return h;
    }

    /// `bins` bins of equal width whose centres run from `first` to `last`.
    static Histogram centred(Real first, Real last, std::size_t bins) {
        QFM_REQUIRE(bins >= 2 && last > first, "Histogram: bad centres");
        const Real w = (last - first) / static_cast<Real>(bins - 1);
        return uniform(first - 0.5 * w, last + 0.5 * w, bins);
    }

    [[nodiscard]] std::size_t bins() const { return counts.size(); }

    [[nodiscard]] std::size_t bin_of(Real v) const {
        QFM_REQUIRE(std::isfinite(v), "Histogram: non-finite value");
        const auto it = std::upper_bound(edges.begin(), edges.end(), v);
        const auto k = static_cast<std::ptrdiff_t>(it - edges.begin()) - 1;
        return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(k, 0, static_cast<std::ptrdiff_t>(bins()) - 1));
    }

    void add(Real v) {
        ++counts[bin_of(v)];
        ++total;
    }

    void add_all(std::span<const Real> vs) {
        for (Real v : vs) {
            add(v);
        }
    }

    [[nodiscard]] std::vector<Real> probabilities() const {
        QFM_REQUIRE(total > 0, "Histogram: empty");
        std::vector<Real> p(bins());
        for (std::size_t i = 0; i < bins(); ++i) {
            p[i] = static_cast<Real>(counts[i]) / static_cast<Real>(total);
        }
        return p;
    }

    [[nodiscard]] bool same_bins(const Histogram &o) const { return edges == o.edges; }

    void validate() const {
        QFM_REQUIRE(edges.size() == counts.size() + 1 && !counts.empty(), "Histogram: edge/count mismatch");
        for (std::size_t i = 1; i < edges.size(); ++i) {
            QFM_REQUIRE(edges[i] > edges[i - 1], "Histogram: edges must increase strictly");
        }
        std::size_t s = 0;
        for (auto c : counts) {
            s += c;
        }
        QFM_REQUIRE(s == total, "Histogram: counts do not sum to total");
    }

    /// CSV rows lo,hi,count.
    void write_csv(std::ostream &os) const {
        os << "lo,hi,count\n";
        for (std::size_t i = 0; i < bins(); ++i) {
            os << format_real(edges[i]) << "," << format_real(edges[i + 1]) << "," << counts[i] << "\n";
        }
    }
};

/// KL(p || q) = sum_i p_i ln(p_i / q_i) after adding eps = 1/(10 total_q) to
/// every bin probability of both histograms and renormalizing. Identical
/// histograms give exactly 0.
[[nodiscard]] inline Real kl_divergence(const Histogram &p, const Histogram &q) {
    p.validate();
    q.validate();
    QFM_REQUIRE(p.same_bins(q), "kl_divergence: mismatched bins");
    const auto pp = p.probabilities();
    const auto qq = q.probabilities();
    const Real eps = 1.0 / (10.0 * static_cast<Real>(q.total));
    Real kl = 0.0;
    for (std::size_t i = 0; i < pp.size(); ++i) {
        const Real a = pp[i] + eps;
        kl += a * std::log(a / (qq[i] + eps));
    }
    return std::max(kl / (1.0 + eps * static_cast<Real>(q.bins())), 0.0);
}

/// sqrt(1 - sum sqrt(p_i q_i)), in [0, 1].
[[nodiscard]] inline Real hellinger(const Histogram &p, const Histogram &q) {
    p.validate();
    q.validate();
    QFM_REQUIRE(p.same_bins(q), "hellinger: mismatched bins");
    const auto pp = p.probabilities();
    const auto qq = q.probabilities();
    Real bc = 0.0;
    for (std::size_t i = 0; i < pp.size(); ++i) {
        bc += std::sqrt(pp[i] * qq[i]);
    }
    return std::sqrt(std::clamp(1.0 - bc, 0.0, 1.0));
}

/// (1/n) sum_i <sigma_z^i>
[[nodiscard]] inline Real magnetization(const StateVector &s, std::size_t n_data) {
    QFM_REQUIRE(s.n_qubits() == n_data, "magnetization: register size mismatch");
    Real m = 0.0;
    const auto n = static_cast<Real>(n_data);
    for (std::size_t x = 0; x < s.dim(); ++x) {
        m += std::norm(s[x]) * (n - 2.0 * std::popcount(x));
    }
    return m / n;
}

/// <|M|>, the expectation of the absolute magnetization operator.
[[nodiscard]] inline Real abs_magnetization(const StateVector &s, std::size_t n_data) {
    QFM_REQUIRE(s.n_qubits() == n_data, "abs_magnetization: register size mismatch");
    Real m = 0.0;
    const auto n = static_cast<Real>(n_data);
    for (std::size_t x = 0; x < s.dim(); ++x) {
        m += std::norm(s[x]) * std::abs(n - 2.0 * std::popcount(x));
    }
    return m / n;
}

/// Magnetization read-outs of `shots` computational-basis measurements.
[[nodiscard]] inline std::vector<Real> magnetization_shots(const StateVector &s, std::size_t shots, Rng &rng) {
    std::vector<Real> out(shots);
    const auto n = static_cast<Real>(s.n_qubits());
    for (auto &v : out) {
        v = (n - 2.0 * std::popcount(sample_basis_index(s, rng))) / n;
    }
    return out;
}

/// <sigma_y> of a single-qubit state.
[[nodiscard]] inline Real expectation_y(const StateVector &s) {
    QFM_REQUIRE(s.n_qubits() == 1, "expectation_y: single-qubit state required");
    return 2.0 * (std::conj(s[0]) * s[1]).imag();
}

/// (1/M) sum_m <sigma_y>_m^2 over single-qubit states.
[[nodiscard]] inline Real ring_deviation(std::span<const StateVector> states) {
    QFM_REQUIRE(!states.empty(), "ring_deviation: empty ensemble");
    Real acc = 0.0;
    for (const auto &s : states) {
        const Real y = expectation_y(s);
        acc += y * y;
    }
    return acc / static_cast<Real>(states.size());
}

/// Prefix std/|mean| (population std). Undefined prefixes (zero mean) are NaN.
[[nodiscard]] inline std::vector<Real> coefficient_of_variation(std::span<const Real> series) {
    QFM_REQUIRE(!series.empty(), "coefficient_of_variation: empty series");
    std::vector<Real> cv(series.size());
    Real mean = 0.0, m2 = 0.0;
    for (std::size_t k = 0; k < series.size(); ++k) {
        const Real x = series[k];
        const Real delta = x - mean;
        mean += delta / static_cast<Real>(k + 1);
        m2 += delta * (x - mean);
        const Real sd = std::sqrt(std::max(m2 / static_cast<Real>(k + 1), 0.0));
        cv[k] = mean == 0.0 ? std::numeric_limits<Real>::quiet_NaN() : sd / std::abs(mean);
    }
    return cv;
}

/// First prefix index k after which the CV changes by less than `rel`
/// (relative) over the next `span` samples; nullopt if never.
[[nodiscard]] inline std::optional<std::size_t> cv_stabilization(std::span<const Real> cv, Real rel = 0.01,
                                                                 std::size_t span = 50) {
    for (std::size_t k = 0; k + span < cv.size(); ++k) {
        if (!std::isfinite(cv[k]) || cv[k] == 0.0) {
            continue;
        }
        bool stable = true;
        for (std::size_t j = k + 1; j <= k + span && stable; ++j) {
            stable = std::isfinite(cv[j]) && std::abs(cv[j] - cv[k]) <= rel * std::abs(cv[k]);
        }
        if (stable) {
            return k;
        }
    }
    return std::nullopt;
}

} // namespace qfm
