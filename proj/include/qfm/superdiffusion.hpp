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
#include <limits>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "circuit.hpp"
#include "hamiltonian.hpp"
#include "statevector.hpp"

namespace qfm {

/// Heisenberg chain on a bond set with one ancilla-tunable "2D" bond.
struct SuperdiffusionConfig {
    BondSet bonds = heavy_hex_fragment_bonds();
    std::array<Real, 3> lambda{0.0, 0.0, 1.0}; ///< anisotropy of the 2D bond
    Real coupling = 1.0;                         ///< J of the 1D bonds
    std::array<Real, 4> theta{1.0, 0.5, 0.0, 0.0};
    Real drift = 1.5; ///< C
    std::size_t steps = 20;
    Real dt = 1.0;
    std::size_t probe = remap_external_label(2);
    std::size_t samples = 100; ///< M
    std::uint64_t seed = 0;

    [[nodiscard]] std::size_t n_data() const { return bonds.n_qubits; }

    void validate() const {
        bonds.validate();
        QFM_REQUIRE(bonds.of("2D").size() == 1, "superdiffusion: need exactly one 2D bond");
        QFM_REQUIRE(probe < n_data(), "superdiffusion: probe out of range");
        QFM_REQUIRE(samples >= 1, "superdiffusion: need at least one sample");
        QFM_REQUIRE(std::isfinite(dt) && std::isfinite(coupling) && std::isfinite(drift), "superdiffusion: bad scalar");
    }

    /// J_perp / J realised by the ancilla outcome pattern (bit i = r_i).
    [[nodiscard]] Real j_perp(std::size_t pattern) const {
        Real s = drift;
        for (std::size_t i = 0; i < 2; ++i) {
            s += theta[i] * (((pattern >> i) & 1U) ? -1.0 : 1.0);
        }
        return s;
    }
};

enum class MeasureOrder { AT_END, FIRST };

namespace detail {

inline void append_bonds(CircuitProgram &p, const SuperdiffusionConfig &cfg, const std::string &type) {
    for (auto [i, j] : cfg.bonds.of(type)) {
        auto blk = build_hij_trotter(i, j, cfg.coupling, {1.0, 1.0, 1.0}, cfg.dt, p.n_qubits());
        p.ops.insert(p.ops.end(), blk.ops.begin(), blk.ops.end());
    }
}

inline void append_2d(CircuitProgram &p, const SuperdiffusionConfig &cfg, Real strength) {
    auto [i, j] = cfg.bonds.of("2D").front();
    auto blk = build_hij_trotter(i, j, cfg.coupling * strength, cfg.lambda, cfg.dt, p.n_qubits());
    p.ops.insert(p.ops.end(), blk.ops.begin(), blk.ops.end());
}

/// Gates of one block in application order: the operator is
/// U_a U_2D U_c U_b, so b acts first.
template <class Coupler> void append_block(CircuitProgram &p, const SuperdiffusionConfig &cfg, Coupler &&two_d) {
    append_bonds(p, cfg, "b");
    append_bonds(p, cfg, "c");
    two_d(p);
    append_bonds(p, cfg, "a");
}

inline void check_two_ancillas(const SuperdiffusionConfig &cfg) {
    QFM_REQUIRE(cfg.theta[2] == 0.0 && cfg.theta[3] == 0.0,
                "superdiffusion: nonzero theta2/theta3 requires four ancillas, only two are supported");
}

} // namespace detail

/// (U_a U_2D(J_perp) U_c U_b)^tau on the data qubits.
[[nodiscard]] inline CircuitProgram build_direct_circuit(Real jp_over_j, const SuperdiffusionConfig &cfg,
                                                         std::size_t tau) {
    cfg.validate();
    QFM_REQUIRE(std::isfinite(jp_over_j), "build_direct_circuit: bad coupling ratio");
    CircuitProgram p;
    p.n_data = cfg.n_data();
    for (std::size_t s = 0; s < tau; ++s) {
        detail::append_block(p, cfg, [&](CircuitProgram &q) { detail::append_2d(q, cfg, jp_over_j); });
    }
    p.validate();
    return p;
}

/**
 * @brief Training-free QFM circuit: two Hadamard-prepared ancillas set the
 * strength of the 2D bond through sigma_z couplings.
 *
 * AT_END couples the ancillas coherently (Z (x) sigma sigma Pauli rotations)
 * and measures both after the last block. FIRST measures them right after the
 * Hadamards and replaces the couplings by outcome-conditioned rotations.
 */
[[nodiscard]] inline CircuitProgram build_qfm_circuit(const SuperdiffusionConfig &cfg, std::size_t tau,
                                                      MeasureOrder order = MeasureOrder::AT_END) {
    cfg.validate();
    detail::check_two_ancillas(cfg);
    CircuitProgram p;
    p.n_data = cfg.n_data();
    p.n_ancilla = 2;
    const std::size_t a[2] = {p.n_data, p.n_data + 1};
    for (auto q : a) {
        p.ops.push_back(GateOp::hadamard(q));
    }
    if (order == MeasureOrder::FIRST) {
        p.ops.push_back(GateOp::measure(a[0], 0));
        p.ops.push_back(GateOp::measure(a[1], 1));
    }
    auto [i, j] = cfg.bonds.of("2D").front();
    const char axes[3] = {'X', 'Y', 'Z'};
    const GateKind pair_kind[3] = {GateKind::XX, GateKind::YY, GateKind::ZZ};
    auto coupler = [&](CircuitProgram &q) {
        for (std::size_t k = 0; k < 2; ++k) {
            for (int x = 0; x < 3; ++x) {
                const Real ang = 0.5 * cfg.coupling * cfg.theta[k] * cfg.lambda[x] * cfg.dt;
                if (ang == 0.0) {
                    continue;
                }
                if (order == MeasureOrder::FIRST) {
                    q.ops.push_back(GateOp::rotation(pair_kind[x], {i, j}, AngleSource::fixed(ang), k));
                } else {
                    const std::string word{'Z', axes[x], axes[x]};
                    q.ops.push_back(GateOp::pauli_rotation(word, {a[k], i, j}, AngleSource::fixed(ang)));
                }
            }
        }
        detail::append_2d(q, cfg, cfg.drift);
    };
    for (std::size_t s = 0; s < tau; ++s) {
        detail::append_block(p, cfg, coupler);
    }
    if (order == MeasureOrder::AT_END) {
        p.ops.push_back(GateOp::measure(a[0], 0));
        p.ops.push_back(GateOp::measure(a[1], 1));
    }
    p.validate();
    return p;
}

/// |0>_p (x) Haar state on the remaining data qubits.
[[nodiscard]] inline StateVector probe_state(std::size_t n_data, std::size_t probe, Rng &rng) {
    QFM_REQUIRE(probe < n_data && n_data >= 2, "probe_state: bad probe");
    const auto rest = haar_random_state(n_data - 1, rng);
    std::vector<Complex> a(dim_of(n_data));
    for (std::size_t y = 0; y < rest.dim(); ++y) {
        a[StateVector::insert_zero(y, probe)] = rest[y];
    }
    return StateVector::from_amplitudes(std::move(a));
}

[[nodiscard]] inline Real z_expectation(const StateVector &s, std::size_t q) { return 1.0 - 2.0 * prob_one(s, q); }

namespace detail {

inline void run_ops(StateVector &s, std::span<const GateOp> ops, std::vector<int> &outcomes, Rng &rng) {
    for (const auto &op : ops) {
        if (op.kind == GateKind::MEASURE_Z) {
            auto m = measure_qubit(s, op.qubits[0], rng);
            if (outcomes.size() <= op.slot) {
                outcomes.resize(op.slot + 1, -1);
            }
            outcomes[op.slot] = m.outcome;
            s = std::move(m.state);
        } else {
            apply_unitary_op(s, op, {}, outcomes);
        }
    }
}

} // namespace detail

/// Data-register operators realised by the QFM circuit in each of the four
/// branches (index = r_0 + 2 r_1), one column per computational basis input.
[[nodiscard]] inline std::array<MatX, 4> qfm_branch_unitaries(const SuperdiffusionConfig &cfg, std::size_t tau,
                                                              MeasureOrder order = MeasureOrder::AT_END) {
    const auto prog = build_qfm_circuit(cfg, tau, order);
    const std::size_t d = dim_of(cfg.n_data());
    std::array<MatX, 4> u;
    for (auto &m : u) {
        m = MatX::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    }
    for (std::size_t k = 0; k < d; ++k) {
        const auto branches = enumerate_branches(prog, {}, basis_state(prog.n_qubits(), k));
        QFM_REQUIRE(branches.size() == 4, "qfm_branch_unitaries: expected four branches");
        for (const auto &b : branches) {
            QFM_REQUIRE(b.data_only, "qfm_branch_unitaries: ancillas not collapsed");
            const std::size_t pat = static_cast<std::size_t>(b.record.outcomes[0]) |
                                    (static_cast<std::size_t>(b.record.outcomes[1]) << 1);
            for (std::size_t r = 0; r < d; ++r) {
                u[pat](static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = b.state[r];
            }
        }
    }
    return u;
}

/// Largest Frobenius distance between a QFM branch operator and the direct
/// circuit at the J_perp that branch realises.
[[nodiscard]] inline Real branch_operator_distance(const SuperdiffusionConfig &cfg, std::size_t tau,
                                                   MeasureOrder order = MeasureOrder::AT_END) {
    const auto u = qfm_branch_unitaries(cfg, tau, order);
    Real worst = 0.0;
    for (std::size_t r = 0; r < 4; ++r) {
        const auto direct = circuit_unitary(build_direct_circuit(cfg.j_perp(r), cfg, tau), {});
        worst = std::max(worst, (u[r] - direct).norm());
    }
    return worst;
}

/// Outcome counts of the two ancilla measurements over `shots` runs of the
/// QFM circuit, spread evenly over `inputs` probe states.
[[nodiscard]] inline std::array<std::size_t, 4> branch_counts(const SuperdiffusionConfig &cfg, std::size_t tau,
                                                              std::size_t shots, std::size_t inputs, Rng &rng) {
    QFM_REQUIRE(inputs >= 1 && shots >= inputs, "branch_counts: need at least one shot per input");
    const auto prog = build_qfm_circuit(cfg, tau, MeasureOrder::AT_END);
    std::size_t split = 0;
    while (prog.ops[split].kind != GateKind::MEASURE_Z) {
        ++split;
    }
    const std::span<const GateOp> unitary(prog.ops.data(), split);
    const std::span<const GateOp> readout(prog.ops.data() + split, prog.ops.size() - split);
    std::array<std::size_t, 4> counts{};
    const auto anc = basis_state(2, 0);
    for (std::size_t m = 0; m < inputs; ++m) {
        auto s = tensor(anc, probe_state(cfg.n_data(), cfg.probe, rng));
        std::vector<int> rec;
        detail::run_ops(s, unitary, rec, rng);
        const std::size_t reps = shots / inputs + (m < shots % inputs ? 1 : 0);
        for (std::size_t k = 0; k < reps; ++k) {
            auto c = s;
            rec.clear();
            detail::run_ops(c, readout, rec, rng);
            ++counts[static_cast<std::size_t>(rec[0]) | (static_cast<std::size_t>(rec[1]) << 1)];
        }
    }
    return counts;
}

// ---------------------------------------------------------------------------
// Correlation function

enum class CorrelationSource { DIRECT, QFM };

struct Correlation {
    Real value = 0.0;
    Real stderr_ = 0.0;
    std::size_t samples = 0;
};

namespace detail {

inline Correlation summarize_halves(const std::vector<Real> &z) {
    Correlation c;
    c.samples = z.size();
    if (z.empty()) {
        c.value = std::numeric_limits<Real>::quiet_NaN();
        c.stderr_ = c.value;
        return c;
    }
    Real mean = 0.0;
    for (Real v : z) {
        mean += 0.5 * v;
    }
    mean /= static_cast<Real>(z.size());
    Real var = 0.0;
    for (Real v : z) {
        var += (0.5 * v - mean) * (0.5 * v - mean);
    }
    c.value = mean;
    c.stderr_ = z.size() > 1 ? std::sqrt(var / static_cast<Real>(z.size() - 1) / static_cast<Real>(z.size())) : 0.0;
    return c;
}

} // namespace detail

/**
 * @brief C_pp(t) = (1/2M) sum_m <psi_m| sigma_z^p(t) |psi_m>.
 *
 * DIRECT evolves with fixed `jp_over_j`. QFM runs the ancilla circuit with
 * terminal measurements, so each trajectory samples its own J_perp.
 */
[[nodiscard]] inline Correlation correlation_c_pp(CorrelationSource src, const SuperdiffusionConfig &cfg,
                                                  std::size_t t, Rng &rng, Real jp_over_j = 0.0) {
    cfg.validate();
    std::vector<Real> z;
    z.reserve(cfg.samples);
    if (src == CorrelationSource::DIRECT) {
        const auto prog = build_direct_circuit(jp_over_j, cfg, t);
        for (std::size_t m = 0; m < cfg.samples; ++m) {
            auto s = probe_state(cfg.n_data(), cfg.probe, rng);
            apply_unitary_program(prog, {}, s);
            z.push_back(z_expectation(s, cfg.probe));
        }
    } else {
        const auto prog = build_qfm_circuit(cfg, t, MeasureOrder::AT_END);
        const auto anc = basis_state(2, 0);
        for (std::size_t m = 0; m < cfg.samples; ++m) {
            auto in = tensor(anc, probe_state(cfg.n_data(), cfg.probe, rng));
            auto res = run_circuit(prog, {}, std::move(in), rng);
            z.push_back(z_expectation(res.state, cfg.probe));
        }
    }
    return detail::summarize_halves(z);
}

// ---------------------------------------------------------------------------
// Scan

/// One C_22(t) curve: a direct run at fixed J_perp/J, the QFM mixture, or a
/// QFM branch selected by its measurement record.
struct ScanCurve {
    enum class Kind { DIRECT, QFM_MIXED, QFM_BRANCH } kind = Kind::DIRECT;
    Real jp_over_j = 0.0;    ///< DIRECT
    std::size_t pattern = 0; ///< QFM_BRANCH

    static ScanCurve direct(Real jp) { return {Kind::DIRECT, jp, 0}; }
    static ScanCurve mixed() { return {Kind::QFM_MIXED, 0.0, 0}; }
    static ScanCurve branch(std::size_t pattern) { return {Kind::QFM_BRANCH, 0.0, pattern}; }
};

/// Direct curves at every realised J_perp/J, the mixture and its four branches.
[[nodiscard]] inline std::vector<ScanCurve> default_scan_curves(const SuperdiffusionConfig &cfg) {
    std::vector<ScanCurve> c;
    for (std::size_t r = 4; r-- > 0;) {
        c.push_back(ScanCurve::direct(cfg.j_perp(r)));
    }
    c.push_back(ScanCurve::mixed());
    for (std::size_t r = 4; r-- > 0;) {
        c.push_back(ScanCurve::branch(r));
    }
    return c;
}

struct ScanRow {
    std::string mode;
    std::array<Real, 3> lambda{};
    std::string j_perp; ///< number or "mixed"
    std::size_t t = 0;
    Real c22 = 0.0;
    Real stderr_ = 0.0;
    std::size_t samples = 0;
};

[[nodiscard]] inline std::string lambda_label(const std::array<Real, 3> &l) {
    return format_real(l[0]) + ":" + format_real(l[1]) + ":" + format_real(l[2]);
}

inline constexpr std::uint64_t kProbeStream = 0x7072'6f62'6573'7461ULL;
inline constexpr std::uint64_t kBranchStream = 0x6272'616e'6368'6573ULL;

/**
 * @brief C_22(t) for t = 0..t_max for every curve and every lambda.
 *
 * Trajectories evolve incrementally; direct curves share one set of probe
 * states per lambda. QFM trajectories measure their ancillas after the
 * Hadamards (equivalent to terminal measurement, as the ancillas only enter
 * through sigma_z couplings) and branch curves condition on that record.
 */
[[nodiscard]] inline std::vector<ScanRow> run_superdiffusion_scan(SuperdiffusionConfig cfg, std::size_t t_max,
                                                                  const std::vector<std::array<Real, 3>> &lambdas,
                                                                  const std::vector<ScanCurve> &curves) {
    cfg.validate();
    QFM_REQUIRE(t_max <= cfg.steps, "run_superdiffusion_scan: t_max exceeds the configured step count");
    std::vector<ScanRow> rows;
    for (std::size_t li = 0; li < lambdas.size(); ++li) {
        cfg.lambda = lambdas[li];
        std::vector<StateVector> probes;
        Rng prng(derive_seed(cfg.seed, kProbeStream, li));
        for (std::size_t m = 0; m < cfg.samples; ++m) {
            probes.push_back(probe_state(cfg.n_data(), cfg.probe, prng));
        }
        // z[t][m] and the branch pattern of each QFM trajectory
        auto evolve_direct = [&](Real jp) {
            const auto block = build_direct_circuit(jp, cfg, 1);
            std::vector<std::vector<Real>> z(t_max + 1);
            for (const auto &p0 : probes) {
                auto s = p0;
                z[0].push_back(z_expectation(s, cfg.probe));
                for (std::size_t t = 1; t <= t_max; ++t) {
                    apply_unitary_program(block, {}, s);
                    z[t].push_back(z_expectation(s, cfg.probe));
                }
            }
            return z;
        };
        std::vector<std::vector<Real>> qz;
        std::vector<std::size_t> qpat;
        auto evolve_qfm = [&] {
            const auto head = build_qfm_circuit(cfg, 0, MeasureOrder::FIRST);
            const auto one = build_qfm_circuit(cfg, 1, MeasureOrder::FIRST);
            const std::span<const GateOp> block(one.ops.begin() + static_cast<std::ptrdiff_t>(head.ops.size()),
                                                one.ops.end());
            Rng qrng(derive_seed(cfg.seed, kBranchStream, li));
            qz.assign(t_max + 1, {});
            const auto anc = basis_state(2, 0);
            for (std::size_t m = 0; m < cfg.samples; ++m) {
                Rng hrng(derive_seed(cfg.seed ^ 0x51ULL, kProbeStream, li * 1000003ULL + m));
                auto s = tensor(anc, probe_state(cfg.n_data(), cfg.probe, hrng));
                std::vector<int> rec;
                detail::run_ops(s, head.ops, rec, qrng);
                qpat.push_back(static_cast<std::size_t>(rec[0]) | (static_cast<std::size_t>(rec[1]) << 1));
                qz[0].push_back(z_expectation(s, cfg.probe));
                for (std::size_t t = 1; t <= t_max; ++t) {
                    detail::run_ops(s, block, rec, qrng);
                    qz[t].push_back(z_expectation(s, cfg.probe));
                }
            }
        };
        for (const auto &c : curves) {
            std::vector<std::vector<Real>> z;
            std::string mode, jp;
            if (c.kind == ScanCurve::Kind::DIRECT) {
                z = evolve_direct(c.jp_over_j);
                mode = "direct";
                jp = format_real(c.jp_over_j);
            } else {
                if (qz.empty()) {
                    evolve_qfm();
                }
                if (c.kind == ScanCurve::Kind::QFM_MIXED) {
                    z = qz;
                    mode = "qfm";
                    jp = "mixed";
                } else {
                    z.assign(t_max + 1, {});
                    for (std::size_t t = 0; t <= t_max; ++t) {
                        for (std::size_t m = 0; m < qpat.size(); ++m) {
                            if (qpat[m] == c.pattern) {
                                z[t].push_back(qz[t][m]);
                            }
                        }
                    }
                    mode = "qfm_branch";
                    jp = format_real(cfg.j_perp(c.pattern));
                }
            }
            for (std::size_t t = 0; t <= t_max; ++t) {
                const auto s = detail::summarize_halves(z[t]);
                rows.push_back({mode, cfg.lambda, jp, t, s.value, s.stderr_, s.samples});
            }
        }
    }
    return rows;
}

inline void write_scan_csv(std::ostream &os, const std::vector<ScanRow> &rows) {
    os << "mode,lambda,J_perp_or_mixed,t,C22,stderr,M\n";
    for (const auto &r : rows) {
        os << r.mode << ',' << lambda_label(r.lambda) << ',' << r.j_perp << ',' << r.t << ',' << format_real(r.c22)
           << ',' << format_real(r.stderr_) << ',' << r.samples << '\n';
    }
}

} // namespace qfm
