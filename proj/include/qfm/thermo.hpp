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
#include <limits>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "engine.hpp"
#include "hamiltonian.hpp"
#include "metrics.hpp"

namespace qfm {

enum class CpsBasis { Z, X };

[[nodiscard]] inline const char *basis_name(CpsBasis b) { return b == CpsBasis::Z ? "Z" : "X"; }

/// Classical product state: bit q of `bits` selects |0>/|1> (Z) or |+>/|-> (X) on qubit q.
[[nodiscard]] inline StateVector cps_state(std::size_t n, std::size_t bits, CpsBasis basis) {
    auto s = basis_state(n, bits);
    if (basis == CpsBasis::X) {
        for (std::size_t q = 0; q < n; ++q) {
            s.apply_1q_unchecked(q, hadamard_matrix());
        }
    }
    return s;
}

/// e^{-beta H / 2}|cps> / norm
[[nodiscard]] inline StateVector metts_prepare(const Spectrum &sp, Real beta, std::size_t bits, CpsBasis basis) {
    QFM_REQUIRE(beta >= 0.0, "metts_prepare: beta must be non-negative");
    return evolve_imaginary(sp, beta, cps_state(sp.n_qubits(), bits, basis));
}

[[nodiscard]] inline StateVector metts_prepare(const Hamiltonian &h, Real beta, std::size_t bits, CpsBasis basis) {
    return metts_prepare(spectrum(h), beta, bits, basis);
}

/// Current CPS label (obtained in `basis`) and the basis of the next collapse.
struct MettsChainState {
    std::size_t label = 0;
    CpsBasis basis = CpsBasis::Z;
    CpsBasis next_basis = CpsBasis::X;
    Rng rng;
};

/// Collapses `state` in the chain's next basis and flips the basis after.
[[nodiscard]] inline MettsChainState metts_next(const StateVector &state, MettsChainState chain) {
    QFM_REQUIRE(std::abs(state.norm() - 1.0) <= kNormTol, "metts_next: state not normalized");
    StateVector s = state;
    if (chain.next_basis == CpsBasis::X) {
        for (std::size_t q = 0; q < s.n_qubits(); ++q) {
            s.apply_1q_unchecked(q, hadamard_matrix());
        }
    }
    chain.label = sample_basis_index(s, chain.rng);
    chain.basis = chain.next_basis;
    chain.next_basis = chain.next_basis == CpsBasis::Z ? CpsBasis::X : CpsBasis::Z;
    return chain;
}

// ---------------------------------------------------------------------------
// Work

enum class WorkMode {
    /// Two-point projective energy measurement, averaged exactly over both
    /// outcomes for each METTS; stores mean energies and E[e^{-beta W}|psi].
    TWO_POINT_EXACT,
    TWO_POINT,  ///< sampled projective energy measurements at both ends
    EXPECTATION ///< W = <H(t_f)>_out - <H(0)>_in
};

[[nodiscard]] inline const char *work_mode_name(WorkMode m) {
    switch (m) {
    case WorkMode::TWO_POINT_EXACT:
        return "two_point_exact";
    case WorkMode::TWO_POINT:
        return "two_point";
    case WorkMode::EXPECTATION:
        return "expectation";
    }
    return "?";
}

struct WorkSample {
    Real beta = 0.0;
    std::uint64_t seed = 0;
    Real e_initial = 0.0;
    Real e_final = 0.0;
    Real work = 0.0;
    /// ln E[e^{-beta W} | state] when the outcome average is exact; NaN
    /// otherwise, in which case -beta W is used.
    Real log_boltzmann = std::numeric_limits<Real>::quiet_NaN();

    [[nodiscard]] Real log_factor() const { return std::isnan(log_boltzmann) ? -beta * work : log_boltzmann; }
};

using Drive = std::function<Hamiltonian(Real)>;

/// Drive compiled to its end-point spectra and the piecewise-constant
/// propagator prod_k exp(-i H(t_k + dt/2) dt).
struct WorkProtocol {
    Spectrum initial;
    Spectrum final;
    MatX propagator;
    Real t_final = 0.0;
    std::size_t n_trotter = 0;

    static WorkProtocol compile(const Drive &drive, Real t_final, std::size_t n_trotter) {
        QFM_REQUIRE(n_trotter >= 1, "work protocol: n_trotter must be at least 1");
        QFM_REQUIRE(t_final >= 0.0, "work protocol: t_final must be non-negative");
        WorkProtocol w;
        w.t_final = t_final;
        w.n_trotter = n_trotter;
        w.initial = spectrum(drive(0.0));
        w.final = spectrum(drive(t_final));
        const auto d = w.initial.energies.size();
        w.propagator = MatX::Identity(d, d);
        const Real dt = t_final / static_cast<Real>(n_trotter);
        for (std::size_t k = 0; k < n_trotter; ++k) {
            const auto sp = spectrum(drive((static_cast<Real>(k) + 0.5) * dt));
            Eigen::VectorXcd ph(d);
            for (Eigen::Index i = 0; i < d; ++i) {
                ph(i) = std::exp(Complex(0.0, -sp.energies(i) * dt));
            }
            w.propagator = (sp.vectors * ph.asDiagonal() * sp.vectors.adjoint()) * w.propagator;
        }
        return w;
    }

    [[nodiscard]] StateVector evolve(const StateVector &s) const {
        Eigen::Map<const Eigen::VectorXcd> v(s.amplitudes().data(), propagator.cols());
        Eigen::VectorXcd out = propagator * v;
        return StateVector::from_amplitudes({out.data(), out.data() + out.size()}, true);
    }
};

namespace detail {

/// Eigenvalue clusters (ties within 1e-9) as [begin, end) index ranges.
[[nodiscard]] inline std::vector<std::pair<Eigen::Index, Eigen::Index>> energy_levels(const Spectrum &sp) {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> lv;
    const auto d = sp.energies.size();
    for (Eigen::Index i = 0; i < d;) {
        Eigen::Index j = i + 1;
        while (j < d && sp.energies(j) - sp.energies(j - 1) < 1e-9) {
            ++j;
        }
        lv.emplace_back(i, j);
        i = j;
    }
    return lv;
}

/// Projective energy measurement: samples a level with its Born weight and
/// returns (energy, normalized projected state).
[[nodiscard]] inline std::pair<Real, Eigen::VectorXcd> measure_energy(const Spectrum &sp, const Eigen::VectorXcd &v,
                                                                      Rng &rng) {
    const Eigen::VectorXcd c = sp.vectors.adjoint() * v;
    const auto levels = energy_levels(sp);
    std::vector<Real> w(levels.size(), 0.0);
    for (std::size_t l = 0; l < levels.size(); ++l) {
        for (auto i = levels[l].first; i < levels[l].second; ++i) {
            w[l] += std::norm(c(i));
        }
    }
    const auto l = rng.categorical(w);
    Eigen::VectorXcd proj = Eigen::VectorXcd::Zero(c.size());
    for (auto i = levels[l].first; i < levels[l].second; ++i) {
        proj(i) = c(i);
    }
    Eigen::VectorXcd out = sp.vectors * proj;
    out.normalize();
    return {sp.energies(levels[l].first), out};
}

[[nodiscard]] inline Real spectral_mean(const Spectrum &sp, std::span<const Complex> psi) {
    const auto p = sp.populations(psi);
    Real e = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        e += p[k] * sp.energies(static_cast<Eigen::Index>(k));
    }
    return e;
}

} // namespace detail

/// ln sum_{k,j} |<j|U P_k|psi>|^2 e^{-beta (E'_j - E_k)}: the exact average
/// of e^{-beta W} over both projective energy measurements.
[[nodiscard]] inline Real log_boltzmann_two_point(const WorkProtocol &proto, const StateVector &psi, Real beta) {
    const auto &sp = proto.initial;
    Eigen::Map<const Eigen::VectorXcd> v(psi.amplitudes().data(), proto.propagator.cols());
    const Eigen::VectorXcd c = sp.vectors.adjoint() * v;
    std::vector<Real> logs;
    for (auto [a, b] : detail::energy_levels(sp)) {
        Eigen::VectorXcd proj = Eigen::VectorXcd::Zero(c.size());
        Real w = 0.0;
        for (auto i = a; i < b; ++i) {
            proj(i) = c(i);
            w += std::norm(c(i));
        }
        if (w <= 0.0) {
            continue;
        }
        const Eigen::VectorXcd out = proto.final.vectors.adjoint() * (proto.propagator * (sp.vectors * proj));
        for (Eigen::Index j = 0; j < out.size(); ++j) {
            const Real p = std::norm(out(j));
            if (p > 0.0) {
                logs.push_back(std::log(p) - beta * (proto.final.energies(j) - sp.energies(a)));
            }
        }
    }
    const Real mx = *std::max_element(logs.begin(), logs.end());
    Real s = 0.0;
    for (Real l : logs) {
        s += std::exp(l - mx);
    }
    return mx + std::log(s);
}

/// One work sample for a METTS prepared at H(0).
[[nodiscard]] inline WorkSample work_sample(const WorkProtocol &proto, const StateVector &metts, WorkMode mode,
                                            Real beta, Rng &rng) {
    QFM_REQUIRE(static_cast<Eigen::Index>(metts.dim()) == proto.propagator.cols(), "work_sample: dimension mismatch");
    WorkSample w;
    w.beta = beta;
    if (mode != WorkMode::TWO_POINT) {
        w.e_initial = detail::spectral_mean(proto.initial, metts.amplitudes());
        const auto out = proto.evolve(metts);
        w.e_final = detail::spectral_mean(proto.final, out.amplitudes());
        if (mode == WorkMode::TWO_POINT_EXACT) {
            w.log_boltzmann = log_boltzmann_two_point(proto, metts, beta);
        }
    } else {
        Eigen::Map<const Eigen::VectorXcd> v(metts.amplitudes().data(), proto.propagator.cols());
        auto [ei, post] = detail::measure_energy(proto.initial, v, rng);
        Eigen::VectorXcd evolved = proto.propagator * post;
        auto [ef, unused] = detail::measure_energy(proto.final, evolved, rng);
        (void)unused;
        w.e_initial = ei;
        w.e_final = ef;
    }
    w.work = w.e_final - w.e_initial;
    return w;
}

/// Two-point work with the initial eigenstate drawn from the exact Gibbs
/// distribution at `beta`.
[[nodiscard]] inline WorkSample exact_thermal_work_sample(const WorkProtocol &proto, Real beta, Rng &rng) {
    const auto &sp = proto.initial;
    const Real e0 = sp.energies(0);
    std::vector<Real> p(static_cast<std::size_t>(sp.energies.size()));
    for (std::size_t k = 0; k < p.size(); ++k) {
        p[k] = std::exp(-beta * (sp.energies(static_cast<Eigen::Index>(k)) - e0));
    }
    const auto k = static_cast<Eigen::Index>(rng.categorical(p));
    Eigen::VectorXcd evolved = proto.propagator * sp.vectors.col(k);
    auto [ef, unused] = detail::measure_energy(proto.final, evolved, rng);
    (void)unused;
    WorkSample w;
    w.beta = beta;
    w.e_initial = sp.energies(k);
    w.e_final = ef;
    w.work = ef - w.e_initial;
    return w;
}

struct JarzynskiEstimate {
    Real delta_f = 0.0;
    /// CV of the running estimate of e^{-beta W} after k+1 samples.
    std::vector<Real> cv_series;
};

/// -(1/beta) ln((1/M) sum_m e^{a_m}) for log factors a_m, via log-sum-exp.
[[nodiscard]] inline Real delta_f_from_logs(std::span<const Real> logs, Real beta) {
    QFM_REQUIRE(beta > 0.0, "jarzynski: beta must be positive");
    QFM_REQUIRE(!logs.empty(), "jarzynski: no samples");
    const Real mx = *std::max_element(logs.begin(), logs.end());
    Real s = 0.0;
    for (Real a : logs) {
        s += std::exp(a - mx);
    }
    return -(mx + std::log(s / static_cast<Real>(logs.size()))) / beta;
}

/// Delta F = -(1/beta) ln((1/M) sum e^{-beta W_m})
[[nodiscard]] inline Real jarzynski_delta_f(std::span<const Real> work, Real beta) {
    std::vector<Real> logs(work.size());
    for (std::size_t k = 0; k < work.size(); ++k) {
        logs[k] = -beta * work[k];
    }
    return delta_f_from_logs(logs, beta);
}

[[nodiscard]] inline JarzynskiEstimate jarzynski_estimate(std::span<const WorkSample> samples, Real beta) {
    QFM_REQUIRE(beta > 0.0, "jarzynski: beta must be positive");
    QFM_REQUIRE(!samples.empty(), "jarzynski: no samples");
    std::vector<Real> logs, x;
    for (const auto &s : samples) {
        QFM_REQUIRE(std::abs(s.beta - beta) <= 1e-12, "jarzynski: samples taken at a different beta");
        logs.push_back(s.log_factor());
        x.push_back(std::exp(logs.back()));
    }
    return {delta_f_from_logs(logs, beta), coefficient_of_variation(x)};
}

/// Bootstrap standard error of the estimate from log factors.
[[nodiscard]] inline Real jarzynski_bootstrap_stderr(std::span<const Real> logs, Real beta, std::size_t resamples,
                                                     Rng &rng) {
    QFM_REQUIRE(resamples >= 2, "bootstrap: need at least two resamples");
    std::vector<Real> est(resamples), pick(logs.size());
    for (auto &e : est) {
        for (auto &p : pick) {
            p = logs[rng.below(logs.size())];
        }
        e = delta_f_from_logs(pick, beta);
    }
    Real mean = 0.0;
    for (Real e : est) {
        mean += e;
    }
    mean /= static_cast<Real>(resamples);
    Real var = 0.0;
    for (Real e : est) {
        var += (e - mean) * (e - mean);
    }
    return std::sqrt(var / static_cast<Real>(resamples - 1));
}

// ---------------------------------------------------------------------------
// METTS + Jarzynski pipeline

struct JarzynskiConfig {
    std::size_t n = 4;
    TfimSign sign = TfimSign::main_text;
    Real g_initial = 1.0;
    Real g_rate = 1.0 / 20.0; ///< g(t) = g_initial + g_rate t
    Real t_final = 10.0;
    std::size_t n_trotter = 200;
    std::vector<Real> betas{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::size_t samples = 300;
    std::size_t burn_in = 20;
    std::size_t bootstrap = 1000;
    enum class Mode { ORACLE, QFM } mode = Mode::ORACLE;
    WorkMode work_mode = WorkMode::TWO_POINT_EXACT;
    // qfm-metts model
    std::size_t steps = 10; ///< beta_tau = tau / steps
    std::size_t layers = 20;
    std::size_t n_ancilla = 1;
    AdamConfig adam;
    Real fidelity_threshold = 0.01;
    std::uint64_t seed = 0;

    void validate() const {
        QFM_REQUIRE(n >= 1 && n <= 10, "jarzynski: n out of range");
        QFM_REQUIRE(!betas.empty() && samples >= 1, "jarzynski: need betas and samples");
        QFM_REQUIRE(n_trotter >= 1 && t_final >= 0.0, "jarzynski: bad drive discretization");
        for (Real b : betas) {
            QFM_REQUIRE(b > 0.0, "jarzynski: beta must be positive");
            if (mode == Mode::QFM) {
                const Real t = b * static_cast<Real>(steps);
                QFM_REQUIRE(std::abs(t - std::round(t)) < 1e-9 && std::round(t) >= 1 &&
                                std::round(t) <= static_cast<Real>(steps),
                            "jarzynski: qfm mode needs beta on the grid tau / steps");
            }
        }
    }

    [[nodiscard]] Drive drive() const {
        return [n = n, sign = sign, g0 = g_initial, rate = g_rate](Real t) { return tfim(n, g0 + rate * t, sign); };
    }
};

struct BetaResult {
    Real beta = 0.0;
    Real delta_f_hat = 0.0;
    Real delta_f_exact = 0.0;
    Real bootstrap_stderr = 0.0;
    Real mean_work = 0.0;
    std::vector<Real> cv_series;
    std::optional<std::size_t> cv_stable_at;
    /// Per-sample state preparations a conventional filter would re-compile.
    std::size_t re_preparations = 0;
    /// Mean fidelity of the prepared METTS with the exact filtered state.
    Real mean_fidelity = 1.0;
};

struct JarzynskiReport {
    std::vector<WorkSample> samples;
    std::vector<BetaResult> per_beta;
    std::size_t qfm_parameter_updates = 0;
    std::size_t conventional_adjustments = 0;
    bool converged = true;
    std::vector<Real> step_losses;
    std::optional<QfmModel> model;
};

/// QFM model mapping CPS states to METTS at beta_tau = tau / steps.
[[nodiscard]] inline TrainedRun train_metts_model(const JarzynskiConfig &cfg, const Spectrum &sp0) {
    std::vector<StateVector> cps;
    std::vector<std::pair<std::size_t, CpsBasis>> labels;
    for (auto basis : {CpsBasis::Z, CpsBasis::X}) {
        for (std::size_t b = 0; b < dim_of(cfg.n); ++b) {
            cps.push_back(cps_state(cfg.n, b, basis));
            labels.emplace_back(b, basis);
        }
    }
    auto initial = Ensemble::make(cps, derive_seed(cfg.seed, 0x6d657474ULL));
    TrainConfig tc;
    tc.n_ancilla = cfg.n_ancilla;
    tc.layers = cfg.layers;
    tc.total_steps = cfg.steps;
    tc.adam = cfg.adam;
    tc.fidelity_threshold = cfg.fidelity_threshold;
    tc.seed = cfg.seed;
    const auto targets = [&](std::size_t tau, const Ensemble &) {
        std::vector<StateVector> t;
        const Real beta = static_cast<Real>(tau) / static_cast<Real>(cfg.steps);
        for (const auto &[b, basis] : labels) {
            t.push_back(metts_prepare(sp0, beta, b, basis));
        }
        return LossSpec::fidelity(std::move(t));
    };
    return train_model(initial, targets, cfg.n, tc);
}

/// Work samples and Jarzynski estimates per beta, from oracle METTS or from
/// a trained QFM model.
[[nodiscard]] inline JarzynskiReport run_metts_jarzynski(const JarzynskiConfig &cfg) {
    cfg.validate();
    const auto proto = WorkProtocol::compile(cfg.drive(), cfg.t_final, cfg.n_trotter);
    JarzynskiReport rep;
    if (cfg.mode == JarzynskiConfig::Mode::QFM) {
        auto run = train_metts_model(cfg, proto.initial);
        for (const auto &s : run.model.steps) {
            rep.qfm_parameter_updates += s.updates;
            rep.step_losses.push_back(s.final_loss);
        }
        rep.converged = run.model.converged();
        rep.model = std::move(run.model);
    }
    for (std::size_t bi = 0; bi < cfg.betas.size(); ++bi) {
        const Real beta = cfg.betas[bi];
        const auto tau = static_cast<std::size_t>(std::llround(beta * static_cast<Real>(cfg.steps)));
        const std::uint64_t chain_seed = derive_seed(cfg.seed, 0x636861696eULL, bi);
        MettsChainState chain{0, CpsBasis::Z, CpsBasis::X, Rng(chain_seed)};
        BetaResult br;
        br.beta = beta;
        std::vector<WorkSample> ws;
        Real fid = 0.0;
        for (std::size_t k = 0; k < cfg.burn_in + cfg.samples; ++k) {
            const auto exact = metts_prepare(proto.initial, beta, chain.label, chain.basis);
            const std::uint64_t sseed = derive_seed(chain_seed, 0x776f726bULL, k);
            Rng srng(sseed);
            StateVector state = exact;
            if (rep.model) {
                state = cps_state(cfg.n, chain.label, chain.basis);
                for (std::size_t t = 0; t < tau; ++t) {
                    state = apply_step(rep.model->steps[t], rep.model->total_steps, state, srng);
                }
            }
            if (k >= cfg.burn_in) {
                auto w = work_sample(proto, state, cfg.work_mode, beta, srng);
                w.seed = sseed;
                ws.push_back(w);
                fid += fidelity(exact, state);
            }
            chain = metts_next(state, chain);
        }
        br.re_preparations = cfg.burn_in + cfg.samples;
        rep.conventional_adjustments += br.re_preparations;
        const auto est = jarzynski_estimate(ws, beta);
        br.delta_f_hat = est.delta_f;
        br.cv_series = est.cv_series;
        br.cv_stable_at = cv_stabilization(br.cv_series);
        br.delta_f_exact = free_energy(proto.final, beta) - free_energy(proto.initial, beta);
        std::vector<Real> logs;
        Real mw = 0.0;
        for (const auto &w : ws) {
            logs.push_back(w.log_factor());
            mw += w.work;
        }
        br.mean_work = mw / static_cast<Real>(ws.size());
        br.mean_fidelity = fid / static_cast<Real>(ws.size());
        Rng brng(derive_seed(cfg.seed, 0x626f6f74ULL, bi));
        br.bootstrap_stderr = jarzynski_bootstrap_stderr(logs, beta, cfg.bootstrap, brng);
        rep.samples.insert(rep.samples.end(), ws.begin(), ws.end());
        rep.per_beta.push_back(std::move(br));
    }
    return rep;
}

} // namespace qfm
