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
#include <cstring>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "circuit.hpp"
#include "density.hpp"
#include "hamiltonian.hpp"

namespace qfm {

enum class StepKind { UNITARY, PARTIALLY_MEASURED };
enum class Observable { FIDELITY, ENTROPY, ENERGY };
enum class Aggregator { MEAN, MSE };
enum class GradientMethod { FINITE_DIFFERENCE, PARAMETER_SHIFT, ADJOINT };

[[nodiscard]] inline const char *step_kind_name(StepKind k) {
    return k == StepKind::UNITARY ? "UNITARY" : "PARTIALLY_MEASURED";
}

[[nodiscard]] inline const char *observable_name(Observable o) {
    switch (o) {
    case Observable::FIDELITY:
        return "FIDELITY";
    case Observable::ENTROPY:
        return "ENTROPY";
    case Observable::ENERGY:
        return "ENERGY";
    }
    return "?";
}

// RNG stream tags.
inline constexpr std::uint64_t kTrajectoryStream = 0x7261'6a65'6374'6f72ULL;
inline constexpr std::uint64_t kGenerateStream = 0x6765'6e65'7261'7465ULL;
inline constexpr std::uint64_t kInitStream = 0x696e'6974'7061'7261ULL;
inline constexpr std::uint64_t kShotStream = 0x7377'6170'7465'7374ULL;

/// M labeled states at one step, each with its own trajectory seed.
struct Ensemble {
    std::size_t tau = 0;
    std::vector<StateVector> states;
    std::vector<std::uint64_t> seeds;
    std::vector<MeasurementRecord> records; ///< empty, or one per state

    [[nodiscard]] std::size_t size() const { return states.size(); }
    [[nodiscard]] std::size_t n_qubits() const { return states.empty() ? 0 : states.front().n_qubits(); }

    void validate() const {
        QFM_REQUIRE(!states.empty(), "Ensemble: must hold at least one state");
        QFM_REQUIRE(seeds.size() == states.size(), "Ensemble: one seed per state required");
        QFM_REQUIRE(records.empty() || records.size() == states.size(), "Ensemble: record count mismatch");
        for (const auto &s : states) {
            QFM_REQUIRE(s.n_qubits() == n_qubits(), "Ensemble: states must share a register size");
        }
    }

    /// Trajectory m gets seed derive_seed(master, trajectory-stream, m).
    static Ensemble make(std::vector<StateVector> states, std::uint64_t master_seed, std::size_t tau = 0) {
        Ensemble e;
        e.tau = tau;
        e.states = std::move(states);
        e.seeds.resize(e.states.size());
        for (std::size_t m = 0; m < e.seeds.size(); ++m) {
            e.seeds[m] = derive_seed(master_seed, kTrajectoryStream, m);
        }
        e.validate();
        return e;
    }
};

/**
 * @brief Per-step loss: observable O and aggregator f with the step target.
 *
 * FIDELITY pairs target state m with generated state m. ENTROPY compares the
 * entropy of the `cut` subsystem with `target_entropy`. ENERGY averages <H>.
 */
struct LossSpec {
    Observable observable = Observable::FIDELITY;
    Aggregator aggregator = Aggregator::MEAN;
    std::vector<StateVector> targets;
    Real target_entropy = 0.0;
    std::vector<std::size_t> cut{0};
    Hamiltonian hamiltonian;
    /// Swap-test shots per overlap estimate; 0 means exact overlaps.
    std::size_t shots = 0;
    std::uint64_t shot_seed = 0;

    static LossSpec fidelity(std::vector<StateVector> targets) {
        LossSpec s;
        s.observable = Observable::FIDELITY;
        s.aggregator = Aggregator::MEAN;
        s.targets = std::move(targets);
        return s;
    }

    static LossSpec entropy(Real e, std::vector<std::size_t> cut = {0}) {
        LossSpec s;
        s.observable = Observable::ENTROPY;
        s.aggregator = Aggregator::MSE;
        s.target_entropy = e;
        s.cut = std::move(cut);
        return s;
    }

    static LossSpec energy(Hamiltonian h) {
        LossSpec s;
        s.observable = Observable::ENERGY;
        s.aggregator = Aggregator::MEAN;
        s.hamiltonian = std::move(h);
        return s;
    }

    void validate(std::size_t n_data, std::size_t m) const {
        switch (observable) {
        case Observable::FIDELITY:
            QFM_REQUIRE(aggregator == Aggregator::MEAN, "LossSpec: FIDELITY pairs with MEAN");
            QFM_REQUIRE(!targets.empty(), "LossSpec: missing target ensemble");
            QFM_REQUIRE(targets.size() == m, "LossSpec: target/generated pairing mismatch");
            for (const auto &t : targets) {
                QFM_REQUIRE(t.n_qubits() == n_data, "LossSpec: target register size mismatch");
            }
            break;
        case Observable::ENTROPY:
            QFM_REQUIRE(aggregator == Aggregator::MSE, "LossSpec: ENTROPY pairs with MSE");
            detail::check_subset(cut, n_data);
            QFM_REQUIRE(cut.size() < n_data, "LossSpec: entropy cut must be a strict subset");
            break;
        case Observable::ENERGY:
            QFM_REQUIRE(aggregator == Aggregator::MEAN, "LossSpec: ENERGY pairs with MEAN");
            QFM_REQUIRE(!hamiltonian.terms.empty(), "LossSpec: missing Hamiltonian");
            QFM_REQUIRE(hamiltonian.n_qubits == n_data, "LossSpec: Hamiltonian register size mismatch");
            break;
        }
        QFM_REQUIRE(shots == 0 || observable == Observable::FIDELITY, "LossSpec: shot mode is fidelity-only");
    }
};

/// |tau> = R_y(tau pi / T)^{(x) n_a} |0..0>
[[nodiscard]] inline StateVector ancilla_prep(std::size_t tau, std::size_t total_steps, std::size_t n_ancilla) {
    QFM_REQUIRE(total_steps >= 1, "ancilla_prep: T must be positive");
    QFM_REQUIRE(tau <= total_steps, "ancilla_prep: tau out of range");
    QFM_REQUIRE(n_ancilla >= 1 && n_ancilla <= kMaxQubits, "ancilla_prep: bad ancilla count");
    const Real half = 0.5 * kPi * static_cast<Real>(tau) / static_cast<Real>(total_steps);
    const Real c = std::cos(half);
    const Real s = std::sin(half);
    std::vector<Complex> a(dim_of(n_ancilla));
    for (std::size_t i = 0; i < a.size(); ++i) {
        const int ones = std::popcount(i);
        a[i] = std::pow(c, static_cast<int>(n_ancilla) - ones) * std::pow(s, ones);
    }
    return StateVector::from_amplitudes(std::move(a), true);
}

/// Evaluated loss of a generated ensemble (data-qubit states).
[[nodiscard]] inline Real loss(const LossSpec &spec, const Ensemble &generated) {
    generated.validate();
    const std::size_t m = generated.size();
    spec.validate(generated.n_qubits(), m);
    Real acc = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        const auto &s = generated.states[k];
        switch (spec.observable) {
        case Observable::FIDELITY:
            acc += fidelity(spec.targets[k], s);
            break;
        case Observable::ENTROPY: {
            const Real d = spec.target_entropy - entanglement_entropy(s, spec.cut);
            acc += d * d;
            break;
        }
        case Observable::ENERGY:
            acc += expectation(s, spec.hamiltonian.terms);
            break;
        }
    }
    acc /= static_cast<Real>(m);
    return spec.observable == Observable::FIDELITY ? 1.0 - acc : acc;
}

/// Training cost (1/4M) sum ||a><a| - |b><b|||_1^2 over paired pure states.
[[nodiscard]] inline Real trace_norm_risk(const Ensemble &target, const Ensemble &generated) {
    QFM_REQUIRE(target.size() == generated.size() && target.size() > 0, "trace_norm_risk: ensemble size mismatch");
    Real acc = 0.0;
    for (std::size_t k = 0; k < target.size(); ++k) {
        QFM_REQUIRE(target.states[k].dim() == generated.states[k].dim(), "trace_norm_risk: dimension mismatch");
        const Real f = std::min(1.0, fidelity(target.states[k], generated.states[k]));
        const Real tn = 2.0 * std::sqrt(1.0 - f);
        acc += tn * tn;
    }
    return acc / (4.0 * static_cast<Real>(target.size()));
}

// ---------------------------------------------------------------------------
// Step objective

namespace detail {

// Batched kernels: `width` states stored interleaved, amplitude x of state b
// at index x * width + b.

inline void batched_pauli_rotation(std::span<Complex> amp, std::size_t width, const PauliMasks &p, Real theta) {
    const Real c = std::cos(0.5 * theta);
    const Real s = std::sin(0.5 * theta);
    const Complex mis_f = Complex(0.0, -s) * p.y_factor();
    const std::size_t dim = amp.size() / width;
    if (p.flip == 0) {
        const Complex plus = c + mis_f;
        const Complex minus = c - mis_f;
        for (std::size_t x = 0; x < dim; ++x) {
            const Complex f = (std::popcount(x & p.phase) & 1U) ? minus : plus;
            Complex *row = amp.data() + x * width;
            for (std::size_t b = 0; b < width; ++b) {
                row[b] *= f;
            }
        }
        return;
    }
    const auto hb = static_cast<std::size_t>(std::bit_width(p.flip) - 1);
    for (std::size_t k = 0; k < dim / 2; ++k) {
        const std::size_t y = kernels::insert_zero(k, hb);
        const std::size_t x = y ^ p.flip;
        const Complex fy = (std::popcount(x & p.phase) & 1U) ? -mis_f : mis_f;
        const Complex fx = (std::popcount(y & p.phase) & 1U) ? -mis_f : mis_f;
        Real *ry = reinterpret_cast<Real *>(amp.data() + y * width);
        Real *rx = reinterpret_cast<Real *>(amp.data() + x * width);
        const Real fyr = fy.real(), fyi = fy.imag(), fxr = fx.real(), fxi = fx.imag();
        for (std::size_t b = 0; b < 2 * width; b += 2) {
            const Real ur = ry[b], ui = ry[b + 1], vr = rx[b], vi = rx[b + 1];
            ry[b] = c * ur + fyr * vr - fyi * vi;
            ry[b + 1] = c * ui + fyr * vi + fyi * vr;
            rx[b] = c * vr + fxr * ur - fxi * ui;
            rx[b + 1] = c * vi + fxr * ui + fxi * ur;
        }
    }
}

/// sum_b <lam_b|P|phi_b>
[[nodiscard]] inline Complex batched_pauli_element(std::span<const Complex> lam, std::span<const Complex> phi,
                                                   std::size_t width, const PauliMasks &p) {
    const std::size_t dim = phi.size() / width;
    Real acc_r = 0.0, acc_i = 0.0;
    for (std::size_t x = 0; x < dim; ++x) {
        const Real *rl = reinterpret_cast<const Real *>(lam.data() + (x ^ p.flip) * width);
        const Real *rp = reinterpret_cast<const Real *>(phi.data() + x * width);
        Real re = 0.0, im = 0.0;
        for (std::size_t b = 0; b < 2 * width; b += 2) {
            re += rl[b] * rp[b] + rl[b + 1] * rp[b + 1];
            im += rl[b] * rp[b + 1] - rl[b + 1] * rp[b];
        }
        if (std::popcount(x & p.phase) & 1U) {
            acc_r -= re;
            acc_i -= im;
        } else {
            acc_r += re;
            acc_i += im;
        }
    }
    return Complex(acc_r, acc_i) * p.y_factor();
}

inline void batched_hadamard(std::span<Complex> amp, std::size_t width, std::size_t q) {
    const Real r = 1.0 / std::sqrt(2.0);
    const std::size_t dim = amp.size() / width;
    const std::size_t bit = std::size_t{1} << q;
    for (std::size_t y = 0; y < dim; ++y) {
        if (y & bit) {
            continue;
        }
        Complex *r0 = amp.data() + y * width;
        Complex *r1 = amp.data() + (y | bit) * width;
        for (std::size_t b = 0; b < width; ++b) {
            const Complex u = r0[b], v = r1[b];
            r0[b] = r * (u + v);
            r1[b] = r * (u - v);
        }
    }
}

} // namespace detail

/**
 * @brief Training objective of one step for a fixed circuit and input set.
 *
 * Inputs are data-qubit states; with ancillas present each input is tensored
 * with the ancilla state. Ancilla measurements must be terminal, so the loss
 * is taken as the exact expectation over outcome branches evaluated on the
 * pre-measurement state: for branch pattern r the unnormalized data block
 * phi_r carries probability |phi_r|^2.
 *
 * Identical inputs (and, for FIDELITY, identical pairs) are merged with
 * multiplicity weights. ENERGY is linear in the input density matrix, so its
 * inputs are replaced by the eigendecomposition of that matrix whenever this
 * reduces the work.
 */
class StepObjective {
  public:
    StepObjective(CircuitProgram prog, const LossSpec &spec, std::span<const StateVector> inputs,
                  const std::optional<StateVector> &ancilla = std::nullopt)
        : prog_(std::move(prog)), spec_(spec) {
        prog_.validate();
        QFM_REQUIRE(!inputs.empty(), "StepObjective: no inputs");
        spec_.validate(prog_.n_data, inputs.size());
        const std::size_t n_ops = prog_.ops.size();
        std::size_t first_measure = n_ops;
        for (std::size_t i = 0; i < n_ops; ++i) {
            const auto &op = prog_.ops[i];
            QFM_REQUIRE(!op.cond_slot, "StepObjective: conditioned gates are not trainable");
            if (op.kind == GateKind::MEASURE_Z) {
                first_measure = std::min(first_measure, i);
                QFM_REQUIRE(op.qubits[0] >= prog_.n_data, "StepObjective: only ancillas may be measured");
            } else {
                QFM_REQUIRE(i < first_measure, "StepObjective: measurements must be terminal");
                ops_.push_back(op);
            }
        }
        if (prog_.n_ancilla > 0) {
            QFM_REQUIRE(ancilla && ancilla->n_qubits() == prog_.n_ancilla, "StepObjective: ancilla state required");
        }
        build_items(inputs, ancilla);
        if (spec_.observable == Observable::ENERGY) {
            h_ = spec_.hamiltonian.terms;
        }
    }

    [[nodiscard]] std::size_t n_params() const { return prog_.n_params; }
    [[nodiscard]] std::size_t n_items() const { return items_.size(); }
    [[nodiscard]] const CircuitProgram &program() const { return prog_; }

    /// Loss at `params`; swap-test estimate when the spec requests shots.
    [[nodiscard]] Real value(std::span<const Real> params) const {
        check_params(params);
        std::vector<Complex> phi;
        forward(params, phi);
        Rng shot_rng(derive_seed(spec_.shot_seed, kShotStream, evaluations_++));
        std::vector<Complex> col;
        Real acc = 0.0;
        for (std::size_t b = 0; b < items_.size(); ++b) {
            gather(phi, b, col);
            Real l = local_loss(items_[b], col, nullptr);
            if (spec_.shots > 0) {
                l = -swap_test_estimate(-l, shot_rng);
            }
            acc += items_[b].weight * l;
        }
        return finish(acc);
    }

    /// Loss and gradient by reverse-mode (adjoint) differentiation; exact.
    Real value_and_gradient(std::span<const Real> params, std::span<Real> grad) const {
        check_params(params);
        QFM_REQUIRE(grad.size() == n_params(), "StepObjective: gradient buffer size mismatch");
        QFM_REQUIRE(spec_.shots == 0, "StepObjective: adjoint gradient needs exact overlaps");
        std::fill(grad.begin(), grad.end(), 0.0);
        const std::size_t width = items_.size();
        std::vector<Complex> phi;
        forward(params, phi);
        std::vector<Complex> lambda(phi.size());
        std::vector<Complex> col, gcol;
        Real acc = 0.0;
        for (std::size_t b = 0; b < width; ++b) {
            gather(phi, b, col);
            gcol.assign(col.size(), Complex(0.0));
            const Real w = items_[b].weight;
            acc += w * local_loss(items_[b], col, &gcol);
            for (std::size_t x = 0; x < gcol.size(); ++x) {
                lambda[x * width + b] = w * gcol[x];
            }
        }
        for (auto k = ops_.size(); k-- > 0;) {
            const auto &op = ops_[k];
            if (op.kind == GateKind::H) {
                detail::batched_hadamard(phi, width, op.qubits[0]);
                detail::batched_hadamard(lambda, width, op.qubits[0]);
                continue;
            }
            const Real theta = op.angle.resolve(params);
            if (op.angle.is_param) {
                // 2 Re <lambda| (-i/2) P |phi> = Im <lambda|P|phi>
                grad[op.angle.param] += detail::batched_pauli_element(lambda, phi, width, op.masks).imag();
            }
            detail::batched_pauli_rotation(phi, width, op.masks, -theta);
            detail::batched_pauli_rotation(lambda, width, op.masks, -theta);
        }
        const Real scale = 1.0 / total_weight_;
        for (auto &g : grad) {
            g *= scale;
        }
        return finish(acc);
    }

    [[nodiscard]] std::vector<Real> gradient(std::span<const Real> params, GradientMethod method) const {
        std::vector<Real> g(n_params(), 0.0);
        switch (method) {
        case GradientMethod::ADJOINT:
            (void)value_and_gradient(params, g);
            break;
        case GradientMethod::FINITE_DIFFERENCE: {
            constexpr Real h = 1e-4;
            std::vector<Real> x(params.begin(), params.end());
            for (std::size_t p = 0; p < x.size(); ++p) {
                const Real x0 = x[p];
                x[p] = x0 + h;
                const Real up = checked(value(x));
                x[p] = x0 - h;
                const Real down = checked(value(x));
                x[p] = x0;
                g[p] = (up - down) / (2.0 * h);
            }
            break;
        }
        case GradientMethod::PARAMETER_SHIFT: {
            QFM_REQUIRE(spec_.observable != Observable::ENTROPY,
                        "parameter-shift gradient requires a loss linear in the state");
            std::vector<std::size_t> uses(n_params(), 0);
            for (const auto &op : ops_) {
                if (is_rotation(op.kind) && op.angle.is_param) {
                    ++uses[op.angle.param];
                }
            }
            std::vector<Real> x(params.begin(), params.end());
            for (std::size_t p = 0; p < x.size(); ++p) {
                QFM_REQUIRE(uses[p] <= 1, "parameter-shift gradient requires each parameter in one gate");
                if (uses[p] == 0) {
                    continue;
                }
                const Real x0 = x[p];
                x[p] = x0 + 0.5 * kPi;
                const Real up = checked(value(x));
                x[p] = x0 - 0.5 * kPi;
                const Real down = checked(value(x));
                x[p] = x0;
                g[p] = 0.5 * (up - down);
            }
            break;
        }
        }
        for (auto v : g) {
            if (!std::isfinite(v)) {
                throw Divergence("gradient: non-finite component");
            }
        }
        return g;
    }

  private:
    struct Item {
        std::vector<Complex> input;  ///< full register
        std::vector<Complex> target; ///< FIDELITY only, data register
        Real weight = 1.0;
    };

    static Real checked(Real v) {
        if (!std::isfinite(v)) {
            throw Divergence("loss evaluation produced a non-finite value");
        }
        return v;
    }

    static std::string key_of(std::span<const Complex> a, std::span<const Complex> b) {
        std::string k(reinterpret_cast<const char *>(a.data()), a.size_bytes());
        k.append(reinterpret_cast<const char *>(b.data()), b.size_bytes());
        return k;
    }

    void build_items(std::span<const StateVector> inputs, const std::optional<StateVector> &ancilla) {
        for (const auto &s : inputs) {
            QFM_REQUIRE(s.n_qubits() == prog_.n_data, "StepObjective: input register size mismatch");
        }
        std::vector<Item> merged;
        std::map<std::string, std::size_t> index;
        for (std::size_t m = 0; m < inputs.size(); ++m) {
            std::span<const Complex> tgt;
            if (spec_.observable == Observable::FIDELITY) {
                tgt = spec_.targets[m].amplitudes();
            }
            auto key = key_of(inputs[m].amplitudes(), tgt);
            auto [pos, fresh] = index.try_emplace(std::move(key), merged.size());
            if (!fresh) {
                merged[pos->second].weight += 1.0;
                continue;
            }
            Item it;
            it.input = inputs[m].data();
            it.target.assign(tgt.begin(), tgt.end());
            merged.push_back(std::move(it));
        }
        if (spec_.observable == Observable::ENERGY) {
            merged = spectral_items(merged);
        }
        total_weight_ = 0.0;
        for (auto &it : merged) {
            total_weight_ += it.weight;
            if (ancilla) {
                const auto anc = ancilla->amplitudes();
                std::vector<Complex> full(anc.size() * it.input.size());
                for (std::size_t a = 0; a < anc.size(); ++a) {
                    for (std::size_t d = 0; d < it.input.size(); ++d) {
                        full[a * it.input.size() + d] = anc[a] * it.input[d];
                    }
                }
                it.input = std::move(full);
            }
        }
        items_ = std::move(merged);
        const std::size_t width = items_.size();
        const std::size_t dim = items_.front().input.size();
        batch_.assign(dim * width, Complex(0.0));
        for (std::size_t b = 0; b < width; ++b) {
            for (std::size_t x = 0; x < dim; ++x) {
                batch_[x * width + b] = items_[b].input[x];
            }
            items_[b].input.clear();
        }
    }

    /// Eigendecomposition of sum_k w_k |psi_k><psi_k| when it has fewer
    /// terms; eigenvalues below 1e-14 of the total weight are dropped.
    static std::vector<Item> spectral_items(std::vector<Item> items) {
        const std::size_t dim = items.front().input.size();
        if (items.size() <= dim / 2 + 1) {
            return items;
        }
        const auto d = static_cast<Eigen::Index>(dim);
        MatX rho = MatX::Zero(d, d);
        Real total = 0.0;
        for (const auto &it : items) {
            Eigen::Map<const Eigen::VectorXcd> v(it.input.data(), d);
            rho.noalias() += it.weight * (v * v.adjoint());
            total += it.weight;
        }
        Eigen::SelfAdjointEigenSolver<MatX> es(rho);
        QFM_REQUIRE(es.info() == Eigen::Success, "StepObjective: eigensolver failed");
        std::vector<Item> out;
        Real kept = 0.0;
        for (Eigen::Index k = d; k-- > 0;) {
            const Real w = es.eigenvalues()(k);
            if (w <= 1e-14 * total) {
                break;
            }
            Item it;
            const auto col = es.eigenvectors().col(k);
            it.input.assign(col.data(), col.data() + d);
            it.weight = w;
            kept += w;
            out.push_back(std::move(it));
        }
        if (out.size() >= items.size()) {
            return items;
        }
        for (auto &it : out) {
            it.weight *= total / kept;
        }
        return out;
    }

    void check_params(std::span<const Real> params) const {
        QFM_REQUIRE(params.size() == n_params(), "StepObjective: parameter count mismatch");
    }

    Real finish(Real acc) const {
        const Real l = acc / total_weight_;
        return spec_.observable == Observable::FIDELITY ? 1.0 + l : l;
    }

    void forward(std::span<const Real> params, std::vector<Complex> &phi) const {
        phi = batch_;
        const std::size_t width = items_.size();
        for (const auto &op : ops_) {
            if (op.kind == GateKind::H) {
                detail::batched_hadamard(phi, width, op.qubits[0]);
            } else {
                detail::batched_pauli_rotation(phi, width, op.masks, op.angle.resolve(params));
            }
        }
    }

    void gather(const std::vector<Complex> &phi, std::size_t b, std::vector<Complex> &col) const {
        const std::size_t width = items_.size();
        col.resize(phi.size() / width);
        for (std::size_t x = 0; x < col.size(); ++x) {
            col[x] = phi[x * width + b];
        }
    }

    /// Branch-summed local loss of the pre-measurement state. FIDELITY
    /// returns -sum_r |<t|phi_r>|^2 (the constant 1 is added in finish()).
    /// With `g` set, writes dl/d conj(phi).
    Real local_loss(const Item &it, const std::vector<Complex> &phi, std::vector<Complex> *g) const {
        const std::size_t d = dim_of(prog_.n_data);
        const std::size_t n_blocks = phi.size() / d;
        Real l = 0.0;
        for (std::size_t r = 0; r < n_blocks; ++r) {
            std::span<const Complex> blk(phi.data() + r * d, d);
            std::span<Complex> gblk;
            if (g) {
                gblk = std::span<Complex>(g->data() + r * d, d);
            }
            switch (spec_.observable) {
            case Observable::FIDELITY: {
                const Complex ov = inner_product(std::span<const Complex>(it.target), blk);
                l -= std::norm(ov);
                if (g) {
                    for (std::size_t i = 0; i < d; ++i) {
                        gblk[i] = -ov * it.target[i];
                    }
                }
                break;
            }
            case Observable::ENERGY: {
                auto hb = apply_pauli_sum(blk, h_);
                l += inner_product(blk, std::span<const Complex>(hb)).real();
                if (g) {
                    std::copy(hb.begin(), hb.end(), gblk.begin());
                }
                break;
            }
            case Observable::ENTROPY:
                l += entropy_branch(blk, gblk, g != nullptr);
                break;
            }
        }
        return l;
    }

    /// p (e - S)^2 for one unnormalized branch block, with its gradient
    /// (e-S)^2 phi + 2 (e-S) [(log2 rho_A (x) I) phi + S phi].
    Real entropy_branch(std::span<const Complex> blk, std::span<Complex> gblk, bool want_grad) const {
        const Real e = spec_.target_entropy;
        Real p = 0.0;
        for (const auto &a : blk) {
            p += std::norm(a);
        }
        if (p <= kBranchTol) {
            if (want_grad) {
                for (std::size_t i = 0; i < blk.size(); ++i) {
                    gblk[i] = e * e * blk[i];
                }
            }
            return p * e * e;
        }
        MatX rho = detail::partial_trace(blk, prog_.n_data, spec_.cut) / p;
        Eigen::SelfAdjointEigenSolver<MatX> es(rho);
        const Eigen::VectorXd lam = es.eigenvalues();
        const Real s = entropy_bits(lam);
        const Real diff = e - s;
        if (want_grad) {
            Eigen::VectorXd logs(lam.size());
            for (Eigen::Index i = 0; i < lam.size(); ++i) {
                logs(i) = std::log2(std::max(lam(i), kEigenClamp));
            }
            const MatX lmat = es.eigenvectors() * logs.asDiagonal() * es.eigenvectors().adjoint();
            std::vector<Complex> lphi(blk.begin(), blk.end());
            kernels::apply_matrix(lphi, spec_.cut, lmat);
            for (std::size_t i = 0; i < blk.size(); ++i) {
                gblk[i] = diff * diff * blk[i] + 2.0 * diff * (lphi[i] + s * blk[i]);
            }
        }
        return p * diff * diff;
    }

    /// Swap-test estimate of a fidelity: P(ancilla 0) = (1 + F) / 2.
    Real swap_test_estimate(Real f, Rng &rng) const {
        const Real p0 = 0.5 * (1.0 + std::clamp(f, 0.0, 1.0));
        std::size_t zeros = 0;
        for (std::size_t s = 0; s < spec_.shots; ++s) {
            zeros += rng.uniform() < p0 ? 1 : 0;
        }
        return 2.0 * static_cast<Real>(zeros) / static_cast<Real>(spec_.shots) - 1.0;
    }

    CircuitProgram prog_;
    LossSpec spec_;
    std::vector<GateOp> ops_;
    std::vector<Item> items_;
    std::vector<Complex> batch_;
    PauliSum h_;
    Real total_weight_ = 0.0;
    mutable std::uint64_t evaluations_ = 0;
};

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
    Real learning_rate = 0.01;
    Real beta1 = 0.9;
    Real beta2 = 0.999;
    Real epsilon = 1e-8;
    std::size_t max_iterations = 500;
    /// Stop when the best loss improved by less than `min_improvement`
    /// over the last `window` iterations; 0 disables the test.
    std::size_t window = 20;
    Real min_improvement = 1e-6;
    /// Step size after the last iteration as a fraction of `learning_rate`;
    /// the step decays geometrically towards it. 1 keeps it constant.
    Real final_lr_fraction = 1.0;
};

struct OptimizeResult {
    std::vector<Real> params; ///< best parameters seen
    Real loss = 0.0;
    std::size_t iterations = 0; ///< parameter updates applied
    std::vector<Real> history;
};

/// Adam on f(x, grad) -> loss. Non-finite loss throws Divergence.
template <class F> OptimizeResult adam_minimize(F &&value_and_grad, std::vector<Real> x, const AdamConfig &cfg) {
    const std::size_t n = x.size();
    std::vector<Real> m(n, 0.0), v(n, 0.0), g(n, 0.0);
    OptimizeResult res;
    res.params = x;
    res.loss = std::numeric_limits<Real>::infinity();
    std::vector<Real> best_trace;
    Real b1t = 1.0, b2t = 1.0;
    const Real lr_decay =
        cfg.max_iterations > 0 ? std::pow(cfg.final_lr_fraction, 1.0 / static_cast<Real>(cfg.max_iterations)) : 1.0;
    Real lr = cfg.learning_rate;
    for (std::size_t k = 0;; ++k) {
        const Real l = value_and_grad(std::span<const Real>(x), std::span<Real>(g));
        if (!std::isfinite(l)) {
            throw Divergence("optimizer: loss became non-finite at iteration " + std::to_string(k));
        }
        res.history.push_back(l);
        if (l < res.loss) {
            res.loss = l;
            res.params = x;
        }
        best_trace.push_back(res.loss);
        if (k >= cfg.max_iterations) {
            break;
        }
        if (cfg.window > 0 && k >= cfg.window && best_trace[k - cfg.window] - best_trace[k] < cfg.min_improvement) {
            break;
        }
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const Real mh = m[i] / (1.0 - b1t);
            const Real vh = v[i] / (1.0 - b2t);
            x[i] -= lr * mh / (std::sqrt(vh) + cfg.epsilon);
        }
        lr *= lr_decay;
        ++res.iterations;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Model

struct QfmStep {
    std::size_t tau = 0;
    StepKind kind = StepKind::UNITARY;
    CircuitProgram circuit;
    std::vector<Real> params;
    Real final_loss = 0.0;
    Real threshold = 0.0;
    bool converged = true;
    /// Optimizer parameter updates spent on this step (all attempts).
    std::size_t updates = 0;

    void validate() const {
        circuit.validate();
        QFM_REQUIRE(params.size() == circuit.n_params, "QfmStep: parameter count mismatch");
        if (kind == StepKind::UNITARY) {
            QFM_REQUIRE(!circuit.has_measurement(), "QfmStep: UNITARY step must not measure");
            return;
        }
        std::vector<int> seen(circuit.n_ancilla, 0);
        for (const auto &op : circuit.ops) {
            if (op.kind == GateKind::MEASURE_Z) {
                QFM_REQUIRE(op.qubits[0] >= circuit.n_data, "QfmStep: data qubit measured");
                ++seen[op.qubits[0] - circuit.n_data];
            }
        }
        for (int c : seen) {
            QFM_REQUIRE(c == 1, "QfmStep: every ancilla must be measured exactly once");
        }
    }
};

struct QfmModel {
    std::size_t n_data = 1;
    std::size_t n_ancilla = 0;
    std::size_t layers = 1;
    std::size_t total_steps = 1;
    std::vector<QfmStep> steps;

    void validate() const {
        for (std::size_t k = 0; k < steps.size(); ++k) {
            QFM_REQUIRE(steps[k].tau == k + 1, "QfmModel: steps must be indexed 1..T contiguously");
            QFM_REQUIRE(steps[k].circuit.n_data == n_data, "QfmModel: data register mismatch");
            steps[k].validate();
        }
        QFM_REQUIRE(steps.size() <= total_steps, "QfmModel: more steps than T");
    }

    [[nodiscard]] bool converged() const {
        return std::all_of(steps.begin(), steps.end(), [](const QfmStep &s) { return s.converged; });
    }
};

/// Applies one trained step to a data state. PARTIALLY_MEASURED steps
/// tensor the ancilla preparation, sample the measurements and return the
/// post-measurement data state.
[[nodiscard]] inline StateVector apply_step(const QfmStep &step, std::size_t total_steps, const StateVector &in,
                                            Rng &rng, MeasurementRecord *record = nullptr) {
    if (step.kind == StepKind::UNITARY) {
        StateVector out = in;
        apply_unitary_program(step.circuit, step.params, out);
        if (record) {
            *record = {};
        }
        return out;
    }
    auto full = tensor(ancilla_prep(step.tau, total_steps, step.circuit.n_ancilla), in);
    auto res = run_circuit(step.circuit, step.params, std::move(full), rng);
    QFM_REQUIRE(res.data_only, "apply_step: ancillas were not measured last");
    if (record) {
        *record = std::move(res.record);
    }
    return std::move(res.state);
}

/// Advances every trajectory of `prev` through `step`.
[[nodiscard]] inline Ensemble advance(const QfmStep &step, std::size_t total_steps, const Ensemble &prev) {
    prev.validate();
    Ensemble next;
    next.tau = step.tau;
    next.seeds = prev.seeds;
    next.states.reserve(prev.size());
    next.records.resize(prev.size());
    for (std::size_t m = 0; m < prev.size(); ++m) {
        Rng rng(derive_seed(prev.seeds[m], kGenerateStream, step.tau));
        next.states.push_back(apply_step(step, total_steps, prev.states[m], rng, &next.records[m]));
    }
    return next;
}

/// Ensembles for steps 0..upto, each trajectory evolved independently.
[[nodiscard]] inline std::vector<Ensemble> generate(const QfmModel &model, const Ensemble &initial, std::size_t upto) {
    initial.validate();
    QFM_REQUIRE(upto <= model.steps.size(), "generate: step " + std::to_string(upto) + " is not trained");
    QFM_REQUIRE(initial.n_qubits() == model.n_data, "generate: initial register size mismatch");
    std::vector<Ensemble> out{initial};
    out.front().tau = 0;
    for (std::size_t k = 0; k < upto; ++k) {
        out.push_back(advance(model.steps[k], model.total_steps, out.back()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    std::size_t n_ancilla = 1;
    std::size_t layers = 1;
    std::size_t total_steps = 1;
    /// Parameters start uniform in [-c/L, c/L].
    Real init_scale = kPi;
    AdamConfig adam;
    Real fidelity_threshold = 0.01;
    Real entropy_threshold = 1e-3;
    /// ENERGY threshold is E0(H) + energy_gap.
    Real energy_gap = 0.02;
    enum class Force { NONE, UNITARY_ONLY, MEASURED_ONLY } force = Force::NONE;
    /// Extra rounds from fresh initial parameters while no attempt has
    /// reached the threshold.
    std::size_t restarts = 0;
    /// Before the fresh rounds, continue from the previous step's circuit
    /// and parameters.
    bool warm_start = false;
    std::uint64_t seed = 0;

    void validate() const {
        QFM_REQUIRE(layers >= 1, "TrainConfig: layers must be positive");
        QFM_REQUIRE(total_steps >= 1, "TrainConfig: T must be positive");
        QFM_REQUIRE(force != Force::MEASURED_ONLY || n_ancilla >= 1, "TrainConfig: measured steps need ancillas");
        QFM_REQUIRE(adam.learning_rate > 0.0 && adam.max_iterations >= 1, "TrainConfig: bad optimizer settings");
    }
};

[[nodiscard]] inline Real step_threshold(const LossSpec &spec, const TrainConfig &cfg) {
    switch (spec.observable) {
    case Observable::FIDELITY:
        return cfg.fidelity_threshold;
    case Observable::ENTROPY:
        return cfg.entropy_threshold;
    case Observable::ENERGY:
        return ground_state(spec.hamiltonian).energy + cfg.energy_gap;
    }
    return 0.0;
}

[[nodiscard]] inline std::vector<Real> initial_params(std::size_t count, std::size_t layers, Real scale, Rng &rng) {
    const Real r = scale / static_cast<Real>(layers);
    std::vector<Real> x(count);
    for (auto &v : x) {
        v = rng.uniform(-r, r);
    }
    return x;
}

struct StepAttempt {
    CircuitProgram circuit;
    OptimizeResult result;
};

[[nodiscard]] inline StepAttempt optimize_step(CircuitProgram circuit, const LossSpec &spec,
                                               std::span<const StateVector> inputs,
                                               const std::optional<StateVector> &ancilla, const TrainConfig &cfg,
                                               std::uint64_t stream, std::vector<Real> x0 = {}) {
    StepObjective obj(circuit, spec, inputs, ancilla);
    if (x0.empty()) {
        Rng rng(derive_seed(cfg.seed, kInitStream, stream));
        x0 = initial_params(obj.n_params(), cfg.layers, cfg.init_scale, rng);
    }
    QFM_REQUIRE(x0.size() == obj.n_params(), "optimize_step: parameter count mismatch");
    auto res = adam_minimize([&obj](std::span<const Real> x, std::span<Real> g) { return obj.value_and_gradient(x, g); },
                             std::move(x0), cfg.adam);
    return {std::move(circuit), std::move(res)};
}

/**
 * @brief Trains step tau on the generated ensemble of step tau-1.
 *
 * U_n is tried first; if its loss exceeds the threshold the ancilla circuit
 * is trained as well and the lower-loss circuit is kept. `converged` is
 * false when neither reached the threshold. With `warm_start` the previous
 * step's circuit is first continued from its trained parameters, and the
 * fresh attempts run only if that misses the threshold.
 */
[[nodiscard]] inline QfmStep train_step(const QfmModel &model, std::size_t tau, const LossSpec &spec,
                                        const Ensemble &train_inputs, const TrainConfig &cfg) {
    cfg.validate();
    QFM_REQUIRE(model.steps.size() + 1 == tau, "train_step: steps 1..tau-1 must be trained first");
    QFM_REQUIRE(tau >= 1 && tau <= cfg.total_steps, "train_step: tau out of range");
    train_inputs.validate();
    const Real thr = step_threshold(spec, cfg);
    QfmStep step;
    step.tau = tau;
    step.threshold = thr;
    std::optional<StepAttempt> best;
    StepKind best_kind = StepKind::UNITARY;
    auto offer = [&](StepAttempt a, StepKind kind) {
        step.updates += a.result.iterations;
        if (!best || a.result.loss < best->result.loss) {
            best = std::move(a);
            best_kind = kind;
        }
    };
    if (cfg.warm_start && !model.steps.empty()) {
        const auto &prev = model.steps.back();
        std::optional<StateVector> anc;
        if (prev.kind == StepKind::PARTIALLY_MEASURED) {
            anc = ancilla_prep(tau, cfg.total_steps, cfg.n_ancilla);
        }
        offer(optimize_step(prev.circuit, spec, train_inputs.states, anc, cfg, 0, prev.params), prev.kind);
    }
    for (std::size_t round = 0; round <= cfg.restarts && !(best && best->result.loss <= thr); ++round) {
        const std::uint64_t stream = (static_cast<std::uint64_t>(round) << 32) | (2 * tau);
        std::optional<Real> unitary_loss;
        if (cfg.force != TrainConfig::Force::MEASURED_ONLY) {
            auto a = optimize_step(build_eha(model.n_data, cfg.layers), spec, train_inputs.states, std::nullopt, cfg,
                                   stream);
            unitary_loss = a.result.loss;
            offer(std::move(a), StepKind::UNITARY);
        }
        const bool need_measured = cfg.force == TrainConfig::Force::MEASURED_ONLY ||
                                   (cfg.force == TrainConfig::Force::NONE && cfg.n_ancilla > 0 && *unitary_loss > thr);
        if (need_measured) {
            offer(optimize_step(build_eha_with_ancilla(model.n_data, cfg.n_ancilla, cfg.layers), spec,
                                train_inputs.states, ancilla_prep(tau, cfg.total_steps, cfg.n_ancilla), cfg,
                                stream + 1),
                  StepKind::PARTIALLY_MEASURED);
        }
    }
    step.kind = best_kind;
    step.circuit = std::move(best->circuit);
    step.params = std::move(best->result.params);
    step.final_loss = best->result.loss;
    step.converged = step.final_loss <= thr;
    return step;
}

/// Per-step target provider: (tau, generated ensemble at tau-1) -> LossSpec.
using TargetFn = std::function<LossSpec(std::size_t, const Ensemble &)>;

struct TrainedRun {
    QfmModel model;
    std::vector<Ensemble> generated; ///< steps 0..T
};

/// Trains steps 1..T in order, each on the ensemble generated by the steps
/// before it.
[[nodiscard]] inline TrainedRun train_model(const Ensemble &initial, const TargetFn &targets, std::size_t n_data,
                                            const TrainConfig &cfg) {
    cfg.validate();
    initial.validate();
    QFM_REQUIRE(initial.n_qubits() == n_data, "train_model: initial register size mismatch");
    TrainedRun run;
    run.model.n_data = n_data;
    run.model.n_ancilla = cfg.n_ancilla;
    run.model.layers = cfg.layers;
    run.model.total_steps = cfg.total_steps;
    run.generated.push_back(initial);
    run.generated.front().tau = 0;
    for (std::size_t tau = 1; tau <= cfg.total_steps; ++tau) {
        const auto &prev = run.generated.back();
        auto spec = targets(tau, prev);
        auto step = train_step(run.model, tau, spec, prev, cfg);
        run.model.steps.push_back(std::move(step));
        run.generated.push_back(advance(run.model.steps.back(), cfg.total_steps, prev));
    }
    return run;
}

/// Gradient of the step objective; finite differences (h = 1e-4) by default.
[[nodiscard]] inline std::vector<Real> gradient(const LossSpec &spec, const QfmStep &step, std::size_t total_steps,
                                                const Ensemble &inputs, std::span<const Real> params,
                                                GradientMethod method = GradientMethod::FINITE_DIFFERENCE) {
    std::optional<StateVector> anc;
    if (step.circuit.n_ancilla > 0) {
        anc = ancilla_prep(step.tau, total_steps, step.circuit.n_ancilla);
    }
    StepObjective obj(step.circuit, spec, inputs.states, anc);
    return obj.gradient(params, method);
}

// ---------------------------------------------------------------------------
// Checkpoints

inline void write_model(std::ostream &os, const QfmModel &model) {
    os << "qfm-model 1\n";
    os << "n_data " << model.n_data << "\n";
    os << "n_ancilla " << model.n_ancilla << "\n";
    os << "layers " << model.layers << "\n";
    os << "total_steps " << model.total_steps << "\n";
    os << "steps " << model.steps.size() << "\n";
    for (const auto &s : model.steps) {
        os << "step " << s.tau << " " << step_kind_name(s.kind) << "\n";
        os << "final_loss " << format_real(s.final_loss) << "\n";
        os << "threshold " << format_real(s.threshold) << "\n";
        os << "converged " << (s.converged ? 1 : 0) << "\n";
        os << "updates " << s.updates << "\n";
        os << "params " << s.params.size() << "\n";
        for (Real p : s.params) {
            os << format_real(p) << "\n";
        }
        write_circuit(os, s.circuit);
    }
}

[[nodiscard]] inline std::string model_to_text(const QfmModel &model) {
    std::ostringstream os;
    write_model(os, model);
    return os.str();
}

[[nodiscard]] inline QfmModel read_model(std::istream &is) {
    auto next = [&is]() {
        std::string t;
        QFM_REQUIRE(static_cast<bool>(is >> t), "read_model: unexpected end of input");
        return t;
    };
    auto expect = [&](const std::string &key) {
        const auto t = next();
        QFM_REQUIRE(t == key, "read_model: expected '" + key + "', found '" + t + "'");
    };
    auto value_of = [&](const std::string &key) {
        expect(key);
        return next();
    };
    expect("qfm-model");
    QFM_REQUIRE(next() == "1", "read_model: unsupported version");
    QfmModel m;
    m.n_data = parse_index(value_of("n_data"));
    m.n_ancilla = parse_index(value_of("n_ancilla"));
    m.layers = parse_index(value_of("layers"));
    m.total_steps = parse_index(value_of("total_steps"));
    const std::size_t count = parse_index(value_of("steps"));
    for (std::size_t k = 0; k < count; ++k) {
        QfmStep s;
        s.tau = parse_index(value_of("step"));
        const auto kind = next();
        QFM_REQUIRE(kind == "UNITARY" || kind == "PARTIALLY_MEASURED", "read_model: unknown step kind " + kind);
        s.kind = kind == "UNITARY" ? StepKind::UNITARY : StepKind::PARTIALLY_MEASURED;
        s.final_loss = parse_real(value_of("final_loss"));
        s.threshold = parse_real(value_of("threshold"));
        s.converged = parse_index(value_of("converged")) != 0;
        s.updates = parse_index(value_of("updates"));
        const std::size_t np = parse_index(value_of("params"));
        s.params.resize(np);
        for (auto &p : s.params) {
            p = parse_real(next());
        }
        s.circuit = read_circuit(is);
        m.steps.push_back(std::move(s));
    }
    m.validate();
    return m;
}

[[nodiscard]] inline QfmModel model_from_text(const std::string &text) {
    std::istringstream is(text);
    return read_model(is);
}

} // namespace qfm
