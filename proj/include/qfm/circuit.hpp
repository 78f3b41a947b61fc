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
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "statevector.hpp"

namespace qfm {

enum class GateKind { RX, RY, RZ, XX, YY, ZZ, PAULI_ROT, H, MEASURE_Z };

[[nodiscard]] inline bool is_rotation(GateKind k) {
    return k != GateKind::H && k != GateKind::MEASURE_Z;
}

[[nodiscard]] inline const char *kind_name(GateKind k) {
    switch (k) {
    case GateKind::RX:
        return "RX";
    case GateKind::RY:
        return "RY";
    case GateKind::RZ:
        return "RZ";
    case GateKind::XX:
        return "XX";
    case GateKind::YY:
        return "YY";
    case GateKind::ZZ:
        return "ZZ";
    case GateKind::PAULI_ROT:
        return "PAULI";
    case GateKind::H:
        return "H";
    case GateKind::MEASURE_Z:
        return "MEASURE_Z";
    }
    return "?";
}

/// Rotation angle: either a fixed value (radians) or a trainable parameter.
struct AngleSource {
    bool is_param = false;
    Real value = 0.0;
    std::size_t param = 0;

    static AngleSource fixed(Real v) { return {false, v, 0}; }
    static AngleSource parameter(std::size_t idx) { return {true, 0.0, idx}; }

    [[nodiscard]] Real resolve(std::span<const Real> params) const {
        return is_param ? params[param] : value;
    }

    bool operator==(const AngleSource &o) const {
        return is_param == o.is_param && (is_param ? param == o.param
                                                   : std::bit_cast<std::uint64_t>(value) ==
                                                         std::bit_cast<std::uint64_t>(o.value));
    }
};

/**
 * @brief One instruction of a circuit program.
 *
 * Rotations implement exp(-i theta P / 2) with P the Pauli generator on
 * `qubits` (single Pauli for RX/RY/RZ, doubled for XX/YY/ZZ, explicit word for
 * PAULI_ROT). A rotation with `cond_slot` set is classically conditioned:
 * its angle is multiplied by (-1)^r where r is the recorded outcome in that
 * slot. MEASURE_Z writes its outcome to `slot`.
 */
struct GateOp {
    GateKind kind = GateKind::RX;
    std::vector<std::size_t> qubits;
    std::string pauli; ///< word over `qubits` for PAULI_ROT
    AngleSource angle;
    std::optional<std::size_t> cond_slot;
    std::size_t slot = 0;
    PauliMasks masks; ///< generator masks in register coordinates

    [[nodiscard]] std::string generator_word() const {
        switch (kind) {
        case GateKind::RX:
            return "X";
        case GateKind::RY:
            return "Y";
        case GateKind::RZ:
            return "Z";
        case GateKind::XX:
            return "XX";
        case GateKind::YY:
            return "YY";
        case GateKind::ZZ:
            return "ZZ";
        default:
            return pauli;
        }
    }

    void finalize() {
        if (!is_rotation(kind)) {
            return;
        }
        const auto word = generator_word();
        QFM_REQUIRE(word.size() == qubits.size(), "GateOp: generator size mismatch");
        masks = {};
        for (std::size_t k = 0; k < qubits.size(); ++k) {
            const std::uint64_t bit = std::uint64_t{1} << qubits[k];
            QFM_REQUIRE(!((masks.flip | masks.phase) & bit), "GateOp: repeated qubit");
            switch (word[k]) {
            case 'X':
                masks.flip |= bit;
                break;
            case 'Y':
                masks.flip |= bit;
                masks.phase |= bit;
                ++masks.n_y;
                break;
            case 'Z':
                masks.phase |= bit;
                break;
            default:
                throw Error("GateOp: generator must not contain identities");
            }
        }
    }

    static GateOp rotation(GateKind k, std::vector<std::size_t> qs, AngleSource a,
                           std::optional<std::size_t> cond = std::nullopt) {
        GateOp g;
        g.kind = k;
        g.qubits = std::move(qs);
        g.angle = a;
        g.cond_slot = cond;
        const std::size_t expect = (k == GateKind::XX || k == GateKind::YY || k == GateKind::ZZ) ? 2 : 1;
        QFM_REQUIRE(k == GateKind::PAULI_ROT || g.qubits.size() == expect, "GateOp: wrong qubit count");
        g.finalize();
        return g;
    }

    static GateOp pauli_rotation(std::string word, std::vector<std::size_t> qs, AngleSource a,
                                 std::optional<std::size_t> cond = std::nullopt) {
        GateOp g;
        g.kind = GateKind::PAULI_ROT;
        g.pauli = std::move(word);
        g.qubits = std::move(qs);
        g.angle = a;
        g.cond_slot = cond;
        QFM_REQUIRE(!g.qubits.empty(), "GateOp: empty Pauli rotation");
        g.finalize();
        return g;
    }

    static GateOp hadamard(std::size_t q) {
        GateOp g;
        g.kind = GateKind::H;
        g.qubits = {q};
        return g;
    }

    static GateOp measure(std::size_t q, std::size_t slot) {
        GateOp g;
        g.kind = GateKind::MEASURE_Z;
        g.qubits = {q};
        g.slot = slot;
        return g;
    }

    bool operator==(const GateOp &o) const {
        return kind == o.kind && qubits == o.qubits && pauli == o.pauli &&
               (!is_rotation(kind) || angle == o.angle) && cond_slot == o.cond_slot &&
               (kind != GateKind::MEASURE_Z || slot == o.slot);
    }
};

/// Ordered gate list over data qubits [0, n_data) and ancillas
/// [n_data, n_data + n_ancilla).
struct CircuitProgram {
    std::size_t n_data = 0;
    std::size_t n_ancilla = 0;
    std::size_t n_params = 0;
    std::vector<GateOp> ops;

    [[nodiscard]] std::size_t n_qubits() const { return n_data + n_ancilla; }

    [[nodiscard]] std::size_t n_measurements() const {
        std::size_t k = 0;
        for (const auto &op : ops) {
            k += op.kind == GateKind::MEASURE_Z ? 1 : 0;
        }
        return k;
    }

    [[nodiscard]] bool has_measurement() const { return n_measurements() > 0; }

    /// Checks qubit/parameter ranges and that every conditioned rotation
    /// reads a slot written by an earlier measurement.
    void validate() const {
        std::vector<bool> filled;
        for (const auto &op : ops) {
            for (auto q : op.qubits) {
                QFM_REQUIRE(q < n_qubits(), "CircuitProgram: qubit index out of range");
            }
            if (is_rotation(op.kind) && op.angle.is_param) {
                QFM_REQUIRE(op.angle.param < n_params, "CircuitProgram: parameter index out of range");
            }
            if (op.kind == GateKind::MEASURE_Z) {
                if (filled.size() <= op.slot) {
                    filled.resize(op.slot + 1, false);
                }
                filled[op.slot] = true;
            }
            if (op.cond_slot) {
                QFM_REQUIRE(*op.cond_slot < filled.size() && filled[*op.cond_slot],
                            "CircuitProgram: unresolved condition reference");
            }
        }
    }

    bool operator==(const CircuitProgram &) const = default;
};

struct MeasurementRecord {
    std::vector<int> outcomes;
    std::vector<Real> probs;

    bool operator==(const MeasurementRecord &) const = default;
};

// ---------------------------------------------------------------------------
// Builders

namespace detail {

inline void append_rotation_triplet(CircuitProgram &p, std::size_t q) {
    for (auto k : {GateKind::RX, GateKind::RY, GateKind::RZ}) {
        p.ops.push_back(GateOp::rotation(k, {q}, AngleSource::parameter(p.n_params++)));
    }
}

inline void append_coupling_triplet(CircuitProgram &p, std::size_t a, std::size_t b) {
    for (auto k : {GateKind::XX, GateKind::YY, GateKind::ZZ}) {
        p.ops.push_back(GateOp::rotation(k, {a, b}, AngleSource::parameter(p.n_params++)));
    }
}

inline void append_eha_layer(CircuitProgram &p, std::size_t n_data) {
    for (std::size_t q = 0; q < n_data; ++q) {
        append_rotation_triplet(p, q);
    }
    for (std::size_t q = 0; q + 1 < n_data; ++q) {
        append_coupling_triplet(p, q, q + 1);
    }
}

} // namespace detail

/// Entanglement-varied hardware-efficient ansatz on an open chain.
/// Each layer: RX, RY, RZ on every qubit, then XX, YY, ZZ on each
/// nearest-neighbour pair in index order.
[[nodiscard]] inline CircuitProgram build_eha(std::size_t n_data, std::size_t layers) {
    QFM_REQUIRE(n_data >= 1, "build_eha: need at least one qubit");
    QFM_REQUIRE(layers >= 1, "build_eha: need at least one layer");
    CircuitProgram p;
    p.n_data = n_data;
    for (std::size_t l = 0; l < layers; ++l) {
        detail::append_eha_layer(p, n_data);
    }
    return p;
}

/// EHA with an ancilla chain. Ancilla 0 couples to the last data qubit and
/// ancilla k to ancilla k-1; every ancilla is Z-measured after the last layer.
[[nodiscard]] inline CircuitProgram build_eha_with_ancilla(std::size_t n_data, std::size_t n_ancilla,
                                                           std::size_t layers) {
    QFM_REQUIRE(n_data >= 1, "build_eha_with_ancilla: need at least one data qubit");
    QFM_REQUIRE(n_ancilla >= 1, "build_eha_with_ancilla: need at least one ancilla (use build_eha)");
    QFM_REQUIRE(layers >= 1, "build_eha_with_ancilla: need at least one layer");
    CircuitProgram p;
    p.n_data = n_data;
    p.n_ancilla = n_ancilla;
    for (std::size_t l = 0; l < layers; ++l) {
        detail::append_eha_layer(p, n_data);
        for (std::size_t a = 0; a < n_ancilla; ++a) {
            detail::append_rotation_triplet(p, n_data + a);
        }
        for (std::size_t a = 0; a < n_ancilla; ++a) {
            detail::append_coupling_triplet(p, n_data + a - 1, n_data + a);
        }
    }
    for (std::size_t a = 0; a < n_ancilla; ++a) {
        p.ops.push_back(GateOp::measure(n_data + a, a));
    }
    return p;
}

/// exp(-i h_ij t) with h_ij = (J/4) sum_k lambda_k sigma_k^i sigma_k^j, as
/// XX, YY, ZZ rotations of angle J lambda_k t / 2. The terms commute, so the
/// product is exact.
[[nodiscard]] inline CircuitProgram build_hij_trotter(std::size_t i, std::size_t j, Real coupling,
                                                      const std::array<Real, 3> &lambda, Real t,
                                                      std::size_t n_qubits = 0) {
    QFM_REQUIRE(i != j, "build_hij_trotter: qubits must differ");
    CircuitProgram p;
    p.n_data = std::max(n_qubits, std::max(i, j) + 1);
    const GateKind kinds[3] = {GateKind::XX, GateKind::YY, GateKind::ZZ};
    for (int k = 0; k < 3; ++k) {
        p.ops.push_back(GateOp::rotation(kinds[k], {i, j}, AngleSource::fixed(0.5 * coupling * lambda[k] * t)));
    }
    return p;
}

/// Appends the ops of `tail` after those of `head` (fixed-angle circuits only
/// for the parameter space of `tail`, which is shifted behind `head`'s).
[[nodiscard]] inline CircuitProgram concat(CircuitProgram head, const CircuitProgram &tail) {
    QFM_REQUIRE(head.n_qubits() >= tail.n_qubits() || head.ops.empty(), "concat: register mismatch");
    head.n_data = std::max(head.n_data, tail.n_data);
    head.n_ancilla = std::max(head.n_ancilla, tail.n_ancilla);
    const std::size_t shift = head.n_params;
    for (auto op : tail.ops) {
        if (is_rotation(op.kind) && op.angle.is_param) {
            op.angle.param += shift;
        }
        head.ops.push_back(std::move(op));
    }
    head.n_params += tail.n_params;
    return head;
}

/// Reversed program with negated, bound angles. Rejects measurement.
[[nodiscard]] inline CircuitProgram inverse(const CircuitProgram &prog, std::span<const Real> params) {
    QFM_REQUIRE(params.size() == prog.n_params, "inverse: parameter count mismatch");
    CircuitProgram inv;
    inv.n_data = prog.n_data;
    inv.n_ancilla = prog.n_ancilla;
    for (auto it = prog.ops.rbegin(); it != prog.ops.rend(); ++it) {
        QFM_REQUIRE(it->kind != GateKind::MEASURE_Z && !it->cond_slot, "inverse: program contains measurement");
        GateOp op = *it;
        if (is_rotation(op.kind)) {
            op.angle = AngleSource::fixed(-it->angle.resolve(params));
        }
        inv.ops.push_back(std::move(op));
    }
    return inv;
}

// ---------------------------------------------------------------------------
// Execution

[[nodiscard]] inline const Mat2 &hadamard_matrix() {
    static const Mat2 h = (Mat2() << 1.0, 1.0, 1.0, -1.0).finished() / std::sqrt(2.0);
    return h;
}

namespace detail {

[[nodiscard]] inline Real effective_angle(const GateOp &op, std::span<const Real> params,
                                          const std::vector<int> &outcomes) {
    Real theta = op.angle.resolve(params);
    if (op.cond_slot) {
        QFM_REQUIRE(*op.cond_slot < outcomes.size() && outcomes[*op.cond_slot] >= 0,
                    "run_circuit: unresolved condition reference");
        if (outcomes[*op.cond_slot] == 1) {
            theta = -theta;
        }
    }
    return theta;
}

/// Applies a unitary (non-measurement) op in place.
inline void apply_unitary_op(StateVector &s, const GateOp &op, std::span<const Real> params,
                             const std::vector<int> &outcomes) {
    if (op.kind == GateKind::H) {
        s.apply_1q_unchecked(op.qubits[0], hadamard_matrix());
    } else {
        s.apply_pauli_rotation(op.masks, effective_angle(op, params, outcomes));
    }
}

inline void check_run_inputs(const CircuitProgram &prog, std::span<const Real> params, const StateVector &input) {
    QFM_REQUIRE(params.size() == prog.n_params, "run_circuit: parameter count mismatch");
    QFM_REQUIRE(input.n_qubits() == prog.n_qubits(), "run_circuit: input dimension mismatch");
}

/// True when every ancilla's last touching op is a measurement.
[[nodiscard]] inline bool ancillas_collapsed(const CircuitProgram &prog) {
    if (prog.n_ancilla == 0) {
        return false;
    }
    std::vector<int> last(prog.n_qubits(), -1);
    for (std::size_t i = 0; i < prog.ops.size(); ++i) {
        for (auto q : prog.ops[i].qubits) {
            last[q] = static_cast<int>(i);
        }
    }
    for (std::size_t a = prog.n_data; a < prog.n_qubits(); ++a) {
        if (last[a] < 0 || prog.ops[static_cast<std::size_t>(last[a])].kind != GateKind::MEASURE_Z) {
            return false;
        }
    }
    return true;
}

/// Data-qubit block of a state whose ancillas sit in basis state `pattern`.
[[nodiscard]] inline StateVector data_block(const StateVector &s, std::size_t n_data, std::size_t pattern) {
    const std::size_t d = dim_of(n_data);
    std::vector<Complex> a(s.amplitudes().begin() + static_cast<std::ptrdiff_t>(pattern * d),
                           s.amplitudes().begin() + static_cast<std::ptrdiff_t>((pattern + 1) * d));
    return StateVector::from_amplitudes(std::move(a), true);
}

[[nodiscard]] inline std::size_t ancilla_pattern(const StateVector &s, std::size_t n_data) {
    const std::size_t d = dim_of(n_data);
    std::size_t best = 0;
    Real best_w = -1.0;
    for (std::size_t p = 0; p < s.dim() / d; ++p) {
        Real w = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            w += std::norm(s[p * d + i]);
        }
        if (w > best_w) {
            best_w = w;
            best = p;
        }
    }
    return best;
}

} // namespace detail

struct RunResult {
    StateVector state;
    MeasurementRecord record;
    /// True when `state` holds only the data qubits (all ancillas were
    /// measured last); otherwise it is the full register.
    bool data_only = false;
};

/**
 * @brief Executes a program on one input, sampling every measurement.
 *
 * Conditioned rotations read the outcome recorded by the referenced
 * measurement. When all ancillas end in a measured basis state the result is
 * restricted to the data qubits.
 */
[[nodiscard]] inline RunResult run_circuit(const CircuitProgram &prog, std::span<const Real> params,
                                           StateVector input, Rng &rng) {
    detail::check_run_inputs(prog, params, input);
    RunResult res{std::move(input), {}, false};
    std::vector<int> outcomes;
    for (const auto &op : prog.ops) {
        if (op.kind == GateKind::MEASURE_Z) {
            auto m = measure_qubit(res.state, op.qubits[0], rng);
            if (outcomes.size() <= op.slot) {
                outcomes.resize(op.slot + 1, -1);
                res.record.probs.resize(op.slot + 1, 0.0);
            }
            outcomes[op.slot] = m.outcome;
            res.record.probs[op.slot] = m.prob;
            res.state = std::move(m.state);
        } else {
            detail::apply_unitary_op(res.state, op, params, outcomes);
        }
    }
    res.record.outcomes = outcomes;
    if (detail::ancillas_collapsed(prog)) {
        res.state = detail::data_block(res.state, prog.n_data, detail::ancilla_pattern(res.state, prog.n_data));
        res.data_only = true;
    }
    return res;
}

struct Branch {
    MeasurementRecord record;
    Real probability = 1.0;
    StateVector state;
    bool data_only = false;
};

inline constexpr std::size_t kMaxEnumeratedMeasurements = 12;

/// Every measurement branch with its exact Born probability. Branches whose
/// probability is below 1e-12 are dropped (their state is undefined).
[[nodiscard]] inline std::vector<Branch> enumerate_branches(const CircuitProgram &prog, std::span<const Real> params,
                                                            const StateVector &input) {
    detail::check_run_inputs(prog, params, input);
    QFM_REQUIRE(prog.n_measurements() <= kMaxEnumeratedMeasurements, "enumerate_branches: too many measurements");
    struct Partial {
        StateVector state;
        std::vector<int> outcomes;
        std::vector<Real> probs;
        Real probability;
    };
    std::vector<Partial> live{{input, {}, {}, 1.0}};
    for (const auto &op : prog.ops) {
        if (op.kind != GateKind::MEASURE_Z) {
            for (auto &b : live) {
                detail::apply_unitary_op(b.state, op, params, b.outcomes);
            }
            continue;
        }
        std::vector<Partial> next;
        for (auto &b : live) {
            const Real p1 = prob_one(b.state, op.qubits[0]);
            for (int r = 0; r < 2; ++r) {
                const Real pr = r == 1 ? p1 : 1.0 - p1;
                if (pr <= kBranchTol) {
                    continue;
                }
                auto proj = project_qubit(b.state, op.qubits[0], r);
                Partial c{std::move(proj.state), b.outcomes, b.probs, b.probability * pr};
                if (c.outcomes.size() <= op.slot) {
                    c.outcomes.resize(op.slot + 1, -1);
                    c.probs.resize(op.slot + 1, 0.0);
                }
                c.outcomes[op.slot] = r;
                c.probs[op.slot] = pr;
                next.push_back(std::move(c));
            }
        }
        live = std::move(next);
    }
    const bool restrict = detail::ancillas_collapsed(prog);
    std::vector<Branch> out;
    out.reserve(live.size());
    for (auto &b : live) {
        Branch br{{b.outcomes, b.probs}, b.probability, std::move(b.state), false};
        if (restrict) {
            br.state = detail::data_block(br.state, prog.n_data, detail::ancilla_pattern(br.state, prog.n_data));
            br.data_only = true;
        }
        out.push_back(std::move(br));
    }
    return out;
}

/// Applies a measurement-free program in place.
inline void apply_unitary_program(const CircuitProgram &prog, std::span<const Real> params, StateVector &s) {
    QFM_REQUIRE(params.size() == prog.n_params, "apply_unitary_program: parameter count mismatch");
    QFM_REQUIRE(s.n_qubits() == prog.n_qubits(), "apply_unitary_program: dimension mismatch");
    const std::vector<int> none;
    for (const auto &op : prog.ops) {
        QFM_REQUIRE(op.kind != GateKind::MEASURE_Z && !op.cond_slot, "apply_unitary_program: program measures");
        detail::apply_unitary_op(s, op, params, none);
    }
}

/// Dense unitary of a measurement-free program (column j = U|j>).
[[nodiscard]] inline MatX circuit_unitary(const CircuitProgram &prog, std::span<const Real> params) {
    const std::size_t d = dim_of(prog.n_qubits());
    MatX u(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < d; ++j) {
        auto s = basis_state(prog.n_qubits(), j);
        apply_unitary_program(prog, params, s);
        for (std::size_t i = 0; i < d; ++i) {
            u(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = s[i];
        }
    }
    return u;
}

// ---------------------------------------------------------------------------
// Text serialization
//
//   qfm-circuit 1
//   n_data 2
//   n_ancilla 1
//   n_params 15
//   RX 0 p0              parameter reference
//   XX 1 2 f0.25         fixed angle (%.17g)
//   COND_RZ 0 f1.5 r0    conditioned on measurement slot 0
//   PAULI ZXX 11 2 7 f0.5
//   H 2
//   MEASURE_Z 2 r0
//   end

[[nodiscard]] inline std::string format_real(Real v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

[[nodiscard]] inline Real parse_real(const std::string &tok) {
    Real v = 0.0;
    const auto *first = tok.data();
    const auto *last = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    QFM_REQUIRE(ec == std::errc() && ptr == last, "parse_real: bad number '" + tok + "'");
    return v;
}

[[nodiscard]] inline std::size_t parse_index(const std::string &tok) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    QFM_REQUIRE(ec == std::errc() && ptr == tok.data() + tok.size(), "parse_index: bad index '" + tok + "'");
    return v;
}

inline void write_circuit(std::ostream &os, const CircuitProgram &p) {
    os << "qfm-circuit 1\n"
       << "n_data " << p.n_data << "\n"
       << "n_ancilla " << p.n_ancilla << "\n"
       << "n_params " << p.n_params << "\n";
    for (const auto &op : p.ops) {
        if (op.kind == GateKind::MEASURE_Z) {
            os << "MEASURE_Z " << op.qubits[0] << " r" << op.slot << "\n";
            continue;
        }
        if (op.cond_slot) {
            os << "COND_";
        }
        os << kind_name(op.kind);
        if (op.kind == GateKind::PAULI_ROT) {
            os << " " << op.pauli;
        }
        for (auto q : op.qubits) {
            os << " " << q;
        }
        if (is_rotation(op.kind)) {
            os << " " << (op.angle.is_param ? "p" + std::to_string(op.angle.param) : "f" + format_real(op.angle.value));
        }
        if (op.cond_slot) {
            os << " r" << *op.cond_slot;
        }
        os << "\n";
    }
    os << "end\n";
}

[[nodiscard]] inline std::string circuit_to_text(const CircuitProgram &p) {
    std::ostringstream os;
    write_circuit(os, p);
    return os.str();
}

/// Reads one circuit block (through its "end" line) from `is`.
[[nodiscard]] inline CircuitProgram read_circuit(std::istream &is) {
    CircuitProgram p;
    std::string line;
    auto next_line = [&]() -> std::string {
        while (std::getline(is, line)) {
            if (!line.empty() && line[0] != '#') {
                return line;
            }
        }
        throw Error("read_circuit: unexpected end of input");
    };
    auto expect_kv = [&](const std::string &key) {
        std::istringstream ls(next_line());
        std::string k, v;
        ls >> k >> v;
        QFM_REQUIRE(k == key, "read_circuit: expected '" + key + "'");
        return v;
    };
    QFM_REQUIRE(expect_kv("qfm-circuit") == "1", "read_circuit: unsupported version");
    p.n_data = parse_index(expect_kv("n_data"));
    p.n_ancilla = parse_index(expect_kv("n_ancilla"));
    p.n_params = parse_index(expect_kv("n_params"));
    for (;;) {
        std::istringstream ls(next_line());
        std::vector<std::string> tok;
        for (std::string t; ls >> t;) {
            tok.push_back(t);
        }
        QFM_REQUIRE(!tok.empty(), "read_circuit: empty line");
        if (tok[0] == "end") {
            break;
        }
        std::string kw = tok[0];
        std::optional<std::size_t> cond;
        if (kw.rfind("COND_", 0) == 0) {
            kw = kw.substr(5);
            QFM_REQUIRE(tok.back().size() > 1 && tok.back()[0] == 'r', "read_circuit: conditioned gate needs r<slot>");
            cond = parse_index(tok.back().substr(1));
            tok.pop_back();
        }
        auto angle_of = [&](const std::string &t) {
            QFM_REQUIRE(t.size() > 1 && (t[0] == 'p' || t[0] == 'f'), "read_circuit: bad angle token '" + t + "'");
            return t[0] == 'p' ? AngleSource::parameter(parse_index(t.substr(1)))
                               : AngleSource::fixed(parse_real(t.substr(1)));
        };
        if (kw == "MEASURE_Z") {
            QFM_REQUIRE(tok.size() == 3 && tok[2][0] == 'r', "read_circuit: bad MEASURE_Z line");
            p.ops.push_back(GateOp::measure(parse_index(tok[1]), parse_index(tok[2].substr(1))));
        } else if (kw == "H") {
            QFM_REQUIRE(tok.size() == 2, "read_circuit: bad H line");
            p.ops.push_back(GateOp::hadamard(parse_index(tok[1])));
        } else if (kw == "PAULI") {
            QFM_REQUIRE(tok.size() >= 4, "read_circuit: bad PAULI line");
            const std::string word = tok[1];
            QFM_REQUIRE(tok.size() == word.size() + 3, "read_circuit: PAULI qubit count mismatch");
            std::vector<std::size_t> qs;
            for (std::size_t k = 0; k < word.size(); ++k) {
                qs.push_back(parse_index(tok[2 + k]));
            }
            p.ops.push_back(GateOp::pauli_rotation(word, qs, angle_of(tok.back()), cond));
        } else {
            GateKind k;
            if (kw == "RX") {
                k = GateKind::RX;
            } else if (kw == "RY") {
                k = GateKind::RY;
            } else if (kw == "RZ") {
                k = GateKind::RZ;
            } else if (kw == "XX") {
                k = GateKind::XX;
            } else if (kw == "YY") {
                k = GateKind::YY;
            } else if (kw == "ZZ") {
                k = GateKind::ZZ;
            } else {
                throw Error("read_circuit: unknown gate '" + kw + "'");
            }
            std::vector<std::size_t> qs;
            for (std::size_t i = 1; i + 1 < tok.size(); ++i) {
                qs.push_back(parse_index(tok[i]));
            }
            p.ops.push_back(GateOp::rotation(k, qs, angle_of(tok.back()), cond));
        }
    }
    p.validate();
    return p;
}

[[nodiscard]] inline CircuitProgram circuit_from_text(const std::string &text) {
    std::istringstream is(text);
    return read_circuit(is);
}

} // namespace qfm
