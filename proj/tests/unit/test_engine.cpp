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
#include "qfm/engine.hpp"

using namespace qfm;
using Catch::Approx;

namespace {

std::vector<Real> random_params(std::size_t k, Rng &rng) {
    std::vector<Real> p(k);
    for (auto &v : p) {
        v = rng.uniform(-kPi, kPi);
    }
    return p;
}

std::vector<StateVector> haar_states(std::size_t n, std::size_t m, Rng &rng) {
    std::vector<StateVector> out;
    for (std::size_t k = 0; k < m; ++k) {
        out.push_back(haar_random_state(n, rng));
    }
    return out;
}

Real max_abs_diff(const std::vector<Real> &a, const std::vector<Real> &b) {
    Real d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d = std::max(d, std::abs(a[i] - b[i]));
    }
    return d;
}

} // namespace

TEST_CASE("ancilla preparation is R_y(tau pi / T) on every ancilla") {
    const auto a = ancilla_prep(0, 10, 2);
    CHECK(std::abs(a[0]) == Approx(1.0));
    const auto b = ancilla_prep(10, 10, 1);
    CHECK(std::abs(b[1]) == Approx(1.0));
    const auto c = ancilla_prep(5, 10, 1);
    CHECK(std::norm(c[0]) == Approx(0.5));
    CHECK_THROWS_AS(ancilla_prep(11, 10, 1), Error);
}

TEST_CASE("ensemble seeds are derived per trajectory") {
    Rng rng(1);
    const auto e1 = Ensemble::make(haar_states(1, 5, rng), 42);
    const auto e2 = Ensemble::make(e1.states, 42);
    const auto e3 = Ensemble::make(e1.states, 43);
    CHECK(e1.seeds == e2.seeds);
    CHECK(e1.seeds != e3.seeds);
    std::set<std::uint64_t> unique(e1.seeds.begin(), e1.seeds.end());
    CHECK(unique.size() == 5);
}

TEST_CASE("property: adjoint, parameter-shift and finite-difference gradients agree") {
    Rng rng(7);
    const auto inputs = haar_states(2, 4, rng);
    const auto targets = haar_states(2, 4, rng);
    SECTION("fidelity, unitary circuit") {
        StepObjective obj(build_eha(2, 2), LossSpec::fidelity(targets), inputs);
        const auto x = random_params(obj.n_params(), rng);
        const auto adj = obj.gradient(x, GradientMethod::ADJOINT);
        CHECK(max_abs_diff(adj, obj.gradient(x, GradientMethod::PARAMETER_SHIFT)) < 1e-5);
        CHECK(max_abs_diff(adj, obj.gradient(x, GradientMethod::FINITE_DIFFERENCE)) < 1e-5);
    }
    SECTION("energy, measured circuit") {
        StepObjective obj(build_eha_with_ancilla(2, 1, 2), LossSpec::energy(tfim(2, 0.7, TfimSign::main_text)), inputs,
                          ancilla_prep(3, 10, 1));
        const auto x = random_params(obj.n_params(), rng);
        const auto adj = obj.gradient(x, GradientMethod::ADJOINT);
        CHECK(max_abs_diff(adj, obj.gradient(x, GradientMethod::PARAMETER_SHIFT)) < 1e-5);
        CHECK(max_abs_diff(adj, obj.gradient(x, GradientMethod::FINITE_DIFFERENCE)) < 1e-5);
    }
    SECTION("entropy, measured circuit (no parameter shift: nonlinear loss)") {
        StepObjective obj(build_eha_with_ancilla(2, 1, 2), LossSpec::entropy(0.4), inputs, ancilla_prep(4, 10, 1));
        const auto x = random_params(obj.n_params(), rng);
        CHECK(max_abs_diff(obj.gradient(x, GradientMethod::ADJOINT),
                           obj.gradient(x, GradientMethod::FINITE_DIFFERENCE)) < 1e-5);
        CHECK_THROWS_AS(obj.gradient(x, GradientMethod::PARAMETER_SHIFT), Error);
    }
}

TEST_CASE("objective value equals the branch-averaged loss of the sampled circuit") {
    Rng rng(8);
    const auto inputs = haar_states(1, 3, rng);
    const auto prog = build_eha_with_ancilla(1, 1, 2);
    const auto anc = ancilla_prep(2, 5, 1);
    const auto spec = LossSpec::energy(Hamiltonian{1, {PauliString("Z")}});
    StepObjective obj(prog, spec, inputs, anc);
    const auto x = random_params(obj.n_params(), rng);
    Real expect = 0.0;
    for (const auto &s : inputs) {
        for (const auto &b : enumerate_branches(prog, x, tensor(anc, s))) {
            expect += b.probability * expectation(b.state, spec.hamiltonian.terms);
        }
    }
    CHECK(obj.value(x) == Approx(expect / 3.0).margin(1e-12));
}

TEST_CASE("ENERGY inputs are reduced spectrally without changing the loss") {
    Rng rng(9);
    std::vector<StateVector> inputs;
    for (int k = 0; k < 40; ++k) {
        inputs.push_back(basis_state(3, k % 2 ? 7 : 0));
    }
    const auto spec = LossSpec::energy(tfim(3, 1.0, TfimSign::supplement));
    StepObjective obj(build_eha(3, 2), spec, inputs);
    CHECK(obj.n_items() <= 2);
    const auto x = random_params(obj.n_params(), rng);
    const auto prog = build_eha(3, 2);
    Real ref = 0.0;
    for (const auto &s : inputs) {
        auto t = s;
        apply_unitary_program(prog, x, t);
        ref += expectation(t, spec.hamiltonian.terms);
    }
    CHECK(obj.value(x) == Approx(ref / 40.0).margin(1e-12));
}

TEST_CASE("property: trace-norm risk equals its closed form") {
    Rng rng(10);
    for (std::size_t n = 1; n <= 3; ++n) {
        const auto a = Ensemble::make(haar_states(n, 6, rng), 1);
        const auto b = Ensemble::make(haar_states(n, 6, rng), 2);
        Real ref = 0.0;
        for (std::size_t k = 0; k < 6; ++k) {
            Eigen::Map<const Eigen::VectorXcd> va(a.states[k].amplitudes().data(), 1 << n);
            Eigen::Map<const Eigen::VectorXcd> vb(b.states[k].amplitudes().data(), 1 << n);
            const oracle::M diff = va * va.adjoint() - vb * vb.adjoint();
            Eigen::SelfAdjointEigenSolver<oracle::M> es(diff);
            const Real tn = es.eigenvalues().cwiseAbs().sum();
            ref += tn * tn;
        }
        CHECK(trace_norm_risk(a, b) == Approx(ref / 24.0).margin(1e-10));
    }
    const auto a = Ensemble::make({basis_state(1, 0)}, 0);
    CHECK(trace_norm_risk(a, a) == Approx(0.0).margin(1e-12));
}

TEST_CASE("Adam minimizes a quadratic") {
    AdamConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.max_iterations = 3000;
    const auto res = adam_minimize(
        [](std::span<const Real> x, std::span<Real> g) {
            g[0] = 2.0 * (x[0] - 1.5);
            g[1] = 4.0 * (x[1] + 0.5);
            return (x[0] - 1.5) * (x[0] - 1.5) + 2.0 * (x[1] + 0.5) * (x[1] + 0.5);
        },
        {0.0, 0.0}, cfg);
    CHECK(res.params[0] == Approx(1.5).margin(1e-3));
    CHECK(res.params[1] == Approx(-0.5).margin(1e-3));
    CHECK(res.loss < 1e-5);
}

TEST_CASE("Adam reports divergence") {
    CHECK_THROWS_AS(adam_minimize([](std::span<const Real>, std::span<Real>) { return std::nan(""); }, {0.0},
                                  AdamConfig{}),
                    Divergence);
}

TEST_CASE("a single-qubit rotation flow trains to the threshold and round-trips") {
    Rng rng(12);
    const auto s0 = haar_states(1, 20, rng);
    TrainConfig cfg;
    cfg.n_ancilla = 0;
    cfg.layers = 3;
    cfg.total_steps = 3;
    cfg.adam.window = 0;
    cfg.seed = 5;
    auto targets = [&](std::size_t tau, const Ensemble &) {
        std::vector<StateVector> t;
        for (const auto &s : s0) {
            auto r = s;
            r.apply_pauli_rotation(PauliString("Z"), 0.4 * static_cast<Real>(tau));
            t.push_back(r);
        }
        return LossSpec::fidelity(t);
    };
    const auto run = train_model(Ensemble::make(s0, 5), targets, 1, cfg);
    REQUIRE(run.model.steps.size() == 3);
    CHECK(run.model.converged());
    for (const auto &st : run.model.steps) {
        CHECK(st.kind == StepKind::UNITARY);
        CHECK(st.final_loss <= st.threshold);
    }
    const auto again = model_from_text(model_to_text(run.model));
    CHECK(model_to_text(again) == model_to_text(run.model));
    const auto regen = generate(again, Ensemble::make(s0, 5), 3);
    for (std::size_t m = 0; m < s0.size(); ++m) {
        CHECK(fidelity(regen[3].states[m], run.generated[3].states[m]) == Approx(1.0).margin(1e-10));
    }
}

TEST_CASE("acceptance is monotone and non-convergence is flagged") {
    Rng rng(13);
    const auto s0 = haar_states(2, 8, rng);
    TrainConfig cfg;
    cfg.n_ancilla = 1;
    cfg.layers = 1;
    cfg.total_steps = 2;
    cfg.adam.max_iterations = 5;
    cfg.entropy_threshold = 1e-12; // unreachable in five updates
    const auto run = train_model(
        Ensemble::make(s0, 1), [](std::size_t tau, const Ensemble &) { return LossSpec::entropy(0.5 * tau); }, 2, cfg);
    for (const auto &st : run.model.steps) {
        CHECK(st.final_loss > st.threshold);
        CHECK_FALSE(st.converged);
    }
    CHECK_FALSE(run.model.converged());
}

TEST_CASE("restarts never worsen a step") {
    Rng rng(14);
    const auto s0 = haar_states(2, 6, rng);
    TrainConfig cfg;
    cfg.n_ancilla = 1;
    cfg.layers = 2;
    cfg.total_steps = 1;
    cfg.adam.max_iterations = 30;
    cfg.entropy_threshold = 1e-12;
    auto spec = [](std::size_t, const Ensemble &) { return LossSpec::entropy(0.7); };
    const auto base = train_model(Ensemble::make(s0, 1), spec, 2, cfg);
    cfg.restarts = 2;
    const auto more = train_model(Ensemble::make(s0, 1), spec, 2, cfg);
    CHECK(more.model.steps[0].final_loss <= base.model.steps[0].final_loss);
    CHECK(more.model.steps[0].updates > base.model.steps[0].updates);
}

TEST_CASE("warm start continues the previous step") {
    // every step applies the same Z rotation, so step 1's parameters already solve step 2
    Rng rng(18);
    const auto s0 = haar_states(1, 10, rng);
    TrainConfig cfg;
    cfg.n_ancilla = 0;
    cfg.layers = 2;
    cfg.total_steps = 2;
    cfg.adam.window = 0;
    cfg.fidelity_threshold = 1e-4;
    auto targets = [&](std::size_t tau, const Ensemble &) {
        std::vector<StateVector> t;
        for (const auto &s : s0) {
            auto r = s;
            r.apply_pauli_rotation(PauliString("Z"), 0.4 * static_cast<Real>(tau));
            t.push_back(r);
        }
        return LossSpec::fidelity(t);
    };
    const auto first = train_model(Ensemble::make(s0, 1), targets, 1, cfg);
    REQUIRE(first.model.steps[0].converged);
    QfmModel model = first.model;
    model.steps.resize(1);
    cfg.adam.max_iterations = 1;
    const auto fresh = train_step(model, 2, targets(2, first.generated[1]), first.generated[1], cfg);
    cfg.warm_start = true;
    const auto warm = train_step(model, 2, targets(2, first.generated[1]), first.generated[1], cfg);
    CHECK_FALSE(fresh.converged);
    CHECK(warm.converged);
    CHECK(warm.kind == first.model.steps[0].kind);
    CHECK(warm.updates == 1);
}

TEST_CASE("forced circuit kinds") {
    Rng rng(15);
    const auto s0 = haar_states(1, 4, rng);
    TrainConfig cfg;
    cfg.n_ancilla = 1;
    cfg.layers = 1;
    cfg.total_steps = 2;
    cfg.adam.max_iterations = 5;
    auto spec = [](std::size_t, const Ensemble &) { return LossSpec::energy(Hamiltonian{1, {PauliString("Z")}}); };
    cfg.force = TrainConfig::Force::MEASURED_ONLY;
    for (const auto &st : train_model(Ensemble::make(s0, 1), spec, 1, cfg).model.steps) {
        CHECK(st.kind == StepKind::PARTIALLY_MEASURED);
    }
    cfg.force = TrainConfig::Force::UNITARY_ONLY;
    for (const auto &st : train_model(Ensemble::make(s0, 1), spec, 1, cfg).model.steps) {
        CHECK(st.kind == StepKind::UNITARY);
    }
}

TEST_CASE("training is deterministic for a fixed seed") {
    Rng rng(16);
    const auto s0 = haar_states(2, 6, rng);
    TrainConfig cfg;
    cfg.n_ancilla = 1;
    cfg.layers = 2;
    cfg.total_steps = 2;
    cfg.adam.max_iterations = 20;
    cfg.seed = 3;
    auto spec = [](std::size_t tau, const Ensemble &) { return LossSpec::entropy(0.3 * tau); };
    const auto a = train_model(Ensemble::make(s0, 3), spec, 2, cfg);
    const auto b = train_model(Ensemble::make(s0, 3), spec, 2, cfg);
    CHECK(model_to_text(a.model) == model_to_text(b.model));
}
