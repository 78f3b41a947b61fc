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


#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "qfm/experiments.hpp"

namespace fs = std::filesystem;
using qfm::Real;

namespace {

std::string read_file(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        throw qfm::Error("cannot read " + p.string());
    }
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::string g12(Real v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

qfm::TfimSign sign_of(const std::string &s) { return qfm::detail::parse_sign(s); }

int cmd_run(const std::string &task, const std::string &config, std::optional<std::uint64_t> seed,
            const std::string &out, bool check) {
    const auto t = qfm::parse_task(task);
    auto cfg = config.empty() ? qfm::ExperimentConfig::defaults(t) : qfm::ExperimentConfig::from_file(config, t);
    if (seed) {
        cfg.seed = *seed;
    }
    const auto rep = qfm::run_experiment(cfg);
    rep.write(out);
    std::cout << "wrote " << out << " (" << std::fixed << std::setprecision(1) << rep.seconds << " s)\n";
    if (!check) {
        return 0;
    }
    bool ok = true;
    for (const auto &c : qfm::check_report(rep.json)) {
        std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
        ok = ok && c.pass;
    }
    return ok ? 0 : 2;
}

// Recursively lists numeric differences between two JSON documents.
void diff_json(const nlohmann::json &a, const nlohmann::json &b, const std::string &path, Real tol,
               std::vector<std::string> &out) {
    if (a.is_number() && b.is_number()) {
        const Real x = a.get<Real>(), y = b.get<Real>();
        if (!(std::abs(x - y) <= tol) && !(std::isnan(x) && std::isnan(y))) {
            out.push_back(path + ": " + g12(x) + " vs " + g12(y));
        }
        return;
    }
    if (a.type() != b.type()) {
        out.push_back(path + ": type differs");
        return;
    }
    if (a.is_object()) {
        for (const auto &[k, v] : a.items()) {
            if (!b.contains(k)) {
                out.push_back(path + "/" + k + ": only in first");
            } else {
                diff_json(v, b.at(k), path + "/" + k, tol, out);
            }
        }
        for (const auto &[k, v] : b.items()) {
            (void)v;
            if (!a.contains(k)) {
                out.push_back(path + "/" + k + ": only in second");
            }
        }
    } else if (a.is_array()) {
        if (a.size() != b.size()) {
            out.push_back(path + ": length " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
            return;
        }
        for (std::size_t i = 0; i < a.size(); ++i) {
            diff_json(a[i], b[i], path + "/" + std::to_string(i), tol, out);
        }
    } else if (a != b) {
        out.push_back(path + ": " + a.dump() + " vs " + b.dump());
    }
}

int cmd_compare(const fs::path &a, const fs::path &b, Real tol, bool check) {
    const auto ja = nlohmann::json::parse(read_file(a / "report.json"));
    const auto jb = nlohmann::json::parse(read_file(b / "report.json"));
    std::vector<std::string> diffs;
    diff_json(ja, jb, "", tol, diffs);
    if (ja.contains("mean_kl") && jb.contains("mean_kl")) {
        std::cout << "mean_kl " << g12(ja["mean_kl"]) << " " << g12(jb["mean_kl"]) << '\n';
    }
    for (const auto &d : diffs) {
        std::cout << "diff " << d << '\n';
    }
    std::size_t files_differ = 0;
    for (const auto &e : fs::directory_iterator(a)) {
        const auto name = e.path().filename();
        if (name == "timing.json" || name == "report.json") {
            continue;
        }
        if (!fs::exists(b / name) || read_file(e.path()) != read_file(b / name)) {
            std::cout << "file differs " << name.string() << '\n';
            ++files_differ;
        }
    }
    const bool same = diffs.empty() && files_differ == 0;
    std::cout << (same ? "identical" : "different") << '\n';
    return check && !same ? 2 : 0;
}

std::vector<Real> real_list(const std::string &s) {
    return qfm::detail::parse_vector<Real>(s, qfm::parse_real);
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Quantum flow matching experiments"};
    app.set_version_flag("--version", qfm::kVersion);
    app.require_subcommand(1);

    // run
    auto *run = app.add_subcommand("run", "run one experiment and write its output directory");
    std::string task, config, out;
    std::optional<std::uint64_t> seed;
    bool check = false;
    run->add_option("task", task, "ring | entanglement | tfim_phase | jarzynski | superdiffusion | ablation")
        ->required();
    run->add_option("--config", config, "INI file overriding the task defaults");
    run->add_option("--seed", seed, "master seed (overrides the config)");
    run->add_option("--out", out, "output directory")->required();
    run->add_flag("--check", check, "evaluate pass/fail checks; exit 2 on failure");

    // oracle
    auto *oracle = app.add_subcommand("oracle", "exact reference quantities");
    oracle->require_subcommand(1);
    std::size_t n = 4, n_min = 2, n_max = 6, steps = 2;
    Real g = 1.0, beta = 1.0;
    std::string sign = "main_text", grid = "0,0.25,0.5,0.75,1,1.25,1.5", observable, circuit, params;

    auto *fe = oracle->add_subcommand("free_energy", "F = -ln Z / beta of the TFIM");
    fe->add_option("--n", n);
    fe->add_option("--g", g);
    fe->add_option("--beta", beta);
    fe->add_option("--sign", sign, "main_text | supplement");

    auto *ge = oracle->add_subcommand("ground_energies", "TFIM ground energies as CSV");
    ge->add_option("--n-min", n_min);
    ge->add_option("--n-max", n_max);
    ge->add_option("--g", grid, "comma-separated field values");
    ge->add_option("--sign", sign);

    auto *th = oracle->add_subcommand("thermal", "thermal expectation of a Pauli word in the TFIM");
    th->add_option("--n", n);
    th->add_option("--g", g);
    th->add_option("--beta", beta);
    th->add_option("--sign", sign);
    th->add_option("--observable", observable, "Pauli word, character k acts on qubit k")->required();

    auto *mg = oracle->add_subcommand("magnetization", "exact ground-state mean |M| as CSV");
    mg->add_option("--n-min", n_min);
    mg->add_option("--n-max", n_max);
    mg->add_option("--g", grid);
    mg->add_option("--sign", sign);

    auto *sb = oracle->add_subcommand("superdiffusion_branches", "QFM branch operators vs direct circuits");
    sb->add_option("--steps", steps, "number of blocks");

    auto *un = oracle->add_subcommand("unitary", "dense unitary of a circuit file");
    un->add_option("--circuit", circuit)->required()->check(CLI::ExistingFile);
    un->add_option("--params", params, "comma-separated parameter values");

    // metrics
    auto *metrics = app.add_subcommand("metrics", "compare two run directories");
    std::vector<std::string> compare;
    Real tol = 0.0;
    bool mcheck = false;
    metrics->add_option("--compare", compare, "two output directories")->expected(2)->required();
    metrics->add_option("--tolerance", tol, "absolute tolerance on numbers");
    metrics->add_flag("--check", mcheck, "exit 2 if the runs differ");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            return cmd_run(task, config, seed, out, check);
        }
        if (*metrics) {
            return cmd_compare(compare[0], compare[1], tol, mcheck);
        }
        if (*fe) {
            std::cout << g12(qfm::free_energy(qfm::tfim(n, g, sign_of(sign)), beta)) << '\n';
        } else if (*ge || *mg) {
            std::cout << (*ge ? "n,g,ground_energy\n" : "n,g,mean_abs_M\n");
            for (std::size_t k = n_min; k <= n_max; ++k) {
                for (Real gv : real_list(grid)) {
                    const auto h = qfm::tfim(k, gv, sign_of(sign));
                    const Real v = *ge ? qfm::ground_state(h).energy : qfm::exact_abs_magnetization(k, gv, sign_of(sign));
                    std::cout << k << ',' << g12(gv) << ',' << g12(v) << '\n';
                }
            }
        } else if (*th) {
            QFM_REQUIRE(observable.size() == n, "observable length must equal n");
            const qfm::PauliSum obs{qfm::PauliString(observable)};
            std::cout << g12(qfm::thermal_expectation(qfm::spectrum(qfm::tfim(n, g, sign_of(sign))), beta, obs))
                      << '\n';
        } else if (*sb) {
            qfm::SuperdiffusionConfig cfg;
            bool ok = true;
            for (auto order : {qfm::MeasureOrder::AT_END, qfm::MeasureOrder::FIRST}) {
                const auto u = qfm::qfm_branch_unitaries(cfg, steps, order);
                for (std::size_t r = 0; r < 4; ++r) {
                    const auto d = qfm::circuit_unitary(qfm::build_direct_circuit(cfg.j_perp(r), cfg, steps), {});
                    const Real dist = (u[r] - d).norm();
                    const bool pass = dist <= 1e-10;
                    ok = ok && pass;
                    std::cout << (pass ? "PASS" : "FAIL") << " order=" << (order == qfm::MeasureOrder::FIRST ? "first" : "at_end")
                              << " r0=" << (r & 1U) << " r1=" << ((r >> 1) & 1U) << " J_perp/J=" << g12(cfg.j_perp(r))
                              << " distance=" << g12(dist) << '\n';
                }
            }
            return ok ? 0 : 2;
        } else if (*un) {
            const auto prog = qfm::circuit_from_text(read_file(circuit));
            const auto p = params.empty() ? std::vector<Real>{} : real_list(params);
            const auto u = qfm::circuit_unitary(prog, p);
            for (Eigen::Index r = 0; r < u.rows(); ++r) {
                for (Eigen::Index c = 0; c < u.cols(); ++c) {
                    std::cout << (c ? "," : "") << g12(u(r, c).real()) << (u(r, c).imag() < 0 ? "" : "+")
                              << g12(u(r, c).imag()) << 'i';
                }
                std::cout << '\n';
            }
        }
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
