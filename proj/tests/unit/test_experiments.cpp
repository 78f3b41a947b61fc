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

#include <sstream>

#include "qfm/experiments.hpp"

using namespace qfm;
using Catch::Approx;

namespace {

ExperimentConfig parse(const std::string &text, std::optional<Task> t = std::nullopt) {
    std::istringstream in(text);
    return ExperimentConfig::from_ini(in, t);
}

} // namespace

TEST_CASE("task names round trip") {
    for (auto t : kAllTasks) {
        CHECK(parse_task(task_name(t)) == t);
    }
    CHECK_THROWS_AS(parse_task("nope"), Error);
}

TEST_CASE("defaults reproduce the reference hyperparameters") {
    const auto ring = ExperimentConfig::defaults(Task::RING);
    CHECK(ring.n == 1);
    CHECK(ring.n_ancilla == 0);
    CHECK(ring.layers == 5);
    CHECK(ring.steps == 20);
    CHECK(ring.samples == 100);
    const auto ent = ExperimentConfig::defaults(Task::ENTANGLEMENT);
    CHECK(ent.n == 2);
    CHECK(ent.n_ancilla == 1);
    CHECK(ent.layers == 40);
    CHECK(ent.steps == 10);
    CHECK(ent.samples == 100);
    CHECK(ent.train_config().warm_start);
    CHECK_FALSE(ExperimentConfig::defaults(Task::ABLATION).train_config().warm_start);
    const auto tf = ExperimentConfig::defaults(Task::TFIM_PHASE);
    CHECK(tf.n_ancilla == 1);
    CHECK(tf.layers == 20);
    CHECK(tf.steps == 15);
    CHECK(tf.samples == 100);
    CHECK(tf.sizes.front() == 2);
    CHECK(tf.sizes.back() == 8);
    CHECK(tf.g_max == 1.5);
    const auto sd = ExperimentConfig::defaults(Task::SUPERDIFFUSION);
    CHECK(sd.t_max == 20);
    CHECK(sd.lambdas.size() == 3);
    CHECK(sd.lambdas[2] == std::array<Real, 3>{1.0, 1.0, 1.0});
    for (auto t : kAllTasks) {
        CHECK_NOTHROW(ExperimentConfig::defaults(t).validate());
    }
}

TEST_CASE("INI overrides") {
    const auto c = parse("[experiment]\ntask = tfim_phase\nseed = 7\n[model]\nlayers = 3\n[optimizer]\nlearning_rate = "
                         "0.02\nwindow = 0\n[tfim]\nsizes = 2, 3\nsign = main_text\n");
    CHECK(c.task == Task::TFIM_PHASE);
    CHECK(c.seed == 7);
    CHECK(c.layers == 3);
    CHECK(c.adam.learning_rate == 0.02);
    CHECK(c.adam.window == 0);
    CHECK(c.sizes == std::vector<std::size_t>{2, 3});
    CHECK(c.sign == TfimSign::main_text);
    CHECK(c.steps == 15); // untouched default
    const auto r = parse("[experiment]\ntask = ring\n[model]\nrestarts = 2\nwarm_start = true\n[optimizer]\n"
                         "final_lr_fraction = 0.1\n");
    CHECK(r.train_config().restarts == 2);
    CHECK(r.train_config().warm_start);
    CHECK(r.adam.final_lr_fraction == 0.1);
}

TEST_CASE("shipped configs spell out the defaults") {
    for (auto t : kAllTasks) {
        const std::string path = std::string(QFM_CONFIG_DIR) + "/" + task_name(t) + ".ini";
        CHECK(ExperimentConfig::from_file(path).to_json() == ExperimentConfig::defaults(t).to_json());
    }
    auto qfm_mode = ExperimentConfig::defaults(Task::JARZYNSKI);
    qfm_mode.jarzynski.mode = JarzynskiConfig::Mode::QFM;
    CHECK(ExperimentConfig::from_file(std::string(QFM_CONFIG_DIR) + "/jarzynski_qfm.ini").to_json() ==
          qfm_mode.to_json());
}

TEST_CASE("superdiffusion keys use external labels") {
    const auto c = parse("[superdiffusion]\nlambdas = 0:0:1 1:0.5:0\nprobe = 3\nbonds_2D = 5-10\ntheta = 1 0.25 0 0\n",
                         Task::SUPERDIFFUSION);
    CHECK(c.lambdas.size() == 2);
    CHECK(c.lambdas[1][1] == 0.5);
    CHECK(c.superdiffusion.probe == 1);
    CHECK(c.superdiffusion.bonds.of("2D")[0] == std::make_pair<std::size_t, std::size_t>(3, 8));
    CHECK(c.superdiffusion.theta[1] == 0.25);
}

TEST_CASE("config errors") {
    CHECK_THROWS_AS(parse("[model]\nlayrs = 3\n", Task::RING), Error);
    CHECK_THROWS_AS(parse("[model]\nlayers = x\n", Task::RING), Error);
    CHECK_THROWS_AS(parse("[model]\nlayers = 3\n"), Error);
    CHECK_THROWS_AS(parse("[experiment]\ntask = ring\n", Task::TFIM_PHASE), Error);
    CHECK_THROWS_AS(parse("[model]\nn = 2\n", Task::RING), Error);
    CHECK_THROWS_AS(parse("[tfim]\nsizes = 1\n", Task::TFIM_PHASE), Error);
    CHECK_THROWS_AS(parse("[tfim]\nsizes = 12\n", Task::TFIM_PHASE), Error);
    CHECK_THROWS_AS(parse("[histogram]\ncentred = maybe\n", Task::RING), Error);
}

TEST_CASE("config echo covers every section") {
    const auto j = ExperimentConfig::defaults(Task::JARZYNSKI).to_json();
    for (const char *k : {"experiment", "model", "optimizer", "thresholds", "histogram", "tfim", "jarzynski",
                          "jarzynski_optimizer", "superdiffusion"}) {
        CHECK(j.contains(k));
    }
    CHECK(j["superdiffusion"]["probe"] == 2);
    CHECK(j["superdiffusion"]["bonds_2D"] == "4-9");
    CHECK(j["jarzynski"]["work_mode"] == "two_point_exact");
}

TEST_CASE("ring helpers") {
    Rng rng(1);
    const auto s = ring_states(50, rng);
    for (const auto &st : s) {
        CHECK(std::abs(st.norm() - 1.0) < 1e-12);
        CHECK(std::abs(st[0].imag()) < 1e-15);
        CHECK(std::abs(st[1].real()) < 1e-15);
    }
    // a quarter turn about Z maps <Y> to <X> and kills it on this ring
    const auto r = rotate_z(s[0], 0.25 * kPi);
    CHECK(expectation_y(r) == Approx(0.0).margin(1e-12));
}

TEST_CASE("tfim helpers") {
    CHECK(basis_magnetization(0, 3) == Approx(1.0));
    CHECK(basis_magnetization(0b101, 3) == Approx(-1.0 / 3.0));
    CHECK(exact_abs_magnetization(4, 0.0, TfimSign::supplement) == Approx(1.0));
    CHECK(exact_abs_magnetization(4, 50.0, TfimSign::supplement) < 0.5);
    const auto o = ordered_states(3, 4);
    CHECK(std::abs(o[0][0]) == 1.0);
    CHECK(std::abs(o[1][7]) == 1.0);
}

TEST_CASE("ring run is reproducible byte for byte") {
    auto c = ExperimentConfig::defaults(Task::RING);
    c.steps = 4;
    c.samples = 20;
    c.adam.max_iterations = 60;
    c.seed = 3;
    const auto a = run_ring(c);
    const auto b = run_ring(c);
    CHECK(a.json.dump() == b.json.dump());
    CHECK(a.files == b.files);
    CHECK(a.json["steps"].size() == 5);
    CHECK(a.json["config"]["experiment"]["seed"] == 3);
    CHECK(a.files.count("ring_deviation.csv") == 1);
    CHECK(a.files.count("model.txt") == 1);
    c.seed = 4;
    CHECK(run_ring(c).json.dump() != a.json.dump());
}

TEST_CASE("report directory layout") {
    auto c = ExperimentConfig::defaults(Task::RING);
    c.steps = 2;
    c.samples = 5;
    c.adam.max_iterations = 10;
    const auto r = run_experiment(c);
    const auto dir = std::filesystem::temp_directory_path() / "qfm_report_test";
    std::filesystem::remove_all(dir);
    r.write(dir);
    for (const char *f : {"report.json", "timing.json", "histograms.csv", "ring_deviation.csv", "model.txt"}) {
        CHECK(std::filesystem::exists(dir / f));
    }
    std::ifstream in(dir / "report.json");
    const auto j = nlohmann::json::parse(in);
    CHECK(j["task"] == "ring");
    CHECK_FALSE(j.contains("seconds"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("report checks") {
    nlohmann::json j;
    j["task"] = "superdiffusion";
    j["branch_operator_distance"] = 1e-14;
    j["branch_max_sigma"] = 1.0;
    j["mixture_max_abs_z"] = 3.5;
    const auto r = check_report(j);
    REQUIRE(r.size() == 3);
    CHECK(r[0].pass);
    CHECK(r[1].pass);
    CHECK_FALSE(r[2].pass);

    nlohmann::json q;
    q["task"] = "jarzynski";
    q["mode"] = "qfm";
    q["converged"] = false;
    q["per_beta"] = nlohmann::json::array({{{"beta", 0.1}, {"error", 0.0}, {"bootstrap_stderr", 0.0}}});
    const auto rq = check_report(q);
    CHECK_FALSE(rq.front().pass); // stalled training never passes silently
}
