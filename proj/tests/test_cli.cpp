#include "doctest.h"

#include "sidlab/pipeline.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace sidlab;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"({
  // small ring run
  "seed": 5,
  "teacher_mode": "net",
  "target": {"kind": "mixture", "ring": {"components": 4, "radius": 1.5, "stddev": 0.3}},
  "teacher": {"steps": 40, "batch_size": 64, "arch": {"hidden": 16, "depth": 2}},
  "distill": {"K": 4, "iterations": 6, "batch_size": 16},
  "sample": {"K": 4, "num_samples": 60, "batch_size": 30},
  "eval": {"reference_samples": 200, "sw_projections": 8}
})";

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("sidlab_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

CommandOptions quiet_in(const fs::path& out) {
    CommandOptions o;
    o.out = out;
    o.quiet = true;
    return o;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(SIDLAB_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config: comments and key order do not change the hash, semantics do") {
    RunConfig a = parse_run_config(kTiny);
    RunConfig b = parse_run_config(R"({"sample": {"batch_size": 30, "num_samples": 60, "K": 4},
        "eval": {"sw_projections": 8, "reference_samples": 200},
        "distill": {"batch_size": 16, "iterations": 6, "K": 4},
        "teacher": {"arch": {"depth": 2, "hidden": 16}, "batch_size": 64, "steps": 40},
        "target": {"ring": {"stddev": 0.3, "radius": 1.5, "components": 4}, "kind": "mixture"},
        "teacher_mode": "net", "seed": 5})");
    CHECK(a.hash() == b.hash());
    b.out = "elsewhere";
    CHECK(a.hash() == b.hash());

    RunConfig c = a;
    c.distill.alpha = 0.8;
    CHECK(c.hash() != a.hash());
    CHECK(c.teacher_hash() == a.teacher_hash());
    CHECK(c.distill_hash() != a.distill_hash());
    c = a;
    c.seed = 6;
    c.resolve();
    CHECK(c.hash() != a.hash());
    CHECK(c.teacher.seed != a.teacher.seed);
    c = a;
    c.sample.gamma = 0.5;
    CHECK(c.distill_hash() == a.distill_hash());
    CHECK(c.sample_hash() != a.sample_hash());
}

TEST_CASE("config: errors name the line or the key") {
    try {
        parse_run_config("{\n  \"seed\": 1,\n  \"teacher\": {\n    \"steps\": ,\n  }\n}", "bad.json");
        FAIL("expected a parse error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("bad.json:4") != std::string::npos);
    }
    try {
        parse_run_config(R"({"distill": {"alpah": 1.0}})", "typo.json");
        FAIL("expected an unknown-key error");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("alpah") != std::string::npos);
        CHECK(msg.find("distill") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_run_config(R"({"sample": {"seed": 3}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"colour": 1})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"sweep": {"axis": "beta"}})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"sweep": {"axis": "K", "values": [1.5]}})"), ConfigError);
    CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("config: sweep presets") {
    CHECK(SweepSpec::preset("alpha") == std::vector<double>{0.0, 0.5, 0.8, 1.0, 1.2, 1.5});
    CHECK(SweepSpec::preset("K") == std::vector<double>{1, 5, 8, 10, 12, 16, 20});
    CHECK(SweepSpec::preset("gamma").size() == 10);
}

TEST_CASE("pipeline: missing checkpoints are reported with their path") {
    const fs::path out = scratch("missing");
    RunConfig cfg = parse_run_config(kTiny);
    try {
        cmd_distill(cfg, quiet_in(out));
        FAIL("expected a missing checkpoint error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("teacher.ckpt") != std::string::npos);
    }
    CHECK_THROWS_AS(cmd_sample(cfg, quiet_in(out)), ConfigError);
    fs::remove_all(out);
}

TEST_CASE("pipeline: end to end, rerun byte-identical, content-addressed reuse") {
    RunConfig cfg = parse_run_config(kTiny);
    const fs::path o1 = scratch("e2e_a"), o2 = scratch("e2e_b");
    for (const auto& out : {o1, o2}) {
        cmd_train_teacher(cfg, quiet_in(out));
        cmd_distill(cfg, quiet_in(out));
        cmd_sample(cfg, quiet_in(out));
        cmd_eval(cfg, quiet_in(out));
    }
    const fs::path e1 = stage_dir(cfg, quiet_in(o1), "eval"), e2 = stage_dir(cfg, quiet_in(o2), "eval");
    CHECK(slurp(e1 / "metrics.csv") == slurp(e2 / "metrics.csv"));
    CHECK(slurp(stage_dir(cfg, quiet_in(o1), "distill") / "trace.csv") ==
          slurp(stage_dir(cfg, quiet_in(o2), "distill") / "trace.csv"));
    CHECK(slurp(stage_dir(cfg, quiet_in(o1), "sample") / "samples.csv") ==
          slurp(stage_dir(cfg, quiet_in(o2), "sample") / "samples.csv"));

    nlohmann::json m = nlohmann::json::parse(slurp(stage_dir(cfg, quiet_in(o1), "sample") / "manifest.json"));
    CHECK(m.at("config_hash") == cfg.hash());
    CHECK(m.contains("versions"));
    CHECK(m.at("batch_seconds").size() == 2);

    // a second call reuses the directory instead of retraining
    const auto stamp = fs::last_write_time(stage_dir(cfg, quiet_in(o1), "teacher") / "teacher.ckpt");
    cmd_train_teacher(cfg, quiet_in(o1));
    CHECK(fs::last_write_time(stage_dir(cfg, quiet_in(o1), "teacher") / "teacher.ckpt") == stamp);

    // resuming a finished run leaves the trace as it was
    CommandOptions r = quiet_in(o1);
    r.resume = stage_dir(cfg, r, "distill") / "state.ckpt";
    const std::string before = slurp(stage_dir(cfg, r, "distill") / "trace.csv");
    cmd_distill(cfg, r);
    CHECK(slurp(stage_dir(cfg, r, "distill") / "trace.csv") == before);
    fs::remove_all(o1);
    fs::remove_all(o2);
}

TEST_CASE("pipeline: K=16 sampling costs more than K=1 on the same generator") {
    RunConfig cfg = parse_run_config(kTiny);
    cfg.sample.num_samples = 2000;
    cfg.sample.batch_size = 500;
    const fs::path out = scratch("timing");
    cmd_train_teacher(cfg, quiet_in(out));
    cmd_distill(cfg, quiet_in(out));
    auto seconds = [&](int K) {
        RunConfig c = cfg;
        c.sample.K = K;
        fs::path d = cmd_sample(c, quiet_in(out));
        return nlohmann::json::parse(slurp(d / "manifest.json")).at("total_seconds").get<double>();
    };
    CHECK(seconds(16) > seconds(1));
    fs::remove_all(out);
}

TEST_CASE("pipeline: eval on an empty sample directory fails cleanly") {
    RunConfig cfg = parse_run_config(kTiny);
    const fs::path out = scratch("empty_eval");
    fs::create_directories(out / "empty");
    CommandOptions o = quiet_in(out);
    o.samples = out / "empty";
    CHECK_THROWS_AS(cmd_eval(cfg, o), ConfigError);
    CHECK_FALSE(fs::exists(stage_dir(cfg, o, "eval") / "metrics.csv"));
    fs::remove_all(out);
}

TEST_CASE("pipeline: gamma sweep reuses one generator and records failed points") {
    RunConfig cfg = parse_run_config(kTiny);
    cfg.sweep.axis = "gamma";
    cfg.sweep.values = {0.3, 1.0, -1.0};
    cfg.sweep.metrics = {"energy_distance", "sliced_wasserstein"};
    const fs::path out = scratch("sweep");
    CommandOptions o = quiet_in(out);
    o.workers = 2;
    fs::path d = cmd_sweep(cfg, o);
    std::istringstream rows(slurp(d / "sweep.csv"));
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(rows, line)) lines.push_back(line);
    REQUIRE(lines.size() == 4);
    CHECK(lines[1].find(",ok,") != std::string::npos);
    CHECK(lines[2].find(",ok,") != std::string::npos);
    CHECK(lines[3].find("error") != std::string::npos);
    int distill_dirs = 0;
    for (const auto& e : fs::directory_iterator(out)) distill_dirs += e.path().filename().string().rfind("distill-", 0) == 0;
    CHECK(distill_dirs == 1);
    nlohmann::json s = nlohmann::json::parse(slurp(d / "summary.json"));
    CHECK(s.at("failed_points") == 1);
    CHECK(s.at("metrics").contains("energy_distance"));
    CHECK(fs::exists(d / "plot_energy_distance.csv"));
    fs::remove_all(out);
}

TEST_CASE("gradcheck: shipped networks pass, an injected bug fails") {
    RunConfig cfg;
    const fs::path out = scratch("gradcheck");
    CommandOptions o = quiet_in(out);
    GradCheckSummary ok = cmd_gradcheck(cfg, o);
    CHECK(ok.passed);
    for (const auto& [name, r] : ok.reports) CHECK_MESSAGE(r.max_rel_error < 1e-4, name);
    o.corrupt_gradient = true;
    CHECK_FALSE(cmd_gradcheck(cfg, o).passed);
    fs::remove_all(out);
}

TEST_CASE("cli: exit codes") {
    const fs::path out = scratch("cli");
    {
        std::ofstream(out / "bad.json") << "{ \"seed\": 1,, }";
        std::ofstream(out / "ok.json") << kTiny;
    }
    CHECK(run_cli("train-teacher --config " + (out / "bad.json").string()) == 2);
    CHECK(run_cli("distill --config " + (out / "ok.json").string() + " --out " + out.string()) == 2);
    CHECK(run_cli("gradcheck -q --out " + out.string()) == 0);
    CHECK(run_cli("gradcheck -q --corrupt --out " + out.string()) == 4);
    CHECK(run_cli("train-teacher -q --config " + (out / "ok.json").string() + " --out " + out.string()) == 0);
    CHECK(run_cli("--bogus") != 0);
    fs::remove_all(out);
}
