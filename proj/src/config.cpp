#include "sidlab/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace sidlab {

void EvalConfig::validate() const {
    if (reference_samples < 2 || sw_projections < 1 || probe_samples < 2) throw ConfigError("eval: sizes too small");
}

nlohmann::json EvalConfig::to_json() const {
    return {{"reference_samples", reference_samples},
            {"sw_projections", sw_projections},
            {"probe_samples", probe_samples}};
}

EvalConfig EvalConfig::from_json(const nlohmann::json& j) {
    EvalConfig e;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() == "reference_samples") e.reference_samples = it->get<int>();
        else if (it.key() == "sw_projections") e.sw_projections = it->get<int>();
        else if (it.key() == "probe_samples") e.probe_samples = it->get<int>();
        else throw ConfigError("eval: unknown key '" + it.key() + "'");
    }
    e.validate();
    return e;
}

std::vector<double> SweepSpec::preset(const std::string& axis) {
    if (axis == "gamma") return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    if (axis == "alpha") return {0.0, 0.5, 0.8, 1.0, 1.2, 1.5};
    if (axis == "K") return {1, 5, 8, 10, 12, 16, 20};
    throw ConfigError("sweep: axis must be gamma, alpha or K");
}

std::vector<double> SweepSpec::resolved_values() const { return values.empty() ? preset(axis) : values; }

void SweepSpec::validate() const {
    preset(axis);
    if (repetitions < 1) throw ConfigError("sweep: repetitions must be >= 1");
    if (axis == "K")
        for (double v : values)
            if (v < 1 || v != static_cast<int>(v)) throw ConfigError("sweep: K values must be positive integers");
    const std::vector<std::string> known{"energy_distance", "sliced_wasserstein", "designable_fraction",
                                         "diversity_rmsd", "effective_time"};
    for (const auto& m : metrics)
        if (std::find(known.begin(), known.end(), m) == known.end()) throw ConfigError("sweep: unknown metric '" + m + "'");
}

nlohmann::json SweepSpec::to_json() const {
    return {{"axis", axis}, {"values", resolved_values()}, {"repetitions", repetitions}, {"metrics", metrics}};
}

SweepSpec SweepSpec::from_json(const nlohmann::json& j) {
    SweepSpec s;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() == "axis") s.axis = it->get<std::string>();
        else if (it.key() == "values") s.values = it->get<std::vector<double>>();
        else if (it.key() == "repetitions") s.repetitions = it->get<int>();
        else if (it.key() == "metrics") s.metrics = it->get<std::vector<std::string>>();
        else throw ConfigError("sweep: unknown key '" + it.key() + "'");
    }
    s.validate();
    return s;
}

uint64_t derive_seed(uint64_t seed, const std::string& stream) {
    return fnv1a64(stream.data(), stream.size(), fnv1a64(&seed, sizeof(seed)));
}

std::string hash_json(const nlohmann::json& j) {
    // nlohmann objects keep keys sorted, so dump() is canonical
    return hex64(fnv1a64(j.dump()));
}

void RunConfig::validate() const {
    if (teacher_mode != "net" && teacher_mode != "analytic")
        throw ConfigError("teacher_mode must be 'net' or 'analytic'");
    if (teacher_mode == "analytic" && target.is_chain())
        throw ConfigError("teacher_mode 'analytic' needs a mixture target");
    target.validate();
    teacher.validate();
    distill.validate();
    sample.validate();
    eval.validate();
    sweep.validate();
}

void RunConfig::resolve() {
    teacher.target = target;
    // input width and label table follow the target
    teacher.arch.dim = target.dim();
    teacher.arch.num_labels = target.num_labels();
    teacher.seed = derive_seed(seed, "teacher");
    distill.seed = derive_seed(seed, "distill" + (distill_replica ? "/" + std::to_string(distill_replica) : ""));
    sample.seed = derive_seed(seed, "sample" + (sample_replica ? "/" + std::to_string(sample_replica) : ""));
}

nlohmann::json RunConfig::canonical() const {
    nlohmann::json t = teacher.to_json();
    t.erase("target");
    t.erase("seed");
    nlohmann::json d = distill.to_json();
    d.erase("seed");
    nlohmann::json s = sample.to_json();
    s.erase("seed");
    if (distill_replica) d["replica"] = distill_replica;
    if (sample_replica) s["replica"] = sample_replica;
    return {{"seed", seed},       {"teacher_mode", teacher_mode}, {"target", target.to_json()},
            {"teacher", t},       {"distill", d},                 {"sample", s},
            {"eval", eval.to_json()}, {"sweep", sweep.to_json()}};
}

std::string RunConfig::hash() const { return hash_json(canonical()); }

std::string RunConfig::teacher_hash() const {
    nlohmann::json c = canonical();
    return hash_json({{"seed", seed}, {"target", c["target"]}, {"teacher", c["teacher"]}});
}

std::string RunConfig::distill_hash() const {
    nlohmann::json c = canonical();
    return hash_json({{"teacher", teacher_hash()}, {"teacher_mode", teacher_mode}, {"distill", c["distill"]}});
}

std::string RunConfig::sample_hash() const {
    nlohmann::json c = canonical();
    const std::string upstream = sample.mode == "student" ? distill_hash() : teacher_hash();
    return hash_json({{"upstream", upstream}, {"teacher_mode", teacher_mode}, {"sample", c["sample"]}});
}

namespace {

template <class Fn>
auto section(const char* name, Fn fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("[") + name + "] " + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("[") + name + "] " + e.what());
    }
}

void reject_seed(const nlohmann::json& j, const char* name) {
    if (j.contains("seed"))
        throw ConfigError(std::string("[") + name + "] per-section seeds are derived from the global 'seed'");
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        // byte offset -> line
        size_t line = 1;
        for (size_t i = 0; i < std::min(e.byte, text.size()); ++i) line += text[i] == '\n';
        throw ConfigError(origin + ":" + std::to_string(line) + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError(origin + ": top level must be an object");
    RunConfig c;
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            if (k == "seed") c.seed = it->get<uint64_t>();
            else if (k == "out") c.out = it->get<std::string>();
            else if (k == "teacher_mode") c.teacher_mode = it->get<std::string>();
            else if (k == "target") c.target = section("target", [&] { return TargetSpec::from_json(*it); });
            else if (k == "teacher") {
                reject_seed(*it, "teacher");
                if (it->contains("target")) throw ConfigError("[teacher] the target is configured at top level");
                c.teacher = section("teacher", [&] { return TeacherConfig::from_json(*it); });
            } else if (k == "distill") {
                reject_seed(*it, "distill");
                c.distill = section("distill", [&] { return DistillConfig::from_json(*it); });
            } else if (k == "sample") {
                reject_seed(*it, "sample");
                c.sample = section("sample", [&] { return SampleConfig::from_json(*it); });
            } else if (k == "eval") c.eval = section("eval", [&] { return EvalConfig::from_json(*it); });
            else if (k == "sweep") c.sweep = section("sweep", [&] { return SweepSpec::from_json(*it); });
            else throw ConfigError("unknown key '" + k + "'");
        }
        c.resolve();
        c.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(origin + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(origin + ": " + e.what());
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_run_config(ss.str(), path.string());
}

}  // namespace sidlab
