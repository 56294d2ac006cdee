#pragma once

#include "sidlab/distill.hpp"
#include "sidlab/sampler.hpp"
#include "sidlab/teacher.hpp"
#include "sidlab/toydata.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace sidlab {

struct EvalConfig {
    int reference_samples = 5000;
    int sw_projections = 64;
    // probe used by the distillation plateau rule
    int probe_samples = 500;

    void validate() const;
    nlohmann::json to_json() const;
    static EvalConfig from_json(const nlohmann::json& j);
};

struct SweepSpec {
    std::string axis = "gamma";  // gamma | alpha | K
    std::vector<double> values;  // empty -> preset for the axis
    int repetitions = 1;
    std::vector<std::string> metrics{"energy_distance", "sliced_wasserstein", "designable_fraction", "diversity_rmsd",
                                     "effective_time"};

    static std::vector<double> preset(const std::string& axis);
    std::vector<double> resolved_values() const;
    void validate() const;
    nlohmann::json to_json() const;
    static SweepSpec from_json(const nlohmann::json& j);
};

struct RunConfig {
    uint64_t seed = 0;
    std::string out = "runs";
    // "net": the trained teacher is f_phi; "analytic": the mixture oracle is f_phi
    // and the trained teacher only initialises theta and psi
    std::string teacher_mode = "net";
    TargetSpec target;
    TeacherConfig teacher;
    DistillConfig distill;
    SampleConfig sample;
    EvalConfig eval;
    SweepSpec sweep;
    // sweep repetitions: nonzero values re-derive the distillation / sampling seeds
    int distill_replica = 0;
    int sample_replica = 0;

    void validate() const;
    // Propagate the global seed and target into the sections.
    void resolve();

    // Semantic content only (no output directory), with defaults filled in.
    nlohmann::json canonical() const;
    std::string hash() const;
    // Hashes of the stage prefixes; each covers everything its artifacts depend on.
    std::string teacher_hash() const;
    std::string distill_hash() const;
    std::string sample_hash() const;
};

RunConfig parse_run_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

std::string hash_json(const nlohmann::json& j);
uint64_t derive_seed(uint64_t seed, const std::string& stream);

}  // namespace sidlab
