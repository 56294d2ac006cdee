#pragma once

#include "sidlab/config.hpp"
#include "sidlab/denoiser.hpp"
#include "sidlab/evalmetrics.hpp"
#include "sidlab/gradcheck.hpp"
#include "sidlab/net.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace sidlab {

struct CommandOptions {
    std::filesystem::path out;  // empty -> config "out"
    std::optional<std::filesystem::path> resume;
    std::optional<std::filesystem::path> samples;  // eval input override
    bool force = false;
    bool corrupt_gradient = false;
    int workers = 1;
    bool quiet = false;
};

// Run directories are <out>/<stage>-<hash>; a directory counts as complete once
// its manifest.json exists and is reused unless `force`.
std::filesystem::path stage_dir(const RunConfig& cfg, const CommandOptions& opt, const std::string& stage);
std::string eval_hash(const RunConfig& cfg);

// Trained teacher parameters; ConfigError naming the path when absent.
NetParams load_teacher(const RunConfig& cfg, const CommandOptions& opt);
NetParams load_generator(const RunConfig& cfg, const CommandOptions& opt);
// The f_phi used for distillation and teacher sampling (`teacher` must outlive it).
std::unique_ptr<Denoiser> make_phi(const RunConfig& cfg, const NetParams& teacher);

// Stacks batches that share max_len and dim.
StructureBatch concat_batches(const std::vector<StructureBatch>& parts);

struct SampleRun {
    StructureBatch samples;
    std::vector<double> batch_seconds;
    double total_seconds = 0.0;
};
// Generates cfg.sample.num_samples structures with `model`; time covers model calls only.
SampleRun run_sampling(const RunConfig& cfg, const Denoiser& model);

EvalReport evaluate_samples(const RunConfig& cfg, const StructureBatch& samples, double seconds);

nlohmann::json report_to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

// Each returns its run directory.
std::filesystem::path cmd_train_teacher(const RunConfig& cfg, const CommandOptions& opt);
std::filesystem::path cmd_distill(const RunConfig& cfg, const CommandOptions& opt);
std::filesystem::path cmd_sample(const RunConfig& cfg, const CommandOptions& opt);
std::filesystem::path cmd_eval(const RunConfig& cfg, const CommandOptions& opt, EvalReport* report = nullptr);
std::filesystem::path cmd_sweep(const RunConfig& cfg, const CommandOptions& opt);

struct GradCheckSummary {
    std::vector<std::pair<std::string, GradReport>> reports;
    bool passed = true;
    nlohmann::json to_json() const;
};
// Checks the linear net, the configured teacher net and the shipped point/chain nets.
GradCheckSummary cmd_gradcheck(const RunConfig& cfg, const CommandOptions& opt);

// Copy of `base` with one sweep coordinate applied.
RunConfig sweep_point(const RunConfig& base, const std::string& axis, double value, int rep);

}  // namespace sidlab
