#include "sidlab/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

using namespace sidlab;

namespace {

int workers_from_env() {
    const char* w = std::getenv("SIDLAB_WORKERS");
    if (!w || !*w) return 1;
    char* end = nullptr;
    const long n = std::strtol(w, &end, 10);
    if (*end != '\0' || n < 1 || n > 256) throw ConfigError(std::string("SIDLAB_WORKERS must be in [1, 256], got '") + w + "'");
    return static_cast<int>(n);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sidlab: few-step score-identity distillation of flow models on toy data"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<uint64_t> seed;
    std::string out, resume, samples;
    bool force = false, quiet = false, corrupt = false;

    auto common = [&](CLI::App* sub, bool config_required) {
        auto* c = sub->add_option("--config", config_path, "run config (JSON, // comments allowed)");
        if (config_required) c->required();
        sub->add_option("--seed", seed, "override the global seed");
        sub->add_option("--out", out, "output root (overrides the config)");
        sub->add_flag("--force", force, "recompute even when a complete run directory exists");
        sub->add_flag("-q,--quiet", quiet, "no progress output");
    };
    auto* teacher = app.add_subcommand("train-teacher", "train the flow-matching teacher");
    common(teacher, true);
    auto* distill = app.add_subcommand("distill", "distill a K-step generator from the teacher");
    common(distill, true);
    distill->add_option("--resume", resume, "resume from a distillation checkpoint")->check(CLI::ExistingFile);
    auto* sample = app.add_subcommand("sample", "generate samples");
    common(sample, true);
    auto* eval = app.add_subcommand("eval", "evaluate a sample directory");
    common(eval, true);
    eval->add_option("--samples", samples, "sample directory (default: the one the config points to)");
    auto* sweep = app.add_subcommand("sweep", "run a gamma / alpha / K sweep");
    common(sweep, true);
    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient checks of the shipped networks");
    common(grad, false);
    grad->add_flag("--corrupt", corrupt, "inject a gradient bug (the check must fail)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 4;
    }

    try {
        RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
        if (seed) cfg.seed = *seed;
        CommandOptions opt;
        if (!out.empty()) opt.out = out;
        if (!resume.empty()) opt.resume = resume;
        if (!samples.empty()) opt.samples = samples;
        opt.force = force;
        opt.quiet = quiet;
        opt.corrupt_gradient = corrupt;
        opt.workers = workers_from_env();

        if (*teacher) {
            std::cout << cmd_train_teacher(cfg, opt).string() << "\n";
        } else if (*distill) {
            std::cout << cmd_distill(cfg, opt).string() << "\n";
        } else if (*sample) {
            std::cout << cmd_sample(cfg, opt).string() << "\n";
        } else if (*eval) {
            std::cout << cmd_eval(cfg, opt).string() << "\n";
        } else if (*sweep) {
            std::cout << cmd_sweep(cfg, opt).string() << "\n";
        } else if (*grad) {
            GradCheckSummary s = cmd_gradcheck(cfg, opt);
            std::cout << s.to_json().dump(2) << "\n";
            if (!s.passed) return 4;
        }
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DomainError& e) {
        std::cerr << "domain error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 4;
    } catch (const InvariantError& e) {
        std::cerr << "invariant violation: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
