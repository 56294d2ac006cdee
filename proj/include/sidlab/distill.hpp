#pragma once

#include "sidlab/adam.hpp"
#include "sidlab/checkpoint.hpp"
#include "sidlab/denoiser.hpp"
#include "sidlab/flowmath.hpp"
#include "sidlab/net.hpp"
#include "sidlab/toydata.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace sidlab {

struct DistillConfig {
    int K = 16;
    double alpha = 1.0;
    double t_init = 0.37;
    TimeSchedule schedule;  // carries t_min / t_max
    double s_lo = 30.0;
    double s_hi = 400.0;
    double lr_psi = 5e-5;
    double lr_theta = 5e-5;
    double beta1_psi = 0.0;
    double beta1_theta = 0.0;
    double beta2 = 0.999;
    double eps_stab = 1e-8;
    int batch_size = 64;
    int iterations = 1000;
    int psi_updates = 1;  // fake-score updates per generator update
    // literal reading of the weighting denominator: f_phi(x_g, t) instead of f_phi(x_t, t)
    bool omega_at_xg = false;
    // plateau stop on the probe metric (lower is better)
    int eval_every = 0;
    int plateau_patience = 5;
    double plateau_delta = 0.01;
    int checkpoint_every = 0;
    // hash theta/psi around every update and fail on cross-contamination
    bool check_alternation = false;
    uint64_t seed = 0;

    void validate() const;
    StepGrid grid() const { return make_step_grid(K, schedule, s_lo, s_hi); }
    nlohmann::json to_json() const;
    static DistillConfig from_json(const nlohmann::json& j);
};

struct TraceRow {
    long iteration = 0;
    double loss_psi = 0.0;
    double loss_theta = 0.0;
    double omega = 0.0;  // batch mean
    int k_psi = 0;
    int k_theta = 0;
    double t_psi = 0.0;  // batch mean
    double t_theta = 0.0;
    double grad_norm_psi = 0.0;
    double grad_norm_theta = 0.0;
    double probe = std::nan("");
};

struct DistillTrace {
    std::vector<TraceRow> rows;
    static std::string csv_header();
    static std::string csv_row(const TraceRow& r);
    void write_csv(const std::filesystem::path& path) const;
    void append_csv(const std::filesystem::path& path, size_t from) const;
};

// ---- losses

// (1/B) sum_b |f_psi - sg(x_g)|^2 / (N_b (1 - t_b)^2). UsageError when x_g can carry gradients.
Var fake_score_loss(Tape& tape, Var f_psi, Var x_g_stopped, const Vec& row_t, const Layout& layout);
double fake_score_loss(const Mat& f_psi, const Mat& x_g, const Vec& row_t, const StructureBatch& shape);

// (1 - t)^4 / (N t^2 max(|x_g - f_phi|_1, 1e-12)); `floored` reports the degenerate case.
double omega_weight(const Mat& x_g, const Mat& f_phi, double t, int N, bool* floored = nullptr);

// (1/B) sum_b c_b [(1 - alpha)|f_phi - f_psi|^2 + <f_phi - f_psi, f_psi - x_g>] with
// c_b = omega_b t_b^2 / (1 - t_b)^4 given per row.
Var generator_loss(Tape& tape, Var f_phi, Var f_psi, Var x_g, double alpha, const Vec& row_prefactor,
                   const Layout& layout);

// ---- uniform-step matching

// y = t x + (gamma (1 - t)) eps, shared by training and inference so that gamma = 1 agrees bitwise
Mat step_input(const Mat& x_prev, const Mat& eps, double t, double gamma);

// Unroll of the generator up to step k (1-based). Steps before k run without a
// graph; step k is recorded on `tape`. K = 1 uses G(t_init z) evaluated at t_init.
// Noise is drawn from `rng` one (rows x D) block per step, padding zeroed.
Var multi_step_generate(Tape& tape, const Denoiser& G, const StepGrid& grid, int k, double t_init,
                        const StructureBatch& shape, Rng& rng, bool trainable);

// ---- training loop

struct DistillState {
    NetParams theta;
    NetParams psi;
    AdamState adam_theta;
    AdamState adam_psi;
    Rng rng;
    long iteration = 0;
    DistillTrace trace;
    double best_probe = std::numeric_limits<double>::infinity();
    int stale_evals = 0;
    bool plateaued = false;

    static DistillState init(const DistillConfig& cfg, const NetParams& theta0, const NetParams& psi0);
    void to_checkpoint(Checkpoint& ck) const;
    static DistillState from_checkpoint(const Checkpoint& ck);
};

struct DistillHooks {
    // lower is better; used for trace snapshots and plateau stopping
    std::function<double(const NetParams& theta)> probe;
    // invoked every cfg.checkpoint_every iterations and on abort
    std::function<void(const DistillState&, const std::string& reason)> checkpoint;
};

// Runs iterations state.iteration .. cfg.iterations - 1 (or until plateau).
void distill_run(const DistillConfig& cfg, const Denoiser& phi, const TargetSpec& target, DistillState& state,
                 const DistillHooks& hooks = {});

}  // namespace sidlab
