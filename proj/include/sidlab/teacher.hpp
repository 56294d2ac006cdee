#pragma once

#include "sidlab/adam.hpp"
#include "sidlab/denoiser.hpp"
#include "sidlab/flowmath.hpp"
#include "sidlab/net.hpp"
#include "sidlab/toydata.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace sidlab {

struct TeacherConfig {
    ArchSpec arch;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_stab = 1e-8;
    int batch_size = 256;
    int steps = 2000;
    // learning rate decays linearly to lr * lr_final_frac over the run
    double lr_final_frac = 1.0;
    TimeSchedule schedule;
    // "log" follows the schedule; "uniform" draws t ~ U[t_min, t_max]
    std::string time_sampling = "log";
    TargetSpec target;
    uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static TeacherConfig from_json(const nlohmann::json& j);
};

// mean over structures of (1/N_b) * sum over real rows of |v - (x_d - eps)|^2
double fm_loss(const Mat& v_pred, const Mat& x_d, const Mat& eps, const StructureBatch& shape);
Var fm_loss(Tape& tape, Var v_pred, const Mat& target, const Layout& layout);

// Per-row weights mask / (B N_b); DomainError when a structure has no real rows.
Vec structure_mean_weights(const Layout& layout);

struct TeacherResult {
    NetParams params;
    AdamState adam;
    std::vector<double> loss_history;
    double init_loss = 0.0;
    long steps_run = 0;
};

struct TeacherHooks {
    // called after every `every` steps with the current parameters
    int every = 0;
    std::function<void(long step, const NetParams&)> on_progress;
    // called with the last finite parameters before a NumericError propagates
    std::function<void(long step, const NetParams&, const std::string& why)> on_abort;
};

TeacherResult train_teacher(const TeacherConfig& cfg, const TeacherHooks& hooks = {});

struct TeacherBinReport {
    double t = 0.0;
    double velocity_mse = 0.0;
    double score_mse = 0.0;
    // same quantity through score_from_x_pred of the x-prediction
    double score_mse_via_xpred = 0.0;
};

struct TeacherReport {
    std::vector<TeacherBinReport> bins;
    double velocity_mse = 0.0;  // averaged over bins
    double score_mse = 0.0;
    nlohmann::json to_json() const;
};

struct ValidationGrid {
    std::vector<double> t_values{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    int points = 2048;
    uint64_t seed = 12345;
};

// Errors are per-coordinate mean squares over points drawn from the time-t marginal.
TeacherReport teacher_validate(const Denoiser& phi, const MixtureSpec& oracle, const ValidationGrid& grid = {});

}  // namespace sidlab
