#pragma once

#include "sidlab/denoiser.hpp"
#include "sidlab/flowmath.hpp"
#include "sidlab/toydata.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace sidlab {

struct SampleConfig {
    int K = 16;
    double gamma = 0.45;
    double t_init = 0.37;
    double s_lo = 30.0;
    double s_hi = 400.0;
    TimeSchedule schedule;
    int num_samples = 100;
    int batch_size = 100;
    uint64_t seed = 0;
    std::string mode = "student";  // student | teacher-denoise | teacher-ode
    // start the recursion from zeros (training convention) instead of an N(0, I) draw
    bool zero_init = false;
    int teacher_steps = 400;

    void validate() const;
    nlohmann::json to_json() const;
    static SampleConfig from_json(const nlohmann::json& j);
};

// Few-step recursion x_k = G(t_k x_{k-1} + gamma (1 - t_k) eps_k, t_k) over `grid`.
// The starting point is drawn before any step noise unless zero_init.
StructureBatch sample_few_step(const Denoiser& G, const StepGrid& grid, double gamma, bool zero_init,
                               const StructureBatch& shape, Rng& rng);
StructureBatch sample_few_step(const Denoiser& G, const SampleConfig& cfg, const StructureBatch& shape, Rng& rng);

// x = G(t_init z, t_init)
StructureBatch sample_one_step(const Denoiser& G, double t_init, const StructureBatch& shape, Rng& rng);

// teacher-denoise: the few-step recursion with the teacher over a teacher_steps grid.
// teacher-ode: explicit Euler on dx = v(x, t) dt from t = 0 (x ~ N(0, I)) along the
// log schedule s = 0 .. n_steps (clamped at t_max), then one x-prediction.
StructureBatch sample_teacher(const Denoiser& phi, const SampleConfig& cfg, const StructureBatch& shape, Rng& rng);

// Dispatch on cfg.mode / cfg.K.
StructureBatch generate(const Denoiser& model, const SampleConfig& cfg, const StructureBatch& shape, Rng& rng);

// Times along the teacher-ode path.
std::vector<double> ode_times(const TimeSchedule& sched, int steps);

}  // namespace sidlab
