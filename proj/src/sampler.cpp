#include "sidlab/sampler.hpp"

#include "sidlab/distill.hpp"

namespace sidlab {

void SampleConfig::validate() const {
    schedule.validate();
    if (K < 1) throw ConfigError("sample: K must be >= 1");
    if (!(gamma >= 0)) throw ConfigError("sample: gamma must be >= 0");
    if (!(t_init > 0 && t_init < 1)) throw ConfigError("sample: t_init outside (0, 1)");
    if (num_samples < 1 || batch_size < 1) throw ConfigError("sample: num_samples and batch_size must be >= 1");
    if (mode != "student" && mode != "teacher-denoise" && mode != "teacher-ode")
        throw ConfigError("sample: mode must be student, teacher-denoise or teacher-ode");
    if (teacher_steps < 1) throw ConfigError("sample: teacher_steps must be >= 1");
    if (!(s_lo >= 0 && s_lo < s_hi && s_hi <= schedule.n_steps)) throw ConfigError("sample: bad step grid bounds");
}

nlohmann::json SampleConfig::to_json() const {
    return {{"K", K},
            {"gamma", gamma},
            {"t_init", t_init},
            {"s_lo", s_lo},
            {"s_hi", s_hi},
            {"schedule", schedule.to_json()},
            {"num_samples", num_samples},
            {"batch_size", batch_size},
            {"seed", seed},
            {"mode", mode},
            {"zero_init", zero_init},
            {"teacher_steps", teacher_steps}};
}

SampleConfig SampleConfig::from_json(const nlohmann::json& j) {
    SampleConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "K") c.K = it->get<int>();
        else if (k == "gamma") c.gamma = it->get<double>();
        else if (k == "t_init") c.t_init = it->get<double>();
        else if (k == "s_lo") c.s_lo = it->get<double>();
        else if (k == "s_hi") c.s_hi = it->get<double>();
        else if (k == "schedule") c.schedule = TimeSchedule::from_json(*it);
        else if (k == "num_samples") c.num_samples = it->get<int>();
        else if (k == "batch_size") c.batch_size = it->get<int>();
        else if (k == "seed") c.seed = it->get<uint64_t>();
        else if (k == "mode") c.mode = it->get<std::string>();
        else if (k == "zero_init") c.zero_init = it->get<bool>();
        else if (k == "teacher_steps") c.teacher_steps = it->get<int>();
        else throw ConfigError("sample: unknown key '" + k + "'");
    }
    c.validate();
    return c;
}

namespace {

Mat masked_normal(const StructureBatch& shape, Rng& rng) {
    Mat e = rng.normal(shape.rows(), shape.dim);
    for (int r = 0; r < shape.rows(); ++r)
        if (!shape.mask[static_cast<size_t>(r)]) e.row(r).setZero();
    return e;
}

}  // namespace

StructureBatch sample_few_step(const Denoiser& G, const StepGrid& grid, double gamma, bool zero_init,
                               const StructureBatch& shape, Rng& rng) {
    Layout layout = Layout::of(shape);
    StructureBatch out = shape;
    Mat x = zero_init ? Mat::Zero(shape.rows(), shape.dim) : masked_normal(shape, rng);
    for (int k = 0; k < grid.K; ++k) {
        const double t = grid.t_values[static_cast<size_t>(k)];
        Mat y = step_input(x, masked_normal(shape, rng), t, gamma);
        x = G.predict(y, Vec::Constant(shape.rows(), t), layout);
    }
    out.coords = x;
    out.zero_padding();
    return out;
}

StructureBatch sample_few_step(const Denoiser& G, const SampleConfig& cfg, const StructureBatch& shape, Rng& rng) {
    return sample_few_step(G, make_step_grid(cfg.K, cfg.schedule, cfg.s_lo, cfg.s_hi), cfg.gamma, cfg.zero_init, shape,
                           rng);
}

StructureBatch sample_one_step(const Denoiser& G, double t_init, const StructureBatch& shape, Rng& rng) {
    StructureBatch out = shape;
    Mat z = masked_normal(shape, rng);
    out.coords = G.predict(t_init * z, Vec::Constant(shape.rows(), t_init), Layout::of(shape));
    out.zero_padding();
    return out;
}

std::vector<double> ode_times(const TimeSchedule& sched, int steps) {
    std::vector<double> t{0.0};
    for (int j = 1; j <= steps; ++j) {
        const double s = static_cast<double>(sched.n_steps) * j / steps;
        const double tj = std::min(time_from_step(s, sched), sched.t_max);
        if (tj > t.back()) t.push_back(tj);
    }
    return t;
}

StructureBatch sample_teacher(const Denoiser& phi, const SampleConfig& cfg, const StructureBatch& shape, Rng& rng) {
    if (cfg.mode == "teacher-denoise") {
        StepGrid grid = make_step_grid(cfg.teacher_steps, cfg.schedule, cfg.s_lo, cfg.s_hi);
        return sample_few_step(phi, grid, cfg.gamma, cfg.zero_init, shape, rng);
    }
    if (cfg.mode != "teacher-ode") throw UsageError("sample_teacher: mode must be teacher-denoise or teacher-ode");
    Layout layout = Layout::of(shape);
    const Eigen::Index rows = shape.rows();
    std::vector<double> ts = ode_times(cfg.schedule, cfg.teacher_steps);
    Mat x = masked_normal(shape, rng);
    for (size_t j = 0; j + 1 < ts.size(); ++j) {
        Mat v = phi.predict_velocity(x, Vec::Constant(rows, ts[j]), layout);
        x += (ts[j + 1] - ts[j]) * v;
    }
    StructureBatch out = shape;
    out.coords = phi.predict(x, Vec::Constant(rows, ts.back()), layout);
    out.zero_padding();
    return out;
}

StructureBatch generate(const Denoiser& model, const SampleConfig& cfg, const StructureBatch& shape, Rng& rng) {
    if (cfg.mode != "student") return sample_teacher(model, cfg, shape, rng);
    if (cfg.K == 1) return sample_one_step(model, cfg.t_init, shape, rng);
    return sample_few_step(model, cfg, shape, rng);
}

}  // namespace sidlab
