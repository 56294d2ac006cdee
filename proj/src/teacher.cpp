#include "sidlab/teacher.hpp"

#include <cmath>

namespace sidlab {

void TeacherConfig::validate() const {
    if (!(lr > 0)) throw ConfigError("teacher: lr must be > 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("teacher: betas outside [0, 1)");
    if (!(eps_stab > 0)) throw ConfigError("teacher: eps_stab must be > 0");
    if (batch_size < 1) throw ConfigError("teacher: batch_size must be >= 1");
    if (steps < 0) throw ConfigError("teacher: steps must be >= 0");
    if (!(lr_final_frac > 0 && lr_final_frac <= 1)) throw ConfigError("teacher: lr_final_frac outside (0, 1]");
    if (time_sampling != "log" && time_sampling != "uniform")
        throw ConfigError("teacher: time_sampling must be 'log' or 'uniform'");
    schedule.validate();
    target.validate();
    if (arch.dim != target.dim()) throw ConfigError("teacher: arch.dim does not match the target dimension");
    if (arch.num_labels != target.num_labels())
        throw ConfigError("teacher: arch.num_labels must equal the number of target labels");
}

nlohmann::json TeacherConfig::to_json() const {
    return {{"arch", arch.to_json()},
            {"lr", lr},
            {"beta1", beta1},
            {"beta2", beta2},
            {"eps_stab", eps_stab},
            {"batch_size", batch_size},
            {"steps", steps},
            {"lr_final_frac", lr_final_frac},
            {"schedule", schedule.to_json()},
            {"time_sampling", time_sampling},
            {"target", target.to_json()},
            {"seed", seed}};
}

TeacherConfig TeacherConfig::from_json(const nlohmann::json& j) {
    TeacherConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "arch") c.arch = ArchSpec::from_json(*it);
        else if (k == "lr") c.lr = it->get<double>();
        else if (k == "beta1") c.beta1 = it->get<double>();
        else if (k == "beta2") c.beta2 = it->get<double>();
        else if (k == "eps_stab") c.eps_stab = it->get<double>();
        else if (k == "batch_size") c.batch_size = it->get<int>();
        else if (k == "steps") c.steps = it->get<int>();
        else if (k == "lr_final_frac") c.lr_final_frac = it->get<double>();
        else if (k == "schedule") c.schedule = TimeSchedule::from_json(*it);
        else if (k == "time_sampling") c.time_sampling = it->get<std::string>();
        else if (k == "target") c.target = TargetSpec::from_json(*it);
        else if (k == "seed") c.seed = it->get<uint64_t>();
        else throw ConfigError("teacher: unknown key '" + k + "'");
    }
    if (!(c.lr > 0)) throw ConfigError("teacher: lr must be > 0");
    if (c.time_sampling != "log" && c.time_sampling != "uniform")
        throw ConfigError("teacher: time_sampling must be 'log' or 'uniform'");
    return c;
}

Vec structure_mean_weights(const Layout& layout) {
    Vec w = Vec::Zero(layout.rows());
    for (int s = 0; s < layout.batch; ++s) {
        double n = 0.0;
        for (int i = 0; i < layout.max_len; ++i) n += layout.mask[s * layout.max_len + i];
        if (n == 0.0) throw DomainError("loss: structure " + std::to_string(s) + " has an empty mask");
        for (int i = 0; i < layout.max_len; ++i)
            w[s * layout.max_len + i] = layout.mask[s * layout.max_len + i] / (n * layout.batch);
    }
    return w;
}

double fm_loss(const Mat& v_pred, const Mat& x_d, const Mat& eps, const StructureBatch& shape) {
    if (v_pred.rows() != shape.rows() || x_d.rows() != shape.rows() || eps.rows() != shape.rows())
        throw UsageError("fm_loss: shape mismatch");
    Vec w = structure_mean_weights(Layout::of(shape));
    return ((v_pred - (x_d - eps)).rowwise().squaredNorm().array() * w.array()).sum();
}

Var fm_loss(Tape& tape, Var v_pred, const Mat& target, const Layout& layout) {
    return ops::weighted_sq_norm(tape, ops::sub(tape, v_pred, tape.constant(target)), structure_mean_weights(layout));
}

namespace {

Vec draw_times(const TeacherConfig& cfg, int n, Rng& rng) {
    Vec t(n);
    for (int i = 0; i < n; ++i)
        t[i] = cfg.time_sampling == "log" ? sample_train_time(rng, cfg.schedule)
                                          : rng.uniform(cfg.schedule.t_min, cfg.schedule.t_max);
    return t;
}

}  // namespace

TeacherResult train_teacher(const TeacherConfig& cfg, const TeacherHooks& hooks) {
    cfg.validate();
    TeacherResult res;
    res.params = init_net(cfg.arch, cfg.seed);
    res.adam = AdamState::for_params(res.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_stab);
    Rng rng(cfg.seed ^ 0x7ea7c4e5ULL);

    auto one_batch = [&](bool update) {
        StructureBatch xd = cfg.target.sample_data(cfg.batch_size, rng);
        Mat eps = rng.normal(xd.rows(), xd.dim);
        Vec mask = xd.mask_column();
        eps = mask.asDiagonal() * eps;
        Vec row_t = xd.broadcast(draw_times(cfg, xd.batch, rng));
        Mat xt = interpolate(xd.coords, eps, row_t);
        Layout layout = Layout::of(xd);
        Tape tape;
        Var v = net_velocity(tape, res.params, tape.constant(xt), row_t, layout, update);
        Var loss = fm_loss(tape, v, xd.coords - eps, layout);
        const double value = tape.scalar(loss);
        if (!std::isfinite(value)) throw NumericError("teacher: non-finite loss");
        if (update) {
            tape.backward(loss);
            adam_step(res.adam, res.params, tape.param_grads(res.params));
        }
        return value;
    };

    // loss of the initial network on a batch from its own stream
    {
        Rng saved = rng;
        res.init_loss = one_batch(false);
        rng = saved;
    }
    for (long step = 0; step < cfg.steps; ++step) {
        const double frac = cfg.steps > 1 ? static_cast<double>(step) / (cfg.steps - 1) : 0.0;
        res.adam.lr = cfg.lr * (1.0 - (1.0 - cfg.lr_final_frac) * frac);
        NetParams before = res.params;
        try {
            res.loss_history.push_back(one_batch(true));
        } catch (const NumericError& e) {
            if (hooks.on_abort) hooks.on_abort(step, before, e.what());
            throw;
        }
        res.steps_run = step + 1;
        if (hooks.every > 0 && hooks.on_progress && res.steps_run % hooks.every == 0)
            hooks.on_progress(res.steps_run, res.params);
    }
    return res;
}

nlohmann::json TeacherReport::to_json() const {
    nlohmann::json j = {{"velocity_mse", velocity_mse}, {"score_mse", score_mse}, {"bins", nlohmann::json::array()}};
    for (const auto& b : bins)
        j["bins"].push_back({{"t", b.t},
                             {"velocity_mse", b.velocity_mse},
                             {"score_mse", b.score_mse},
                             {"score_mse_via_xpred", b.score_mse_via_xpred}});
    return j;
}

TeacherReport teacher_validate(const Denoiser& phi, const MixtureSpec& oracle, const ValidationGrid& grid) {
    TeacherReport rep;
    Rng rng(grid.seed);
    for (double t : grid.t_values) {
        StructureBatch xd = sample_mixture(oracle, grid.points, rng);
        Mat xt = interpolate(xd.coords, rng.normal(xd.rows(), xd.dim), t);
        xd.labels.reset();
        Layout layout = Layout::of(xd);
        Vec row_t = Vec::Constant(xd.rows(), t);
        const double entries = static_cast<double>(xt.size());

        Mat v = phi.predict_velocity(xt, row_t, layout);
        Mat f = phi.predict(xt, row_t, layout);
        Mat v_true = analytic_mixture_velocity(oracle, xt, t);
        Mat s_true = analytic_mixture_score(oracle, xt, t);
        Mat s_direct = (t * v - xt) / (1.0 - t);

        TeacherBinReport b;
        b.t = t;
        b.velocity_mse = (v - v_true).squaredNorm() / entries;
        b.score_mse = (s_direct - s_true).squaredNorm() / entries;
        b.score_mse_via_xpred = (score_from_x_pred(xt, f, t) - s_true).squaredNorm() / entries;
        rep.bins.push_back(b);
        rep.velocity_mse += b.velocity_mse / static_cast<double>(grid.t_values.size());
        rep.score_mse += b.score_mse / static_cast<double>(grid.t_values.size());
    }
    return rep;
}

}  // namespace sidlab
