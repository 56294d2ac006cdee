#include "sidlab/distill.hpp"

#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

namespace sidlab {

void DistillConfig::validate() const {
    schedule.validate();
    if (K < 1) throw ConfigError("distill: K must be >= 1");
    if (!(alpha >= 0 && alpha <= 2)) throw ConfigError("distill: alpha outside [0, 2]");
    if (!(t_init > 0 && t_init < 1)) throw ConfigError("distill: t_init outside (0, 1)");
    if (!(lr_psi > 0 && lr_theta > 0)) throw ConfigError("distill: learning rates must be > 0");
    if (!(beta1_psi >= 0 && beta1_psi < 1 && beta1_theta >= 0 && beta1_theta < 1 && beta2 >= 0 && beta2 < 1))
        throw ConfigError("distill: betas outside [0, 1)");
    if (batch_size < 1 || iterations < 0 || psi_updates < 1) throw ConfigError("distill: bad loop sizes");
    if (eval_every < 0 || plateau_patience < 1 || !(plateau_delta >= 0) || checkpoint_every < 0)
        throw ConfigError("distill: bad plateau/checkpoint settings");
    if (!(s_lo >= 0 && s_lo < s_hi && s_hi <= schedule.n_steps)) throw ConfigError("distill: bad step grid bounds");
}

nlohmann::json DistillConfig::to_json() const {
    return {{"K", K},
            {"alpha", alpha},
            {"t_init", t_init},
            {"schedule", schedule.to_json()},
            {"s_lo", s_lo},
            {"s_hi", s_hi},
            {"lr_psi", lr_psi},
            {"lr_theta", lr_theta},
            {"beta1_psi", beta1_psi},
            {"beta1_theta", beta1_theta},
            {"beta2", beta2},
            {"eps_stab", eps_stab},
            {"batch_size", batch_size},
            {"iterations", iterations},
            {"psi_updates", psi_updates},
            {"omega_at_xg", omega_at_xg},
            {"eval_every", eval_every},
            {"plateau_patience", plateau_patience},
            {"plateau_delta", plateau_delta},
            {"checkpoint_every", checkpoint_every},
            {"check_alternation", check_alternation},
            {"seed", seed}};
}

DistillConfig DistillConfig::from_json(const nlohmann::json& j) {
    DistillConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "K") c.K = it->get<int>();
        else if (k == "alpha") c.alpha = it->get<double>();
        else if (k == "t_init") c.t_init = it->get<double>();
        else if (k == "schedule") c.schedule = TimeSchedule::from_json(*it);
        else if (k == "s_lo") c.s_lo = it->get<double>();
        else if (k == "s_hi") c.s_hi = it->get<double>();
        else if (k == "lr_psi") c.lr_psi = it->get<double>();
        else if (k == "lr_theta") c.lr_theta = it->get<double>();
        else if (k == "beta1_psi") c.beta1_psi = it->get<double>();
        else if (k == "beta1_theta") c.beta1_theta = it->get<double>();
        else if (k == "beta2") c.beta2 = it->get<double>();
        else if (k == "eps_stab") c.eps_stab = it->get<double>();
        else if (k == "batch_size") c.batch_size = it->get<int>();
        else if (k == "iterations") c.iterations = it->get<int>();
        else if (k == "psi_updates") c.psi_updates = it->get<int>();
        else if (k == "omega_at_xg") c.omega_at_xg = it->get<bool>();
        else if (k == "eval_every") c.eval_every = it->get<int>();
        else if (k == "plateau_patience") c.plateau_patience = it->get<int>();
        else if (k == "plateau_delta") c.plateau_delta = it->get<double>();
        else if (k == "checkpoint_every") c.checkpoint_every = it->get<int>();
        else if (k == "check_alternation") c.check_alternation = it->get<bool>();
        else if (k == "seed") c.seed = it->get<uint64_t>();
        else throw ConfigError("distill: unknown key '" + k + "'");
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------- trace

std::string DistillTrace::csv_header() {
    return "iteration,loss_psi,loss_theta,omega,k_psi,k_theta,t_psi,t_theta,grad_norm_psi,grad_norm_theta,probe";
}

std::string DistillTrace::csv_row(const TraceRow& r) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g,%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g", r.iteration,
                  r.loss_psi, r.loss_theta, r.omega, r.k_psi, r.k_theta, r.t_psi, r.t_theta, r.grad_norm_psi,
                  r.grad_norm_theta, r.probe);
    return buf;
}

void DistillTrace::write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw ConfigError("trace: cannot write " + path.string());
    os << csv_header() << '\n';
    for (const auto& r : rows) os << csv_row(r) << '\n';
}

void DistillTrace::append_csv(const std::filesystem::path& path, size_t from) const {
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream os(path, std::ios::app);
    if (!os) throw ConfigError("trace: cannot append to " + path.string());
    if (fresh) os << csv_header() << '\n';
    for (size_t i = from; i < rows.size(); ++i) os << csv_row(rows[i]) << '\n';
}

// ---------------------------------------------------------------- losses

namespace {

Vec masked_structure_count(const Layout& layout) {
    Vec n = Vec::Zero(layout.batch);
    for (int s = 0; s < layout.batch; ++s)
        for (int i = 0; i < layout.max_len; ++i) n[s] += layout.mask[s * layout.max_len + i];
    return n;
}

Vec fake_score_weights(const Vec& row_t, const Layout& layout) {
    Vec n = masked_structure_count(layout);
    Vec w = Vec::Zero(layout.rows());
    for (int s = 0; s < layout.batch; ++s) {
        if (n[s] == 0.0) throw DomainError("fake_score_loss: empty structure");
        for (int i = 0; i < layout.max_len; ++i) {
            const int r = s * layout.max_len + i;
            const double gap = 1.0 - row_t[r];
            w[r] = layout.mask[r] / (layout.batch * n[s] * gap * gap);
        }
    }
    return w;
}

Mat masked_noise(const StructureBatch& shape, Rng& rng) {
    Mat e = rng.normal(shape.rows(), shape.dim);
    for (int r = 0; r < shape.rows(); ++r)
        if (!shape.mask[static_cast<size_t>(r)]) e.row(r).setZero();
    return e;
}

}  // namespace

Var fake_score_loss(Tape& tape, Var f_psi, Var x_g_stopped, const Vec& row_t, const Layout& layout) {
    if (!tape.is_stopped(x_g_stopped))
        throw UsageError("fake_score_loss: generator output must be stop-gradiented");
    return ops::weighted_sq_norm(tape, ops::sub(tape, f_psi, x_g_stopped), fake_score_weights(row_t, layout));
}

double fake_score_loss(const Mat& f_psi, const Mat& x_g, const Vec& row_t, const StructureBatch& shape) {
    Vec w = fake_score_weights(row_t, Layout::of(shape));
    return ((f_psi - x_g).rowwise().squaredNorm().array() * w.array()).sum();
}

double omega_weight(const Mat& x_g, const Mat& f_phi, double t, int N, bool* floored) {
    double l1 = (x_g - f_phi).cwiseAbs().sum();
    const bool hit = !(l1 >= 1e-12);
    if (hit) {
        l1 = 1e-12;
        static std::atomic<bool> warned{false};
        if (!warned.exchange(true)) std::cerr << "warning: omega_weight: |x_g - f_phi|_1 below 1e-12, using the floor\n";
    }
    if (floored) *floored = hit;
    const double g = 1.0 - t;
    return g * g * g * g / (N * t * t * l1);
}

Var generator_loss(Tape& tape, Var f_phi, Var f_psi, Var x_g, double alpha, const Vec& row_prefactor,
                   const Layout& layout) {
    const Mat& a = tape.value(f_phi);
    if (a.rows() != tape.value(f_psi).rows() || a.cols() != tape.value(f_psi).cols() ||
        a.rows() != tape.value(x_g).rows() || a.cols() != tape.value(x_g).cols() || row_prefactor.size() != a.rows())
        throw UsageError("generator_loss: shape mismatch");
    Vec w = (row_prefactor.array() * layout.mask.array() / layout.batch).matrix();
    Var d = ops::sub(tape, f_phi, f_psi);
    Var cross = ops::weighted_dot(tape, d, ops::sub(tape, f_psi, x_g), w);
    if (alpha == 1.0) return cross;
    return ops::add(tape, ops::weighted_sq_norm(tape, d, ((1.0 - alpha) * w.array()).matrix()), cross);
}

// ---------------------------------------------------------------- generation

Mat step_input(const Mat& x_prev, const Mat& eps, double t, double gamma) {
    return t * x_prev + (gamma * (1.0 - t)) * eps;
}

Var multi_step_generate(Tape& tape, const Denoiser& G, const StepGrid& grid, int k, double t_init,
                        const StructureBatch& shape, Rng& rng, bool trainable) {
    if (k < 1 || k > grid.K) throw DomainError("multi_step_generate: k=" + std::to_string(k) + " outside [1, K]");
    Layout layout = Layout::of(shape);
    const Eigen::Index rows = shape.rows();
    if (grid.K == 1) {
        Mat z = masked_noise(shape, rng);
        return G.x_pred(tape, tape.constant(t_init * z), Vec::Constant(rows, t_init), layout, trainable);
    }
    Mat x = Mat::Zero(rows, shape.dim);
    for (int j = 1; j < k; ++j) {
        const double t = grid.t_values[static_cast<size_t>(j - 1)];
        Mat y = step_input(x, masked_noise(shape, rng), t, 1.0);
        x = G.predict(y, Vec::Constant(rows, t), layout);
    }
    const double t = grid.t_values[static_cast<size_t>(k - 1)];
    Mat y = step_input(x, masked_noise(shape, rng), t, 1.0);
    return G.x_pred(tape, tape.constant(y), Vec::Constant(rows, t), layout, trainable);
}

// ---------------------------------------------------------------- state

DistillState DistillState::init(const DistillConfig& cfg, const NetParams& theta0, const NetParams& psi0) {
    cfg.validate();
    require_same_arch(theta0, psi0);
    DistillState s;
    s.theta = theta0;
    s.psi = psi0;
    s.adam_theta = AdamState::for_params(s.theta, cfg.lr_theta, cfg.beta1_theta, cfg.beta2, cfg.eps_stab);
    s.adam_psi = AdamState::for_params(s.psi, cfg.lr_psi, cfg.beta1_psi, cfg.beta2, cfg.eps_stab);
    s.rng = Rng(cfg.seed ^ 0xd157111ULL);
    return s;
}

void DistillState::to_checkpoint(Checkpoint& ck) const {
    ck.step = iteration;
    ck.add_params("theta", theta);
    ck.add_params("psi", psi);
    ck.add_adam("adam_theta", adam_theta);
    ck.add_adam("adam_psi", adam_psi);
    ck.meta["rng"] = rng.state();
    ck.meta["iteration"] = iteration;
    ck.meta["best_probe"] = std::isfinite(best_probe) ? nlohmann::json(best_probe) : nlohmann::json(nullptr);
    ck.meta["stale_evals"] = stale_evals;
    ck.meta["plateaued"] = plateaued;
    Mat tr(static_cast<Eigen::Index>(trace.rows.size()), 11);
    for (size_t i = 0; i < trace.rows.size(); ++i) {
        const TraceRow& r = trace.rows[i];
        tr.row(static_cast<Eigen::Index>(i)) << static_cast<double>(r.iteration), r.loss_psi, r.loss_theta, r.omega,
            r.k_psi, r.k_theta, r.t_psi, r.t_theta, r.grad_norm_psi, r.grad_norm_theta, r.probe;
    }
    ck.add("trace", tr);
}

DistillState DistillState::from_checkpoint(const Checkpoint& ck) {
    DistillState s;
    s.theta = ck.params("theta");
    s.psi = ck.params("psi");
    s.adam_theta = ck.adam("adam_theta");
    s.adam_psi = ck.adam("adam_psi");
    s.rng.set_state(ck.meta.at("rng").get<std::string>());
    s.iteration = ck.meta.at("iteration").get<long>();
    const auto& bp = ck.meta.at("best_probe");
    s.best_probe = bp.is_null() ? std::numeric_limits<double>::infinity() : bp.get<double>();
    s.stale_evals = ck.meta.at("stale_evals").get<int>();
    s.plateaued = ck.meta.at("plateaued").get<bool>();
    const Mat& tr = ck.get("trace");
    for (Eigen::Index i = 0; i < tr.rows(); ++i) {
        TraceRow r;
        r.iteration = static_cast<long>(tr(i, 0));
        r.loss_psi = tr(i, 1);
        r.loss_theta = tr(i, 2);
        r.omega = tr(i, 3);
        r.k_psi = static_cast<int>(tr(i, 4));
        r.k_theta = static_cast<int>(tr(i, 5));
        r.t_psi = tr(i, 6);
        r.t_theta = tr(i, 7);
        r.grad_norm_psi = tr(i, 8);
        r.grad_norm_theta = tr(i, 9);
        r.probe = tr(i, 10);
        s.trace.rows.push_back(r);
    }
    return s;
}

// ---------------------------------------------------------------- training loop

namespace {

Vec draw_structure_times(const DistillConfig& cfg, int B, Rng& rng) {
    Vec t(B);
    for (int b = 0; b < B; ++b) t[b] = sample_train_time(rng, cfg.schedule);
    return t;
}

void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw NumericError(std::string("distill: non-finite ") + what);
}

}  // namespace

void distill_run(const DistillConfig& cfg, const Denoiser& phi, const TargetSpec& target, DistillState& st,
                 const DistillHooks& hooks) {
    cfg.validate();
    target.validate();
    require_same_arch(st.theta, st.psi);
    const StepGrid grid = cfg.grid();
    NetDenoiser G(st.theta);
    NetDenoiser fake(st.psi);
    Rng& rng = st.rng;

    while (st.iteration < cfg.iterations && !st.plateaued) {
        TraceRow row;
        row.iteration = st.iteration;
        const DistillState* snapshot_for_abort = &st;
        try {
            // fake score block
            for (int rep = 0; rep < cfg.psi_updates; ++rep) {
                const uint64_t theta_hash = cfg.check_alternation ? st.theta.fingerprint() : 0;
                StructureBatch shape = target.sample_shape(cfg.batch_size, rng);
                Layout layout = Layout::of(shape);
                const int k = rng.uniform_int(1, cfg.K);
                Mat x_g;
                {
                    Tape gen;
                    x_g = gen.value(multi_step_generate(gen, G, grid, k, cfg.t_init, shape, rng, false));
                }
                Vec t = draw_structure_times(cfg, shape.batch, rng);
                Vec row_t = shape.broadcast(t);
                Mat eps = masked_noise(shape, rng);
                Tape tape;
                Var xg = tape.stop_gradient(tape.constant(x_g));
                Var xt = tape.constant(interpolate(x_g, eps, row_t));
                Var f_psi = fake.x_pred(tape, xt, row_t, layout, true);
                Var loss = fake_score_loss(tape, f_psi, xg, row_t, layout);
                row.loss_psi = tape.scalar(loss);
                check_finite(row.loss_psi, "fake score loss");
                tape.backward(loss);
                auto grads = tape.param_grads(st.psi);
                row.grad_norm_psi = grad_norm(grads);
                adam_step(st.adam_psi, st.psi, grads);
                row.k_psi = k;
                row.t_psi = t.mean();
                if (cfg.check_alternation && st.theta.fingerprint() != theta_hash)
                    throw InvariantError("distill: fake score update changed the generator");
            }

            // generator block, fresh draws
            {
                const uint64_t psi_hash = cfg.check_alternation ? st.psi.fingerprint() : 0;
                StructureBatch shape = target.sample_shape(cfg.batch_size, rng);
                Layout layout = Layout::of(shape);
                const int k = rng.uniform_int(1, cfg.K);
                Tape tape;
                Var xg = multi_step_generate(tape, G, grid, k, cfg.t_init, shape, rng, true);
                Vec t = draw_structure_times(cfg, shape.batch, rng);
                Vec row_t = shape.broadcast(t);
                Mat eps = masked_noise(shape, rng);
                Mat noise_part = ((1.0 - row_t.array()).matrix().asDiagonal() * eps).eval();
                Var xt = ops::add(tape, ops::scale_rows(tape, xg, row_t), tape.constant(noise_part));
                Var f_phi = phi.x_pred(tape, xt, row_t, layout, false);
                Var f_psi = fake.x_pred(tape, xt, row_t, layout, false);

                const Mat& xgv = tape.value(xg);
                Mat fphi_w = cfg.omega_at_xg ? phi.predict(xgv, row_t, layout) : tape.value(f_phi);
                Vec prefactor(shape.rows());
                double omega_sum = 0.0;
                for (int b = 0; b < shape.batch; ++b) {
                    const int N = shape.lengths[static_cast<size_t>(b)];
                    const double tb = t[b];
                    const double om = omega_weight(xgv.middleRows(b * shape.max_len, N),
                                                   fphi_w.middleRows(b * shape.max_len, N), tb, N);
                    omega_sum += om;
                    const double g = 1.0 - tb;
                    prefactor.segment(b * shape.max_len, shape.max_len).setConstant(om * tb * tb / (g * g * g * g));
                }
                Var loss = generator_loss(tape, f_phi, f_psi, xg, cfg.alpha, prefactor, layout);
                row.loss_theta = tape.scalar(loss);
                check_finite(row.loss_theta, "generator loss");
                tape.backward(loss);
                auto grads = tape.param_grads(st.theta);
                row.grad_norm_theta = grad_norm(grads);
                adam_step(st.adam_theta, st.theta, grads);
                row.k_theta = k;
                row.t_theta = t.mean();
                row.omega = omega_sum / shape.batch;
                if (cfg.check_alternation && st.psi.fingerprint() != psi_hash)
                    throw InvariantError("distill: generator update changed the fake score network");
            }
        } catch (const NumericError& e) {
            if (hooks.checkpoint) hooks.checkpoint(*snapshot_for_abort, std::string("abort: ") + e.what());
            throw;
        }

        ++st.iteration;
        if (cfg.eval_every > 0 && hooks.probe && st.iteration % cfg.eval_every == 0) {
            row.probe = hooks.probe(st.theta);
            if (row.probe < st.best_probe - cfg.plateau_delta * std::abs(st.best_probe) ||
                !std::isfinite(st.best_probe)) {
                st.best_probe = row.probe;
                st.stale_evals = 0;
            } else if (++st.stale_evals >= cfg.plateau_patience) {
                st.plateaued = true;
            }
        }
        st.trace.rows.push_back(row);
        if (cfg.checkpoint_every > 0 && hooks.checkpoint && st.iteration % cfg.checkpoint_every == 0)
            hooks.checkpoint(st, "periodic");
    }
}

}  // namespace sidlab
