#include "sidlab/flowmath.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sidlab {

void TimeSchedule::validate() const {
    if (!(p > 0.0)) throw ConfigError("schedule: p must be > 0");
    if (n_steps < 1) throw ConfigError("schedule: n_steps must be >= 1");
    if (!(t_min > 0.0 && t_min < t_max && t_max < 1.0))
        throw ConfigError("schedule: need 0 < t_min < t_max < 1");
}

double TimeSchedule::clamp(double t) const { return std::clamp(t, t_min, t_max); }

nlohmann::json TimeSchedule::to_json() const {
    return {{"p", p}, {"n_steps", n_steps}, {"t_min", t_min}, {"t_max", t_max}};
}

TimeSchedule TimeSchedule::from_json(const nlohmann::json& j) {
    TimeSchedule s;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() == "p") s.p = it->get<double>();
        else if (it.key() == "n_steps") s.n_steps = it->get<int>();
        else if (it.key() == "t_min") s.t_min = it->get<double>();
        else if (it.key() == "t_max") s.t_max = it->get<double>();
        else throw ConfigError("schedule: unknown key '" + it.key() + "'");
    }
    s.validate();
    return s;
}

double time_from_step(double s, const TimeSchedule& sched) {
    if (!(s >= 0.0 && s <= sched.n_steps))
        throw DomainError("time_from_step: s=" + std::to_string(s) + " outside [0, " +
                          std::to_string(sched.n_steps) + "]");
    return 1.0 - std::pow(10.0, -(s / sched.n_steps) * sched.p);
}

double step_from_time(double t, const TimeSchedule& sched) {
    const double t_top = 1.0 - std::pow(10.0, -sched.p);
    if (!(t >= 0.0 && t <= t_top)) throw DomainError("step_from_time: t outside the schedule range");
    return -std::log10(1.0 - t) * sched.n_steps / sched.p;
}

double sample_train_time(Rng& rng, const TimeSchedule& sched) {
    const double s = rng.uniform(0.0, static_cast<double>(sched.n_steps));
    return sched.clamp(time_from_step(s, sched));
}

StepGrid make_step_grid(int K, const TimeSchedule& sched, double s_lo, double s_hi) {
    if (K < 1) throw DomainError("make_step_grid: K must be >= 1");
    if (!(s_lo >= 0.0 && s_lo < s_hi && s_hi <= sched.n_steps))
        throw DomainError("make_step_grid: need 0 <= s_lo < s_hi <= n_steps");
    StepGrid g;
    g.K = K;
    if (K == 1) {
        g.s_values.push_back(s_hi);
    } else {
        for (int i = 0; i < K; ++i) g.s_values.push_back(s_lo + (s_hi - s_lo) * i / (K - 1));
    }
    for (double s : g.s_values) g.t_values.push_back(sched.clamp(time_from_step(s, sched)));
    return g;
}

namespace {

Vec guard(const Vec& row_t, const char* what) {
    Vec gap = (1.0 - row_t.array()).matrix();
    if ((gap.array() < kSingularityGap).any())
        throw DomainError(std::string(what) + ": t too close to 1 (1 - t < 1e-9)");
    return gap;
}

Vec constant_rows(Eigen::Index rows, double t) { return Vec::Constant(rows, t); }

}  // namespace

Mat interpolate(const Mat& x_d, const Mat& eps, double t) { return t * x_d + (1.0 - t) * eps; }

Mat interpolate(const Mat& x_d, const Mat& eps, const Vec& row_t) {
    if (x_d.rows() != eps.rows() || x_d.cols() != eps.cols()) throw UsageError("interpolate: shape mismatch");
    return row_t.asDiagonal() * x_d + (1.0 - row_t.array()).matrix().asDiagonal() * eps;
}

Mat x_pred_from_velocity(const Mat& x_t, const Mat& v, double t) { return x_t + (1.0 - t) * v; }

Mat x_pred_from_velocity(const Mat& x_t, const Mat& v, const Vec& row_t) {
    return x_t + (1.0 - row_t.array()).matrix().asDiagonal() * v;
}

Mat velocity_from_x_pred(const Mat& x_t, const Mat& f, double t) {
    return velocity_from_x_pred(x_t, f, constant_rows(x_t.rows(), t));
}

Mat velocity_from_x_pred(const Mat& x_t, const Mat& f, const Vec& row_t) {
    Vec gap = guard(row_t, "velocity_from_x_pred");
    return gap.cwiseInverse().asDiagonal() * (f - x_t);
}

Mat score_from_x_pred(const Mat& x_t, const Mat& f, double t) {
    return score_from_x_pred(x_t, f, constant_rows(x_t.rows(), t));
}

Mat score_from_x_pred(const Mat& x_t, const Mat& f, const Vec& row_t) {
    Vec gap = guard(row_t, "score_from_x_pred");
    Vec inv2 = gap.array().square().inverse().matrix();
    return inv2.asDiagonal() * (row_t.asDiagonal() * f - x_t);
}

}  // namespace sidlab
