#pragma once

#include "sidlab/common.hpp"

#include <nlohmann/json.hpp>

#include <vector>

namespace sidlab {

// Log time schedule t(s) = 1 - 10^(-p s / n_steps) plus the clamp applied to
// every training and grid time.
struct TimeSchedule {
    double p = 2.0;
    int n_steps = 400;
    double t_min = 0.02;
    double t_max = 0.98;

    void validate() const;
    double clamp(double t) const;
    nlohmann::json to_json() const;
    static TimeSchedule from_json(const nlohmann::json& j);
};

double time_from_step(double s, const TimeSchedule& sched);
// Inverse of time_from_step on [0, 1 - 10^-p].
double step_from_time(double t, const TimeSchedule& sched);
// s ~ Unif[0, n_steps], t = clamp(time_from_step(s)).
double sample_train_time(Rng& rng, const TimeSchedule& sched);

struct StepGrid {
    std::vector<double> s_values;
    std::vector<double> t_values;
    int K = 0;
};

// K equally spaced step indices between s_lo and s_hi (both included for K >= 2,
// s_hi alone for K = 1), mapped through the schedule and clamped to [t_min, t_max].
StepGrid make_step_grid(int K, const TimeSchedule& sched, double s_lo = 30.0, double s_hi = 400.0);

// x_t = t x_d + (1 - t) eps
Mat interpolate(const Mat& x_d, const Mat& eps, double t);
Mat interpolate(const Mat& x_d, const Mat& eps, const Vec& row_t);

// f = x_t + (1 - t) v
Mat x_pred_from_velocity(const Mat& x_t, const Mat& v, double t);
Mat x_pred_from_velocity(const Mat& x_t, const Mat& v, const Vec& row_t);

// v = (f - x_t) / (1 - t); DomainError when 1 - t < 1e-9
Mat velocity_from_x_pred(const Mat& x_t, const Mat& f, double t);
Mat velocity_from_x_pred(const Mat& x_t, const Mat& f, const Vec& row_t);

// score = (t f - x_t) / (1 - t)^2; DomainError when 1 - t < 1e-9
Mat score_from_x_pred(const Mat& x_t, const Mat& f, double t);
Mat score_from_x_pred(const Mat& x_t, const Mat& f, const Vec& row_t);

constexpr double kSingularityGap = 1e-9;

}  // namespace sidlab
