#include "sidlab/adam.hpp"

#include <cmath>
#include <string>

namespace sidlab {

AdamState AdamState::for_params(const NetParams& p, double lr, double beta1, double beta2, double eps) {
    AdamState s;
    for (const auto& t : p.tensors) {
        s.first_moment.push_back(Mat::Zero(t.rows(), t.cols()));
        s.second_moment.push_back(Mat::Zero(t.rows(), t.cols()));
    }
    s.lr = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps_stab = eps;
    s.validate();
    return s;
}

void AdamState::validate() const {
    if (!(lr > 0.0)) throw ConfigError("adam: lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("adam: beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam: beta2 must lie in [0, 1)");
    if (!(eps_stab > 0.0)) throw ConfigError("adam: eps must be > 0");
    if (step_count < 0) throw ConfigError("adam: negative step count");
}

void adam_step(AdamState& state, NetParams& params, const std::vector<Mat>& grads) {
    if (grads.size() != params.tensors.size() || state.first_moment.size() != params.tensors.size())
        throw UsageError("adam: gradient/state/parameter count mismatch");
    for (size_t i = 0; i < grads.size(); ++i) {
        if (grads[i].rows() != params.tensors[i].rows() || grads[i].cols() != params.tensors[i].cols())
            throw UsageError("adam: shape mismatch for " + params.names[i]);
        if (params.trainable[i] && !grads[i].allFinite())
            throw NumericError("adam: non-finite gradient in " + params.names[i] + ", step aborted");
    }
    const long step = state.step_count + 1;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(step));
    for (size_t i = 0; i < grads.size(); ++i) {
        if (!params.trainable[i]) continue;
        Mat& m = state.first_moment[i];
        Mat& v = state.second_moment[i];
        m = state.beta1 * m + (1.0 - state.beta1) * grads[i];
        v = state.beta2 * v + (1.0 - state.beta2) * grads[i].cwiseProduct(grads[i]);
        params.tensors[i].array() -=
            state.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps_stab);
    }
    state.step_count = step;
}

double grad_norm(const std::vector<Mat>& grads) {
    double s = 0.0;
    for (const auto& g : grads) s += g.squaredNorm();
    return std::sqrt(s);
}

}  // namespace sidlab
