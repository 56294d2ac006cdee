#pragma once

#include "sidlab/net.hpp"

#include <vector>

namespace sidlab {

struct AdamState {
    std::vector<Mat> first_moment;
    std::vector<Mat> second_moment;
    long step_count = 0;
    double lr = 1e-3;
    double beta1 = 0.0;
    double beta2 = 0.999;
    double eps_stab = 1e-8;

    static AdamState for_params(const NetParams& p, double lr, double beta1, double beta2 = 0.999,
                                double eps = 1e-8);
    void validate() const;
};

// Bias-corrected Adam on every trainable tensor. Non-finite gradients abort the
// step with a NumericError naming the offending tensor; nothing is modified.
void adam_step(AdamState& state, NetParams& params, const std::vector<Mat>& grads);

double grad_norm(const std::vector<Mat>& grads);

}  // namespace sidlab
