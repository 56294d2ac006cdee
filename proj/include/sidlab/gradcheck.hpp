#pragma once

#include "sidlab/net.hpp"

#include <functional>
#include <string>

namespace sidlab {

struct GradReport {
    double max_rel_error = 0.0;
    long worst_coordinate = -1;  // index into the flattened parameter vector
    std::string worst_tensor;
    double analytic = 0.0;
    double numeric = 0.0;
    long checked = 0;
    double tolerance = 0.0;
    bool passed = false;
};

// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

// A scalar loss recorded on a tape as a function of one parameter set.
using LossProgram = std::function<Var(Tape&, const NetParams&, bool trainable)>;

struct GradCheckOptions {
    double step = 1e-4;
    long max_coordinates = 2000;  // larger nets are checked on a seeded subset
    uint64_t seed = 0;
    // Mutation hook: multiplies the analytic gradient of tensor `corrupt_tensor` by (1 + corrupt_by).
    int corrupt_tensor = -1;
    double corrupt_by = 0.0;
};

// Analytic (tape) gradient versus a five-point central difference with step h.
GradReport check_gradients(const LossProgram& loss, const NetParams& params, double tolerance,
                           const GradCheckOptions& opt = {});

// Random batch + random quadratic readout through the network built from `arch`.
GradReport gradient_check(const ArchSpec& arch, double tolerance, const GradCheckOptions& opt = {});

}  // namespace sidlab
