#include "sidlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sidlab {

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

namespace {

double eval_loss(const LossProgram& loss, const NetParams& p) {
    Tape tape;
    return tape.scalar(loss(tape, p, false));
}

}  // namespace

GradReport check_gradients(const LossProgram& loss, const NetParams& params, double tolerance,
                           const GradCheckOptions& opt) {
    Tape tape;
    Var l = loss(tape, params, true);
    tape.backward(l);
    std::vector<Mat> grads = tape.param_grads(params);
    if (opt.corrupt_tensor >= 0 && opt.corrupt_tensor < static_cast<int>(grads.size()))
        grads[static_cast<size_t>(opt.corrupt_tensor)] *= (1.0 + opt.corrupt_by);

    // flattened coordinates of trainable tensors
    std::vector<long> coords;
    std::vector<std::pair<size_t, Eigen::Index>> where;
    long offset = 0;
    for (size_t i = 0; i < params.tensors.size(); ++i) {
        const Eigen::Index n = params.tensors[i].size();
        if (params.trainable[i])
            for (Eigen::Index k = 0; k < n; ++k) {
                coords.push_back(offset + k);
                where.emplace_back(i, k);
            }
        offset += n;
    }
    std::vector<size_t> order(coords.size());
    std::iota(order.begin(), order.end(), size_t{0});
    if (static_cast<long>(order.size()) > opt.max_coordinates) {
        Rng rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
        std::shuffle(order.begin(), order.end(), std::mt19937_64(rng.next_u64()));
        order.resize(static_cast<size_t>(opt.max_coordinates));
        std::sort(order.begin(), order.end());
    }

    GradReport rep;
    rep.tolerance = tolerance;
    NetParams work = params;
    const double h = opt.step;
    for (size_t o : order) {
        auto [ti, k] = where[o];
        double& slot = work.tensors[ti].data()[k];
        const double base = slot;
        slot = base + h;
        const double fp1 = eval_loss(loss, work);
        slot = base - h;
        const double fm1 = eval_loss(loss, work);
        slot = base + 2 * h;
        const double fp2 = eval_loss(loss, work);
        slot = base - 2 * h;
        const double fm2 = eval_loss(loss, work);
        slot = base;
        const double numeric = (8.0 * (fp1 - fm1) - (fp2 - fm2)) / (12.0 * h);
        const double analytic = grads[ti].data()[k];
        const double err = relative_error(analytic, numeric);
        ++rep.checked;
        if (err > rep.max_rel_error || rep.worst_coordinate < 0) {
            rep.max_rel_error = err;
            rep.worst_coordinate = coords[o];
            rep.worst_tensor = params.names[ti];
            rep.analytic = analytic;
            rep.numeric = numeric;
        }
    }
    rep.passed = rep.checked > 0 && rep.max_rel_error <= tolerance;
    return rep;
}

GradReport gradient_check(const ArchSpec& arch, double tolerance, const GradCheckOptions& opt) {
    Rng rng(opt.seed + 17);
    NetParams p = init_net(arch, opt.seed);
    // make biases and embeddings non-trivial so every tensor carries signal
    for (size_t i = 0; i < p.tensors.size(); ++i)
        if (p.names[i][0] == 'b')
            for (Eigen::Index k = 0; k < p.tensors[i].size(); ++k) p.tensors[i].data()[k] = 0.1 * rng.normal();

    std::vector<int> lengths;
    int max_len = 1;
    if (arch.window > 0 || arch.context || arch.position) {
        lengths = {5, 3, 6};
        max_len = 7;
    } else {
        lengths = {1, 1, 1, 1};
    }
    StructureBatch x = StructureBatch::zeros(lengths, max_len, arch.dim);
    x.coords = rng.normal(x.rows(), arch.dim);
    x.zero_padding();
    if (arch.num_labels > 0) {
        std::vector<int> labels;
        for (int s = 0; s < x.batch; ++s) labels.push_back(rng.uniform_int(0, arch.num_labels - 1));
        x.labels = labels;
    }
    Vec t(x.batch);
    for (int s = 0; s < x.batch; ++s) t[s] = rng.uniform(0.05, 0.95);
    const Layout layout = Layout::of(x);
    const Vec row_t = x.broadcast(t);
    const Mat readout = rng.normal(x.rows(), arch.dim);
    Vec row_w(x.rows());
    for (int r = 0; r < x.rows(); ++r) row_w[r] = rng.uniform(0.5, 1.5);

    LossProgram loss = [&](Tape& tape, const NetParams& params, bool trainable) {
        Var v = net_velocity(tape, params, tape.constant(x.coords), row_t, layout, trainable);
        Var lin = ops::weighted_dot(tape, v, tape.constant(readout), Vec::Ones(x.rows()));
        Var quad = ops::weighted_sq_norm(tape, v, row_w);
        return ops::add(tape, lin, ops::scale(tape, quad, 0.5));
    };
    return check_gradients(loss, p, tolerance, opt);
}

}  // namespace sidlab
