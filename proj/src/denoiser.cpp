#include "sidlab/denoiser.hpp"

#include "sidlab/flowmath.hpp"

namespace sidlab {

Var Denoiser::velocity(Tape& tape, Var x, const Vec& row_t, const Layout& layout, bool trainable) const {
    Var f = x_pred(tape, x, row_t, layout, trainable);
    Vec gap = (1.0 - row_t.array()).matrix();
    if ((gap.array() < kSingularityGap).any()) throw DomainError("denoiser: velocity requested at t ~ 1");
    return ops::scale_rows(tape, ops::sub(tape, f, x), gap.cwiseInverse());
}

Mat Denoiser::predict(const Mat& x, const Vec& row_t, const Layout& layout) const {
    Tape tape;
    return tape.value(x_pred(tape, tape.constant(x), row_t, layout, false));
}

Mat Denoiser::predict_velocity(const Mat& x, const Vec& row_t, const Layout& layout) const {
    Tape tape;
    return tape.value(velocity(tape, tape.constant(x), row_t, layout, false));
}

Var NetDenoiser::x_pred(Tape& tape, Var x, const Vec& row_t, const Layout& layout, bool trainable) const {
    Var v = net_velocity(tape, *p_, x, row_t, layout, trainable);
    return ops::add(tape, x, ops::scale_rows(tape, v, (1.0 - row_t.array()).matrix()));
}

Var NetDenoiser::velocity(Tape& tape, Var x, const Vec& row_t, const Layout& layout, bool trainable) const {
    return net_velocity(tape, *p_, x, row_t, layout, trainable);
}

Var AnalyticDenoiser::x_pred(Tape& tape, Var x, const Vec& row_t, const Layout& layout, bool) const {
    std::vector<int> labels;
    if (conditional_ && !layout.labels.empty()) {
        labels.resize(static_cast<size_t>(layout.rows()));
        for (int s = 0; s < layout.batch; ++s)
            for (int i = 0; i < layout.max_len; ++i)
                labels[static_cast<size_t>(s * layout.max_len + i)] = layout.labels[static_cast<size_t>(s)];
    }
    Mat f = layout.mask.asDiagonal() * mixture_posterior_mean(spec_, tape.value(x), row_t, labels);
    const int ix = x.id;
    const MixtureSpec* spec = &spec_;
    Vec mask = layout.mask;
    return tape.record(std::move(f), {ix}, [ix, spec, row_t, labels, mask](Tape& tp, int self) {
        Mat g = mask.asDiagonal() * tp.grad_ref(self);
        tp.grad_ref(ix) += mixture_posterior_mean_vjp(*spec, tp.value_of(ix), row_t, g, labels);
    });
}

Var LambdaDenoiser::x_pred(Tape& tape, Var x, const Vec& row_t, const Layout& layout, bool) const {
    Mat f = layout.mask.asDiagonal() * f_(tape.value(x), row_t);
    const int ix = x.id;
    Vjp vjp = vjp_;
    Vec mask = layout.mask;
    return tape.record(std::move(f), {ix}, [ix, vjp, row_t, mask](Tape& tp, int self) {
        if (!vjp) throw UsageError("LambdaDenoiser: no vector-Jacobian product supplied");
        tp.grad_ref(ix) += vjp(tp.value_of(ix), row_t, mask.asDiagonal() * tp.grad_ref(self));
    });
}

LambdaDenoiser LambdaDenoiser::identity() {
    return LambdaDenoiser([](const Mat& x, const Vec&) { return x; },
                          [](const Mat&, const Vec&, const Mat& g) { return g; });
}

LambdaDenoiser LambdaDenoiser::zero() {
    return LambdaDenoiser([](const Mat& x, const Vec&) { return Mat::Zero(x.rows(), x.cols()).eval(); },
                          [](const Mat& x, const Vec&, const Mat&) { return Mat::Zero(x.rows(), x.cols()).eval(); });
}

}  // namespace sidlab
