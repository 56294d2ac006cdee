#pragma once

#include "sidlab/net.hpp"
#include "sidlab/tape.hpp"
#include "sidlab/toydata.hpp"

#include <functional>
#include <memory>

namespace sidlab {

// Anything that maps (x_t, t) to an estimate of the clean sample. The teacher
// f_phi, the fake score network f_psi and the generator G_theta all go through
// this interface; G_theta(y) at step k is x_pred(y, t_k).
class Denoiser {
public:
    virtual ~Denoiser() = default;

    // Recorded x-prediction. Gradients always flow into `x` when it requires
    // them; into parameters only when `trainable`.
    virtual Var x_pred(Tape& tape, Var x, const Vec& row_t, const Layout& layout, bool trainable) const = 0;
    // Velocity; the default converts the x-prediction.
    virtual Var velocity(Tape& tape, Var x, const Vec& row_t, const Layout& layout, bool trainable) const;
    virtual const NetParams* params() const { return nullptr; }

    Mat predict(const Mat& x, const Vec& row_t, const Layout& layout) const;
    Mat predict_velocity(const Mat& x, const Vec& row_t, const Layout& layout) const;
};

// f = x + (1 - t) v_net(x, t)
class NetDenoiser final : public Denoiser {
public:
    explicit NetDenoiser(const NetParams& p) : p_(&p) {}
    Var x_pred(Tape& tape, Var x, const Vec& row_t, const Layout& layout, bool trainable) const override;
    Var velocity(Tape& tape, Var x, const Vec& row_t, const Layout& layout, bool trainable) const override;
    const NetParams* params() const override { return p_; }

private:
    const NetParams* p_;
};

// Exact posterior mean of a Gaussian-mixture target; stands in for a perfect teacher.
class AnalyticDenoiser final : public Denoiser {
public:
    explicit AnalyticDenoiser(MixtureSpec spec, bool conditional = false)
        : spec_(std::move(spec)), conditional_(conditional) {}
    Var x_pred(Tape& tape, Var x, const Vec& row_t, const Layout& layout, bool trainable) const override;
    const MixtureSpec& spec() const { return spec_; }

private:
    MixtureSpec spec_;
    bool conditional_;
};

// Test helper: value map plus optional vector-Jacobian product.
class LambdaDenoiser final : public Denoiser {
public:
    using Fn = std::function<Mat(const Mat& x, const Vec& row_t)>;
    using Vjp = std::function<Mat(const Mat& x, const Vec& row_t, const Mat& g)>;
    LambdaDenoiser(Fn f, Vjp vjp = {}) : f_(std::move(f)), vjp_(std::move(vjp)) {}
    Var x_pred(Tape& tape, Var x, const Vec& row_t, const Layout& layout, bool trainable) const override;

    static LambdaDenoiser identity();
    static LambdaDenoiser zero();

private:
    Fn f_;
    Vjp vjp_;
};

}  // namespace sidlab
